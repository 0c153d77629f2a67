#pragma once

namespace mskin {
}  // namespace mskin
