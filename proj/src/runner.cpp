#include "mskin/runner.hpp"

namespace mskin {
}  // namespace mskin
