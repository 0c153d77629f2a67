#include "mskin/config.hpp"

namespace mskin {
}  // namespace mskin
