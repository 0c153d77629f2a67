#include "mskin/solver.hpp"

namespace mskin {
}  // namespace mskin
