#include "hpl/version.hpp"

namespace hpl {

const char* version() { return "0.1.0"; }

}  // namespace hpl
