#include "ddvkit/version.hpp"

namespace ddv {

std::string_view tool_version() { return DDVKIT_VERSION; }

}  // namespace ddv
