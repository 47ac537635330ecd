#pragma once

#include <string_view>

namespace ddv {

std::string_view tool_version();

}  // namespace ddv
