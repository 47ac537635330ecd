#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "ddvkit/model.hpp"

namespace ddv {

inline constexpr std::string_view kModelFormat = "ddvkit-model/1";

std::string encode_model(const Model& model);
Model decode_model(std::string_view bytes);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace ddv
