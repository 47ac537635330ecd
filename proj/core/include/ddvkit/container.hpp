#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ddv {

/// On-disk container shared by model, probe-set and fingerprint files:
///
///   <compact JSON header> '\n'
///   <u64 little-endian byte length of the blob>
///   <blob: little-endian float32 values>
struct Container {
  nlohmann::json header;
  std::vector<float> blob;
};

std::string encode_container(const Container& container);
// Throws ParseError carrying the offending byte offset.
Container decode_container(std::string_view bytes);

void write_container(const std::filesystem::path& path, const Container& container);
Container read_container(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

void append_le_f32(std::string& out, std::span<const float> values);
std::vector<float> read_le_f32(std::string_view bytes);

}  // namespace ddv
