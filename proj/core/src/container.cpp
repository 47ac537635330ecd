#include "ddvkit/container.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ddvkit/error.hpp"

namespace ddv {

static_assert(std::endian::native == std::endian::little,
              "container encoding assumes a little-endian host");

void append_le_f32(std::string& out, std::span<const float> values) {
  const auto* p = reinterpret_cast<const char*>(values.data());
  out.append(p, values.size() * sizeof(float));
}

std::vector<float> read_le_f32(std::string_view bytes) {
  std::vector<float> v(bytes.size() / sizeof(float));
  if (!v.empty()) std::memcpy(v.data(), bytes.data(), v.size() * sizeof(float));
  return v;
}

std::string encode_container(const Container& c) {
  std::string out = c.header.dump();
  out.push_back('\n');
  const std::uint64_t blob_bytes = c.blob.size() * sizeof(float);
  char len[8];
  std::memcpy(len, &blob_bytes, sizeof(len));
  out.append(len, sizeof(len));
  append_le_f32(out, c.blob);
  return out;
}

Container decode_container(std::string_view bytes) {
  const auto newline = bytes.find('\n');
  if (newline == std::string_view::npos) {
    throw ParseError("container header is not terminated", bytes.size());
  }
  Container c;
  try {
    c.header = nlohmann::json::parse(bytes.substr(0, newline));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed JSON header: ") + e.what(), e.byte);
  }
  if (!c.header.is_object()) throw ParseError("container header is not a JSON object", 0);
  std::size_t pos = newline + 1;
  if (bytes.size() < pos + 8) throw ParseError("missing blob length prefix", bytes.size());
  std::uint64_t blob_bytes = 0;
  std::memcpy(&blob_bytes, bytes.data() + pos, 8);
  pos += 8;
  if (blob_bytes % sizeof(float) != 0) {
    throw ParseError("blob length is not a multiple of 4", pos - 8);
  }
  if (bytes.size() - pos < blob_bytes) {
    throw ParseError("blob truncated: expected " + std::to_string(blob_bytes) + " bytes, found " +
                         std::to_string(bytes.size() - pos),
                     bytes.size());
  }
  if (bytes.size() - pos > blob_bytes) {
    throw ParseError("trailing bytes after blob", pos + blob_bytes);
  }
  c.blob = read_le_f32(bytes.substr(pos, blob_bytes));
  return c;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

void write_container(const std::filesystem::path& path, const Container& container) {
  write_file(path, encode_container(container));
}

Container read_container(const std::filesystem::path& path) {
  return decode_container(read_file(path));
}

}  // namespace ddv
