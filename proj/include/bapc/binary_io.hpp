#pragma once

// Little-endian byte encoding shared by the archive and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace bapc::io {

class ByteWriter {
 public:
  void tag(std::string_view four) { bytes_.insert(bytes_.end(), four.begin(), four.end()); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void str(std::string_view s) {
    u32(checked_u32(s.size(), "string length"));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void f32s(std::span<const float> values) {
    for (float v : values) f32(v);
  }

  static std::uint32_t checked_u32(std::size_t n, const char* what) {
    if (n > 0xffffffffu) throw std::length_error(std::string(what) + " exceeds 32 bits");
    return static_cast<std::uint32_t>(n);
  }

  const std::vector<unsigned char>& bytes() const { return bytes_; }
  std::vector<unsigned char> take() { return std::move(bytes_); }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  ByteReader(std::span<const unsigned char> bytes, std::string context)
      : bytes_(bytes), context_(std::move(context)) {}

  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void expect_tag(std::string_view four) {
    need(4, "magic");
    if (std::memcmp(bytes_.data() + pos_, four.data(), 4) != 0) {
      fail("bad magic (expected '" + std::string(four) + "')");
    }
    pos_ += 4;
  }
  std::uint32_t u32(const char* what = "u32") {
    need(4, what);
    const unsigned char* p = bytes_.data() + pos_;
    pos_ += 4;
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }
  std::int32_t i32(const char* what = "i32") { return static_cast<std::int32_t>(u32(what)); }
  float f32(const char* what = "f32") { return std::bit_cast<float>(u32(what)); }
  std::string str(const char* what = "string") {
    const std::uint32_t n = u32(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void f32s(std::span<float> out, const char* what = "values") {
    need(4 * out.size(), what);
    for (float& v : out) v = f32(what);
  }

  [[noreturn]] void fail(const std::string& message) const {
    throw std::runtime_error(context_ + ": " + message + " at byte " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (remaining() < n) fail(std::string("truncated ") + what);
  }

  std::span<const unsigned char> bytes_;
  std::string context_;
  std::size_t pos_ = 0;
};

std::vector<unsigned char> read_file(const std::filesystem::path& path);
// Writes to a temporary sibling and renames, so readers never see a partial file.
void write_file(const std::filesystem::path& path, std::span<const unsigned char> bytes);

}  // namespace bapc::io
