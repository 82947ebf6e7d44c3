// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "oraclemarch/error.hpp"

namespace oraclemarch::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian and written with memcpy");

class ByteWriter {
 public:
  void u32(uint32_t v) { raw(&v, sizeof v); }
  void f32(float v) { raw(&v, sizeof v); }
  void bytes(std::string_view s) { raw(s.data(), s.size()); }
  void floats(std::span<const float> v) { raw(v.data(), v.size_bytes()); }

  const std::vector<char>& data() const { return buf_; }

 private:
  void raw(const void* p, size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const char> data) : data_(data) {}

  uint32_t u32() {
    uint32_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::string bytes(size_t n) {
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  void floats(std::span<float> out) { raw(out.data(), out.size_bytes()); }
  size_t remaining() const { return data_.size() - pos_; }

 private:
  void raw(void* p, size_t n) {
    require(pos_ + n <= data_.size(), ErrorCode::CorruptFile, "unexpected end of file");
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  std::span<const char> data_;
  size_t pos_ = 0;
};

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::span<const char> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::IoError, "cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  require(static_cast<bool>(out), ErrorCode::IoError, "write failed for " + path.string());
}

inline void write_floats(const std::filesystem::path& path, std::span<const float> v) {
  write_file(path, {reinterpret_cast<const char*>(v.data()), v.size_bytes()});
}

inline std::vector<float> read_floats(const std::filesystem::path& path, size_t expected) {
  const auto bytes = read_file(path);
  require(bytes.size() == expected * sizeof(float), ErrorCode::CorruptFile,
          path.string() + " has " + std::to_string(bytes.size()) + " bytes, expected " +
              std::to_string(expected * sizeof(float)));
  std::vector<float> v(expected);
  std::memcpy(v.data(), bytes.data(), bytes.size());
  return v;
}

}  // namespace oraclemarch::io
