#pragma once

// Little-endian field readers/writers for the SMC1/SMCK formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "semcsi/error.hpp"

namespace semcsi::detail {

class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  template <class U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  const std::vector<char>& buffer() const { return buf_; }
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> buf) : buf_(std::move(buf)) {}
  static ByteReader from_file(const std::filesystem::path& path);

  std::string bytes(std::size_t n, const char* field) {
    need(n, field);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  template <class U>
  U uint(const char* field) {
    need(sizeof(U), field);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  float f32(const char* field) { return std::bit_cast<float>(uint<std::uint32_t>(field)); }
  double f64(const char* field) { return std::bit_cast<double>(uint<std::uint64_t>(field)); }

  std::size_t remaining() const { return buf_.size() - pos_; }
  bool at_end() const { return pos_ == buf_.size(); }
  void need(std::size_t n, const char* field) const {
    if (remaining() < n)
      throw FormatError(field, "truncated: need " + std::to_string(n) + " bytes, " + std::to_string(remaining()) +
                                   " left");
  }

 private:
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace semcsi::detail
