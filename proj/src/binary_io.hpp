#pragma once

// Little-endian byte packing shared by the dataset and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "stratmoe/error.hpp"

namespace stratmoe::detail {

class ByteWriter {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }

  template <typename UInt>
  void uint(UInt value) {
    for (std::size_t i = 0; i < sizeof(UInt); ++i)
      out_.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
  }

  void f64(double value) { uint(std::bit_cast<std::uint64_t>(value)); }

  void f64s(std::span<const double> values) {
    out_.reserve(out_.size() + 8 * values.size());
    for (double v : values) f64(v);
  }

  void string(const std::string& s) {
    uint(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n)
      throw FormatError(FormatErrorKind::kTruncated, std::string("unexpected end of file reading ") + what);
  }

  std::span<const std::uint8_t> bytes(std::size_t n, const char* what) {
    need(n, what);
    auto out = in_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  template <typename UInt>
  UInt uint(const char* what) {
    need(sizeof(UInt), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += sizeof(UInt);
    return static_cast<UInt>(v);
  }

  double f64(const char* what) { return std::bit_cast<double>(uint<std::uint64_t>(what)); }

  std::string string(const char* what) {
    const auto len = uint<std::uint32_t>(what);
    auto raw = bytes(len, what);
    return std::string(raw.begin(), raw.end());
  }

  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace stratmoe::detail
