#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ssmic/error.hpp"

namespace ssmic::detail {

// Fixed-endianness byte packing for the on-disk formats.
class ByteWriter {
 public:
  explicit ByteWriter(bool big_endian) : big_(big_endian) {}

  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) { uint(v, 4); }
  void u64(std::uint64_t v) { uint(v, 8); }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v), 8); }
  void str32(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  std::vector<std::uint8_t>& data() { return out_; }

 private:
  void uint(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) {
      const int shift = big_ ? 8 * (n - 1 - i) : 8 * i;
      out_.push_back(static_cast<std::uint8_t>(v >> shift));
    }
  }

  bool big_;
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& in, bool big_endian, std::string name)
      : in_(in), big_(big_endian), name_(std::move(name)) {}

  // `what` names the field in truncation errors.
  const std::uint8_t* take(std::size_t n, const std::string& what) {
    require(n <= in_.size() - pos_, ErrorCode::kTruncated, name_ + " is truncated in " + what);
    const std::uint8_t* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint8_t u8(const std::string& what) { return *take(1, what); }
  std::uint32_t u32(const std::string& what) { return static_cast<std::uint32_t>(uint(4, what)); }
  std::uint64_t u64(const std::string& what) { return uint(8, what); }
  double f64(const std::string& what) { return std::bit_cast<double>(uint(8, what)); }
  std::string str32(const std::string& what) {
    const std::uint32_t n = u32(what);
    const auto* p = take(n, what);
    return std::string(reinterpret_cast<const char*>(p), n);
  }

  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::uint64_t uint(int n, const std::string& what) {
    const std::uint8_t* p = take(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      const int shift = big_ ? 8 * (n - 1 - i) : 8 * i;
      v |= static_cast<std::uint64_t>(p[i]) << shift;
    }
    return v;
  }

  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
  bool big_;
  std::string name_;
};

}  // namespace ssmic::detail
