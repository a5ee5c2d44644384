#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ndarchive/error.hpp"

namespace ndarchive::binio {

// Little-endian writer over a byte buffer.
class Writer {
 public:
  void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void raw(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

  template <typename T>
  void uint(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u8(std::uint8_t v) { uint(v); }
  void u16(std::uint16_t v) { uint(v); }
  void u32(std::uint32_t v) { uint(v); }
  void u64(std::uint64_t v) { uint(v); }
  void i64(std::int64_t v) { uint(static_cast<std::uint64_t>(v)); }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }

  const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> data, std::string what) : data_(data), what_(std::move(what)) {}

  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  template <typename T>
  T uint() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(data_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }
  std::uint8_t u8() { return uint<std::uint8_t>(); }
  std::uint16_t u16() { return uint<std::uint16_t>(); }
  std::uint32_t u32() { return uint<std::uint32_t>(); }
  std::uint64_t u64() { return uint<std::uint64_t>(); }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = u32();
    auto b = bytes(n);
    return {b.begin(), b.end()};
  }

  void magic(std::string_view expected) {
    auto b = bytes(expected.size());
    if (!std::equal(b.begin(), b.end(), expected.begin()))
      fail(ErrorKind::invalid_input, what_ + ": bad magic (expected " + std::string(expected) + ")");
  }

  bool done() const noexcept { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) fail(ErrorKind::invalid_input, what_ + ": truncated");
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::string what_;
};

}  // namespace ndarchive::binio
