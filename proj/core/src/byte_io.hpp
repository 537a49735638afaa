#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "cpf/errors.hpp"

namespace cpf::detail {

/// Little-endian encoder.
class ByteWriter {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  void magic(const char (&tag)[5]) { bytes(tag, 4); }
  void u16(std::uint16_t v) { integer(v); }
  void u32(std::uint32_t v) { integer(v); }
  void u64(std::uint64_t v) { integer(v); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void string16(const std::string& s) {
    if (s.size() > UINT16_MAX) throw DataError("string too long to encode: " + s.substr(0, 32));
    u16(static_cast<std::uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void string32(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  std::vector<std::uint8_t>& buffer() noexcept { return out_; }
  std::vector<std::uint8_t> take() noexcept { return std::move(out_); }

 private:
  template <typename T>
  void integer(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      out_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
    }
  }

  std::vector<std::uint8_t> out_;
};

/// Little-endian decoder; every short read throws FormatError at the
/// offset where the missing data should have started.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> data, std::string what)
      : data_(data), what_(std::move(what)) {}

  std::uint64_t offset() const noexcept { return pos_; }
  bool at_end() const noexcept { return pos_ == data_.size(); }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

  void expect_magic(const char (&tag)[5]) {
    need(4, "magic");
    if (std::memcmp(data_.data() + pos_, tag, 4) != 0) {
      throw FormatError(what_ + ": bad magic, expected '" + std::string(tag) + "'", pos_);
    }
    pos_ += 4;
  }
  std::uint16_t u16(const char* field) { return integer<std::uint16_t>(field); }
  std::uint32_t u32(const char* field) { return integer<std::uint32_t>(field); }
  std::uint64_t u64(const char* field) { return integer<std::uint64_t>(field); }
  float f32(const char* field) { return std::bit_cast<float>(u32(field)); }
  double f64(const char* field) { return std::bit_cast<double>(u64(field)); }
  std::string string16(const char* field) { return take_string(u16(field), field); }
  std::string string32(const char* field) { return take_string(u32(field), field); }

  [[noreturn]] void fail(const std::string& message, std::uint64_t at) const {
    throw FormatError(what_ + ": " + message, at);
  }

 private:
  void need(std::size_t n, const char* field) const {
    if (data_.size() - pos_ < n) {
      throw FormatError(what_ + ": truncated while reading " + field, pos_);
    }
  }
  template <typename T>
  T integer(const char* field) {
    need(sizeof(T), field);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<T>(data_[pos_ + i]) << (8 * i));
    }
    pos_ += sizeof(T);
    return v;
  }
  std::string take_string(std::size_t n, const char* field) {
    need(n, field);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::span<const std::uint8_t> data_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace cpf::detail
