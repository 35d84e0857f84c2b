#pragma once

#include "ihf/common.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <string_view>

namespace ihf::io {

// Little-endian primitives; doubles and floats travel as their IEEE bits.

inline void write_u8(std::ostream& os, std::uint8_t v) { os.put(static_cast<char>(v)); }

template <typename U>
void write_uint(std::ostream& os, U v) {
  for (std::size_t b = 0; b < sizeof(U); ++b) os.put(static_cast<char>((v >> (8 * b)) & 0xff));
}

inline void write_u32(std::ostream& os, std::uint32_t v) { write_uint(os, v); }
inline void write_u64(std::ostream& os, std::uint64_t v) { write_uint(os, v); }
inline void write_i32(std::ostream& os, std::int32_t v) { write_uint(os, static_cast<std::uint32_t>(v)); }
inline void write_f64(std::ostream& os, double v) { write_uint(os, std::bit_cast<std::uint64_t>(v)); }
inline void write_f32(std::ostream& os, float v) { write_uint(os, std::bit_cast<std::uint32_t>(v)); }
inline void write_magic(std::ostream& os, std::string_view magic) { os.write(magic.data(), static_cast<std::streamsize>(magic.size())); }

class Reader {
 public:
  Reader(std::istream& is, std::string what) : is_(is), what_(std::move(what)) {}

  template <typename U>
  U read_uint() {
    U v = 0;
    for (std::size_t b = 0; b < sizeof(U); ++b) v |= static_cast<U>(static_cast<U>(byte()) << (8 * b));
    return v;
  }

  std::uint8_t u8() { return byte(); }
  std::uint32_t u32() { return read_uint<std::uint32_t>(); }
  std::uint64_t u64() { return read_uint<std::uint64_t>(); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  float f32() { return std::bit_cast<float>(u32()); }

  void expect_magic(std::string_view magic) {
    for (char c : magic)
      if (static_cast<char>(byte()) != c) throw Error(ErrorCode::CorruptModel, what_ + ": bad magic");
  }

  [[noreturn]] void fail(const std::string& msg) const { throw Error(ErrorCode::CorruptModel, what_ + ": " + msg); }

 private:
  std::uint8_t byte() {
    const int c = is_.get();
    if (c == std::char_traits<char>::eof()) throw Error(ErrorCode::CorruptModel, what_ + ": truncated data");
    return static_cast<std::uint8_t>(c);
  }

  std::istream& is_;
  std::string what_;
};

}  // namespace ihf::io
