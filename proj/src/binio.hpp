#pragma once

// Little-endian scalar IO shared by the dataset and checkpoint formats.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>

namespace zsl::binio {

template <typename U>
void put_le(std::ostream& out, U value) {
  char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    buf[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  }
  out.write(buf, sizeof(U));
}

template <typename U>
bool get_le(std::istream& in, U& value) {
  unsigned char buf[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(U))) return false;
  value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(buf[i]) << (8 * i);
  }
  return true;
}

inline void put_f32(std::ostream& out, float v) {
  put_le(out, std::bit_cast<std::uint32_t>(v));
}
inline void put_f64(std::ostream& out, double v) {
  put_le(out, std::bit_cast<std::uint64_t>(v));
}
inline bool get_f32(std::istream& in, float& v) {
  std::uint32_t bits;
  if (!get_le(in, bits)) return false;
  v = std::bit_cast<float>(bits);
  return true;
}
inline bool get_f64(std::istream& in, double& v) {
  std::uint64_t bits;
  if (!get_le(in, bits)) return false;
  v = std::bit_cast<double>(bits);
  return true;
}

}  // namespace zsl::binio
