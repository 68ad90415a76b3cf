#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "scnas/types.hpp"

// Raw little-endian binary primitives for checkpoints and volumes. Raw byte
// copies keep double round-trips bit-exact.
namespace scnas::io {

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::istream& is, void* p, std::size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("unexpected end of binary stream");
}

inline void write_i64(std::ostream& os, std::int64_t v) { write_bytes(os, &v, sizeof v); }
inline void write_u64(std::ostream& os, std::uint64_t v) { write_bytes(os, &v, sizeof v); }
inline void write_real(std::ostream& os, Real v) { write_bytes(os, &v, sizeof v); }
inline void write_f32(std::ostream& os, float v) { write_bytes(os, &v, sizeof v); }

inline std::int64_t read_i64(std::istream& is) {
  std::int64_t v;
  read_bytes(is, &v, sizeof v);
  return v;
}
inline std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v;
  read_bytes(is, &v, sizeof v);
  return v;
}
inline Real read_real(std::istream& is) {
  Real v;
  read_bytes(is, &v, sizeof v);
  return v;
}
inline float read_f32(std::istream& is) {
  float v;
  read_bytes(is, &v, sizeof v);
  return v;
}

inline void write_array(std::ostream& os, const Tensor::Storage& a) {
  write_i64(os, a.size());
  write_bytes(os, a.data(), sizeof(Real) * static_cast<std::size_t>(a.size()));
}

inline void read_array(std::istream& is, Tensor::Storage& a) {
  const std::int64_t n = read_i64(is);
  if (n != a.size()) throw std::runtime_error("binary array size mismatch");
  read_bytes(is, a.data(), sizeof(Real) * static_cast<std::size_t>(n));
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_i64(os, static_cast<std::int64_t>(s.size()));
  write_bytes(os, s.data(), s.size());
}

inline std::string read_string(std::istream& is) {
  const std::int64_t n = read_i64(is);
  if (n < 0 || n > (1 << 26)) throw std::runtime_error("binary string length out of range");
  std::string s(static_cast<std::size_t>(n), '\0');
  if (n > 0) read_bytes(is, s.data(), s.size());
  return s;
}

inline void expect_magic(std::istream& is, const std::string& magic, const std::string& what) {
  std::string got(magic.size(), '\0');
  is.read(got.data(), static_cast<std::streamsize>(magic.size()));
  if (!is || got != magic)
    throw std::runtime_error(what + ": bad or missing magic header");
}

}  // namespace scnas::io
