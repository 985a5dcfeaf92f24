#pragma once

// Little-endian binary file helpers shared by the checkpoint writers.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>

#include "genrec/errors.hpp"

namespace genrec::binio {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_write(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot open " + path + " for writing");
  return f;
}

inline FilePtr open_read(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open " + path);
  return f;
}

inline void write_u32(std::FILE* f, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  if (std::fwrite(b, 1, 4, f) != 4) throw IoError("short write");
}

inline void write_u64(std::FILE* f, uint64_t v) {
  write_u32(f, static_cast<uint32_t>(v));
  write_u32(f, static_cast<uint32_t>(v >> 32));
}

inline void write_f32(std::FILE* f, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(f, bits);
}

inline void write_str(std::FILE* f, const std::string& s) {
  write_u32(f, static_cast<uint32_t>(s.size()));
  if (!s.empty() && std::fwrite(s.data(), 1, s.size(), f) != s.size())
    throw IoError("short write");
}

inline uint32_t read_u32(std::FILE* f) {
  unsigned char b[4];
  if (std::fread(b, 1, 4, f) != 4) throw IoError("short read");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

inline uint64_t read_u64(std::FILE* f) {
  uint64_t lo = read_u32(f);
  uint64_t hi = read_u32(f);
  return lo | (hi << 32);
}

inline float read_f32(std::FILE* f) {
  uint32_t bits = read_u32(f);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline std::string read_str(std::FILE* f) {
  uint32_t n = read_u32(f);
  std::string s(n, '\0');
  if (n > 0 && std::fread(s.data(), 1, n, f) != n) throw IoError("short read");
  return s;
}

}  // namespace genrec::binio
