#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace perfbench {

inline void put_u8(std::vector<uint8_t>& out, uint8_t v) { out.push_back(v); }

inline void put_be16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

inline void put_be32(std::vector<uint8_t>& out, uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) {
    out.push_back(static_cast<uint8_t>(v >> shift));
  }
}

inline void put_be64(std::vector<uint8_t>& out, uint64_t v) {
  for (int shift = 56; shift >= 0; shift -= 8) {
    out.push_back(static_cast<uint8_t>(v >> shift));
  }
}

inline void put_zeros(std::vector<uint8_t>& out, std::size_t n) {
  out.insert(out.end(), n, 0);
}

inline uint16_t get_be16(std::span<const uint8_t> b, std::size_t off) {
  return static_cast<uint16_t>((b[off] << 8) | b[off + 1]);
}

inline uint32_t get_be32(std::span<const uint8_t> b, std::size_t off) {
  return (uint32_t{b[off]} << 24) | (uint32_t{b[off + 1]} << 16) |
         (uint32_t{b[off + 2]} << 8) | uint32_t{b[off + 3]};
}

inline uint64_t get_be64(std::span<const uint8_t> b, std::size_t off) {
  return (uint64_t{get_be32(b, off)} << 32) | get_be32(b, off + 4);
}

inline void set_be16(std::span<uint8_t> b, std::size_t off, uint16_t v) {
  b[off] = static_cast<uint8_t>(v >> 8);
  b[off + 1] = static_cast<uint8_t>(v);
}

inline void set_be32(std::span<uint8_t> b, std::size_t off, uint32_t v) {
  b[off] = static_cast<uint8_t>(v >> 24);
  b[off + 1] = static_cast<uint8_t>(v >> 16);
  b[off + 2] = static_cast<uint8_t>(v >> 8);
  b[off + 3] = static_cast<uint8_t>(v);
}

inline void set_be64(std::span<uint8_t> b, std::size_t off, uint64_t v) {
  set_be32(b, off, static_cast<uint32_t>(v >> 32));
  set_be32(b, off + 4, static_cast<uint32_t>(v));
}

}  // namespace perfbench
