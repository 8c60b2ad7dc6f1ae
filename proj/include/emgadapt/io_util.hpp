#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "emgadapt/errors.hpp"

namespace emg::io {

// CRC-32 (IEEE 802.3 polynomial, same as zlib's crc32).
uint32_t crc32(const void* data, size_t len, uint32_t seed = 0);

// Little-endian primitives. The toolchain targets little-endian hosts; the
// helpers keep the on-disk contract explicit.
void write_u16(std::ostream& os, uint16_t v);
void write_u32(std::ostream& os, uint32_t v);
void write_f32(std::ostream& os, float v);
void write_bytes(std::ostream& os, const void* p, size_t n);

uint16_t read_u16(std::istream& is);
uint32_t read_u32(std::istream& is);
void read_bytes(std::istream& is, void* p, size_t n, const std::string& what);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

} // namespace emg::io
