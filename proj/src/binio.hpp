#pragma once

// Little-endian primitive I/O shared by the model and pattern containers.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "bdscan/errors.hpp"

namespace bdscan::detail {

template <class UInt>
void put_le(std::ostream& os, UInt v) {
    std::array<char, sizeof(UInt)> b{};
    for (std::size_t i = 0; i < sizeof(UInt); ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b.data(), b.size());
}

template <class UInt>
UInt get_le(std::istream& is, const std::string& what) {
    std::array<unsigned char, sizeof(UInt)> b{};
    if (!is.read(reinterpret_cast<char*>(b.data()), b.size()))
        throw FormatError("truncated file while reading " + what);
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= UInt(b[i]) << (8 * i);
    return v;
}

inline void put_f32(std::ostream& os, float f) { put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(f)); }
inline float get_f32(std::istream& is, const std::string& what) {
    return std::bit_cast<float>(get_le<std::uint32_t>(is, what));
}
inline void put_f64(std::ostream& os, double d) { put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(d)); }
inline double get_f64(std::istream& is, const std::string& what) {
    return std::bit_cast<double>(get_le<std::uint64_t>(is, what));
}

inline void expect_magic(std::istream& is, const char (&magic)[5], const std::string& what) {
    char got[4] = {};
    if (!is.read(got, 4)) throw FormatError("truncated " + what + " header");
    if (std::memcmp(got, magic, 4) != 0) throw FormatError("not a " + what + " file: bad magic bytes");
}

}  // namespace bdscan::detail
