#pragma once

// Little-endian primitives shared by the MVST / MVNN / MVEM file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "mvembed/error.hpp"

namespace mvembed::io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

inline void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_f32(std::ostream& out, float v) {
    write_u32(out, std::bit_cast<std::uint32_t>(v));
}

inline void write_magic(std::ostream& out, std::string_view magic) {
    out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void write_string(std::ostream& out, std::string_view s) {
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void read_exact(std::istream& in, void* dst, std::size_t n, std::string_view what) {
    in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
        throw FormatError("truncated file while reading " + std::string(what));
}

inline std::uint32_t read_u32(std::istream& in, std::string_view what) {
    unsigned char b[4];
    read_exact(in, b, 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline float read_f32(std::istream& in, std::string_view what) {
    return std::bit_cast<float>(read_u32(in, what));
}

inline void expect_magic(std::istream& in, std::string_view magic) {
    std::string got(magic.size(), '\0');
    read_exact(in, got.data(), got.size(), "magic");
    if (got != magic)
        throw FormatError("bad magic: expected '" + std::string(magic) + "'");
}

inline std::string read_string(std::istream& in, std::string_view what, std::uint32_t max_len = 1u << 20) {
    const auto n = read_u32(in, what);
    if (n > max_len) throw FormatError("implausible string length in " + std::string(what));
    std::string s(n, '\0');
    read_exact(in, s.data(), n, what);
    return s;
}

} // namespace mvembed::io
