#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "ctxducer/errors.hpp"

// Little-endian primitives shared by the codebook, feature and checkpoint formats.
namespace ctxducer::binio {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    std::array<char, 4> b{};
    for (int i = 0; i < 4; ++i) {
        b[i] = static_cast<char>((v >> (8 * i)) & 0xffU);
    }
    os.write(b.data(), b.size());
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
    std::array<char, 8> b{};
    for (int i = 0; i < 8; ++i) {
        b[i] = static_cast<char>((v >> (8 * i)) & 0xffU);
    }
    os.write(b.data(), b.size());
}

inline void write_f64(std::ostream& os, double v) { write_u64(os, std::bit_cast<std::uint64_t>(v)); }
inline void write_f32(std::ostream& os, float v) { write_u32(os, std::bit_cast<std::uint32_t>(v)); }

inline void write_magic(std::ostream& os, std::string_view magic) {
    os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void read_exact(std::istream& is, char* dst, std::size_t n, std::string_view what) {
    is.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) {
        throw FormatError("truncated " + std::string(what));
    }
}

inline std::uint32_t read_u32(std::istream& is, std::string_view what) {
    std::array<unsigned char, 4> b{};
    read_exact(is, reinterpret_cast<char*>(b.data()), b.size(), what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) {
        v = (v << 8) | b[i];
    }
    return v;
}

inline std::uint64_t read_u64(std::istream& is, std::string_view what) {
    std::array<unsigned char, 8> b{};
    read_exact(is, reinterpret_cast<char*>(b.data()), b.size(), what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) {
        v = (v << 8) | b[i];
    }
    return v;
}

inline double read_f64(std::istream& is, std::string_view what) { return std::bit_cast<double>(read_u64(is, what)); }
inline float read_f32(std::istream& is, std::string_view what) { return std::bit_cast<float>(read_u32(is, what)); }

inline void expect_magic(std::istream& is, std::string_view magic, std::string_view what) {
    std::string got(magic.size(), '\0');
    read_exact(is, got.data(), got.size(), what);
    if (got != magic) {
        throw FormatError("bad magic in " + std::string(what) + ": expected " + std::string(magic));
    }
}

inline void expect_version(std::istream& is, std::uint32_t version, std::string_view what) {
    const auto v = read_u32(is, what);
    if (v != version) {
        throw FormatError("unsupported " + std::string(what) + " version " + std::to_string(v));
    }
}

inline void expect_eof(std::istream& is, std::string_view what) {
    if (is.peek() != std::char_traits<char>::eof()) {
        throw FormatError("trailing bytes in " + std::string(what));
    }
}

} // namespace ctxducer::binio
