#pragma once

// Minimal 8-bit RGB PNG writer (zlib-compressed IDAT, filter 0 scanlines).
// Enough for mask-overlay inspection images; not a general PNG library.

#include <zlib.h>

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "vilu/errors.hpp"

namespace vilu {

namespace detail {

inline void png_chunk(std::ofstream& f, const char type[4], const std::uint8_t* data,
                      std::uint32_t len) {
    auto be32 = [&](std::uint32_t v) {
        std::uint8_t b[4] = {std::uint8_t(v >> 24), std::uint8_t(v >> 16), std::uint8_t(v >> 8),
                             std::uint8_t(v)};
        f.write(reinterpret_cast<char*>(b), 4);
    };
    be32(len);
    f.write(type, 4);
    if (len) f.write(reinterpret_cast<const char*>(data), len);
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
    if (len) crc = crc32(crc, data, len);
    be32(std::uint32_t(crc));
}

}  // namespace detail

// rgb holds width*height*3 bytes, row-major top to bottom.
inline void write_png(const std::string& path, std::size_t width, std::size_t height,
                      const std::vector<std::uint8_t>& rgb) {
    if (rgb.size() != width * height * 3) throw FormatError("png: pixel buffer size mismatch");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("png: cannot write " + path);
    static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    f.write(reinterpret_cast<const char*>(sig), 8);

    std::uint8_t ihdr[13] = {};
    auto put32 = [&](std::uint8_t* p, std::uint32_t v) {
        p[0] = std::uint8_t(v >> 24);
        p[1] = std::uint8_t(v >> 16);
        p[2] = std::uint8_t(v >> 8);
        p[3] = std::uint8_t(v);
    };
    put32(ihdr, std::uint32_t(width));
    put32(ihdr + 4, std::uint32_t(height));
    ihdr[8] = 8;   // bit depth
    ihdr[9] = 2;   // truecolor
    detail::png_chunk(f, "IHDR", ihdr, 13);

    std::vector<std::uint8_t> raw((width * 3 + 1) * height);
    for (std::size_t y = 0; y < height; ++y) {
        raw[y * (width * 3 + 1)] = 0;  // filter: none
        std::copy(rgb.begin() + std::ptrdiff_t(y * width * 3),
                  rgb.begin() + std::ptrdiff_t((y + 1) * width * 3),
                  raw.begin() + std::ptrdiff_t(y * (width * 3 + 1) + 1));
    }
    uLongf bound = compressBound(uLong(raw.size()));
    std::vector<std::uint8_t> z(bound);
    if (compress2(z.data(), &bound, raw.data(), uLong(raw.size()), Z_DEFAULT_COMPRESSION) != Z_OK)
        throw FormatError("png: compression failed");
    detail::png_chunk(f, "IDAT", z.data(), std::uint32_t(bound));
    detail::png_chunk(f, "IEND", nullptr, 0);
}

}  // namespace vilu
