#pragma once

// Minimal 8-bit RGB PNG encoder (fixed zlib level, no filtering) so the
// same pixels always produce the same bytes.

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ictd/io/container.hpp"

namespace ictd::io {

struct RgbImage {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, interleaved

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), rgb(w * h * 3, fill) {}

  std::uint8_t* at(std::size_t x, std::size_t y) { return rgb.data() + (y * width + x) * 3; }
  const std::uint8_t* at(std::size_t x, std::size_t y) const { return rgb.data() + (y * width + x) * 3; }
};

/// Quantizes a pixel in [-1, 1]: round(127.5 * (x + 1)) clamped to [0, 255].
inline std::uint8_t quantize(float x) {
  const double q = std::round(127.5 * (static_cast<double>(x) + 1.0));
  return static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
}

/// Converts a planar 3 x H x W image in [-1, 1] to interleaved 8-bit RGB.
inline RgbImage to_rgb(std::span<const float> chw, std::size_t h, std::size_t w) {
  if (chw.size() != 3 * h * w) throw dimension_error("to_rgb: buffer must hold 3 x H x W values");
  RgbImage img(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(x, y)[c] = quantize(chw[(c * h + y) * w + x]);
  return img;
}

namespace detail {

inline void put_be32(std::string& s, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void chunk(std::string& out, const char* type, const std::string& data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  put_be32(out, static_cast<std::uint32_t>(
                    crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()))));
}

}  // namespace detail

inline std::string encode_png(const RgbImage& img) {
  if (img.rgb.size() != img.width * img.height * 3) throw dimension_error("encode_png: bad buffer size");
  std::string raw;
  raw.reserve(img.height * (img.width * 3 + 1));
  for (std::size_t y = 0; y < img.height; ++y) {
    raw.push_back('\0');  // filter type: none
    raw.append(reinterpret_cast<const char*>(img.at(0, y)), img.width * 3);
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::string z(zlen, '\0');
  if (compress2(reinterpret_cast<Bytef*>(z.data()), &zlen, reinterpret_cast<const Bytef*>(raw.data()),
                static_cast<uLong>(raw.size()), 9) != Z_OK)
    throw io_error("encode_png: zlib compression failed");
  z.resize(zlen);

  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  detail::put_be32(ihdr, static_cast<std::uint32_t>(img.width));
  detail::put_be32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr += std::string("\x08\x02\x00\x00\x00", 5);  // 8-bit, RGB, deflate, no filter, no interlace
  detail::chunk(out, "IHDR", ihdr);
  detail::chunk(out, "IDAT", z);
  detail::chunk(out, "IEND", "");
  return out;
}

inline void write_png(const std::filesystem::path& path, const RgbImage& img) {
  write_text(path, encode_png(img));
}

}  // namespace ictd::io
