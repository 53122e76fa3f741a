#pragma once

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "chemimg/error.hpp"
#include "chemimg/raster.hpp"

namespace chemimg {

/// One channel mapped to 8-bit grey: min -> 0, max -> 255. A constant channel is all black.
inline std::vector<std::uint8_t> channel_to_gray(const ChemImage& image, std::size_t channel) {
  if (channel >= image.channels) throw ConfigError("channel index out of range");
  float lo = 0.0f, hi = 0.0f;
  bool first = true;
  for (std::size_t i = 0; i < image.pixels(); ++i) {
    const float v = image.data[i * image.channels + channel];
    if (first || v < lo) lo = v;
    if (first || v > hi) hi = v;
    first = false;
  }
  std::vector<std::uint8_t> gray(image.pixels(), 0);
  if (hi > lo) {
    for (std::size_t i = 0; i < image.pixels(); ++i) {
      const double t = (double(image.data[i * image.channels + channel]) - lo) / (double(hi) - lo);
      gray[i] = static_cast<std::uint8_t>(std::clamp(std::lround(t * 255.0), 0L, 255L));
    }
  }
  return gray;
}

namespace detail {

inline void png_chunk(std::vector<std::uint8_t>& out, const char (&type)[5], const std::vector<std::uint8_t>& body) {
  auto be32 = [&out](std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>((v >> s) & 0xFF));
  };
  be32(static_cast<std::uint32_t>(body.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), body.begin(), body.end());
  const auto crc = ::crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
  be32(static_cast<std::uint32_t>(crc));
}

}  // namespace detail

/// Encodes an 8-bit greyscale PNG.
inline std::vector<std::uint8_t> encode_gray_png(const std::vector<std::uint8_t>& gray, std::size_t width,
                                                 std::size_t height) {
  std::vector<std::uint8_t> raw;
  raw.reserve(height * (width + 1));
  for (std::size_t r = 0; r < height; ++r) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), gray.begin() + static_cast<std::ptrdiff_t>(r * width),
               gray.begin() + static_cast<std::ptrdiff_t>((r + 1) * width));
  }
  uLongf packed_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> packed(packed_len);
  if (compress2(packed.data(), &packed_len, raw.data(), static_cast<uLong>(raw.size()), Z_BEST_COMPRESSION) != Z_OK)
    throw Error("zlib compression failed");
  packed.resize(packed_len);

  std::vector<std::uint8_t> png = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  std::vector<std::uint8_t> ihdr;
  for (std::uint32_t v : {static_cast<std::uint32_t>(width), static_cast<std::uint32_t>(height)})
    for (int s = 24; s >= 0; s -= 8) ihdr.push_back(static_cast<std::uint8_t>((v >> s) & 0xFF));
  ihdr.insert(ihdr.end(), {8, 0, 0, 0, 0});  // depth 8, greyscale, deflate, filter 0, no interlace
  detail::png_chunk(png, "IHDR", ihdr);
  detail::png_chunk(png, "IDAT", packed);
  detail::png_chunk(png, "IEND", {});
  return png;
}

inline void export_png_preview(const ChemImage& image, const std::string& path, std::size_t channel = 0) {
  const auto png = encode_gray_png(channel_to_gray(image, channel), image.width, image.height);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace chemimg
