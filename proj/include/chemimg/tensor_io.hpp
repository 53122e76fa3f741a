#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "chemimg/error.hpp"
#include "chemimg/raster.hpp"

// CIMG layout, all integers little-endian:
//   0..3   magic "CIMG"
//   4      version (1)
//   5      dtype (1 = float32)
//   6      layout (1 = N,H,W,C row-major, C fastest)
//   7      reserved (0)
//   8..11  rank (4)
//   12..27 dims N, H, W, C as u32
//   28..   N*H*W*C float32 values

namespace chemimg {

namespace io {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                                 static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(b.data(), 4);
}

inline std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw FormatError("unexpected end of file");
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) | (std::uint32_t{b[3]} << 24);
}

inline void put_f32(std::ostream& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
inline float get_f32(std::istream& in) { return std::bit_cast<float>(get_u32(in)); }

inline void put_f32s(std::ostream& out, const std::vector<float>& values) {
  std::vector<char> buf(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto v = std::bit_cast<std::uint32_t>(values[i]);
    for (int k = 0; k < 4; ++k) buf[i * 4 + static_cast<std::size_t>(k)] = static_cast<char>((v >> (8 * k)) & 0xFF);
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline void get_f32s(std::istream& in, float* dst, std::size_t count) {
  std::vector<unsigned char> buf(count * 4);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
    throw FormatError("truncated payload");
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t v = std::uint32_t{buf[i * 4]} | (std::uint32_t{buf[i * 4 + 1]} << 8) |
                            (std::uint32_t{buf[i * 4 + 2]} << 16) | (std::uint32_t{buf[i * 4 + 3]} << 24);
    dst[i] = std::bit_cast<float>(v);
  }
}

/// Writes the 8-byte magic/version/dtype/layout preamble shared by CIMG and CMDL.
inline void put_preamble(std::ostream& out, const char (&magic)[5], std::uint8_t layout) {
  out.write(magic, 4);
  const std::array<char, 4> tail = {1, 1, static_cast<char>(layout), 0};
  out.write(tail.data(), 4);
}

inline void check_preamble(std::istream& in, const char (&magic)[5], std::uint8_t layout) {
  std::array<char, 8> head{};
  if (!in.read(head.data(), 8)) throw FormatError("file shorter than header");
  if (std::memcmp(head.data(), magic, 4) != 0) throw FormatError(std::string("bad magic, expected ") + magic);
  if (head[4] != 1) throw FormatError("unsupported version " + std::to_string(int(head[4])));
  if (head[5] != 1) throw FormatError("unsupported dtype " + std::to_string(int(head[5])));
  if (static_cast<std::uint8_t>(head[6]) != layout) throw FormatError("unsupported layout " + std::to_string(int(head[6])));
}

}  // namespace io

inline constexpr std::size_t kCimgHeaderBytes = 12;

inline void write_tensor_stream(std::ostream& out, const std::vector<ChemImage>& images) {
  std::uint32_t h = kImageSize, w = kImageSize, c = 1;
  if (!images.empty()) {
    h = static_cast<std::uint32_t>(images.front().height);
    w = static_cast<std::uint32_t>(images.front().width);
    c = static_cast<std::uint32_t>(images.front().channels);
  }
  for (const auto& img : images) {
    if (img.height != h || img.width != w || img.channels != c)
      throw ShapeMismatch("all images in a CIMG file must share H, W and C");
  }
  io::put_preamble(out, "CIMG", 1);
  io::put_u32(out, 4);
  io::put_u32(out, static_cast<std::uint32_t>(images.size()));
  io::put_u32(out, h);
  io::put_u32(out, w);
  io::put_u32(out, c);
  for (const auto& img : images) io::put_f32s(out, img.data);
  if (!out) throw IoError("write failed");
}

inline std::vector<ChemImage> read_tensor_stream(std::istream& in) {
  io::check_preamble(in, "CIMG", 1);
  if (io::get_u32(in) != 4) throw FormatError("CIMG rank must be 4");
  const std::uint32_t n = io::get_u32(in), h = io::get_u32(in), w = io::get_u32(in), c = io::get_u32(in);
  if (h == 0 || w == 0 || c == 0) throw FormatError("zero image dimension");
  std::vector<ChemImage> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    ChemImage img(h, w, c);
    io::get_f32s(in, img.data.data(), img.data.size());
    out.push_back(std::move(img));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after payload");
  return out;
}

inline void write_tensor_file(const std::vector<ChemImage>& images, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_tensor_stream(out, images);
}

inline std::vector<ChemImage> read_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return read_tensor_stream(in);
}

}  // namespace chemimg
