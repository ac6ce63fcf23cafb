#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hseg {

// 8-bit raster, channels = 1 (gray) or 3 (RGB), row-major interleaved.
struct Image8 {
  int w = 0, h = 0, channels = 0;
  std::vector<uint8_t> pix;

  uint8_t at(int y, int x, int c) const {
    return pix[(static_cast<size_t>(y) * w + x) * channels + c];
  }
};

namespace png_detail {

inline void put_be32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

inline void write_chunk(std::vector<uint8_t>& out, const char type[4],
                        const std::vector<uint8_t>& data) {
  put_be32(out, static_cast<uint32_t>(data.size()));
  const size_t type_at = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, out.data() + type_at, static_cast<uInt>(4 + data.size()));
  put_be32(out, static_cast<uint32_t>(crc));
}

inline uint32_t get_be32(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

inline int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace png_detail

inline void png_write(const std::string& path, const Image8& img) {
  using namespace png_detail;
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("png_write: channels must be 1 or 3");
  if (img.pix.size() != static_cast<size_t>(img.w) * img.h * img.channels)
    throw std::invalid_argument("png_write: pixel buffer size mismatch");

  std::vector<uint8_t> file{137, 80, 78, 71, 13, 10, 26, 10};

  std::vector<uint8_t> ihdr;
  put_be32(ihdr, static_cast<uint32_t>(img.w));
  put_be32(ihdr, static_cast<uint32_t>(img.h));
  ihdr.push_back(8);                                      // bit depth
  ihdr.push_back(img.channels == 1 ? 0 : 2);              // color type
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);                                      // no interlace
  write_chunk(file, "IHDR", ihdr);

  const size_t row = static_cast<size_t>(img.w) * img.channels;
  std::vector<uint8_t> raw((row + 1) * img.h);
  for (int y = 0; y < img.h; ++y) {
    raw[(row + 1) * y] = 0;  // filter: none
    std::memcpy(raw.data() + (row + 1) * y + 1, img.pix.data() + row * y, row);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> comp(bound);
  if (compress2(comp.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("png_write: deflate failed");
  comp.resize(bound);
  write_chunk(file, "IDAT", comp);
  write_chunk(file, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("png_write: cannot open " + path);
  f.write(reinterpret_cast<const char*>(file.data()), static_cast<std::streamsize>(file.size()));
  if (!f) throw std::runtime_error("png_write: write failed: " + path);
}

// Reads an 8-bit non-interlaced PNG (gray, gray+alpha, RGB, or RGBA; alpha is
// dropped). Anything else is rejected with the offending property named.
inline Image8 png_read(const std::string& path) {
  using namespace png_detail;
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("png_read: cannot open: " + path);
  std::vector<uint8_t> file((std::istreambuf_iterator<char>(f)),
                            std::istreambuf_iterator<char>());

  static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  if (file.size() < 8 || std::memcmp(file.data(), sig, 8) != 0)
    throw std::runtime_error("png_read: not a PNG file: " + path);

  uint32_t w = 0, h = 0;
  int depth = 0, ctype = 0, interlace = 0;
  bool have_ihdr = false;
  std::vector<uint8_t> idat;

  size_t pos = 8;
  while (pos + 8 <= file.size()) {
    const uint32_t len = get_be32(file.data() + pos);
    if (pos + 12 + len > file.size())
      throw std::runtime_error("png_read: truncated chunk in " + path);
    const char* type = reinterpret_cast<const char*>(file.data() + pos + 4);
    const uint8_t* data = file.data() + pos + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      w = get_be32(data);
      h = get_be32(data + 4);
      depth = data[8];
      ctype = data[9];
      interlace = data[12];
      have_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (!have_ihdr || idat.empty())
    throw std::runtime_error("png_read: missing IHDR/IDAT in " + path);
  if (depth != 8)
    throw std::runtime_error("png_read: non-8-bit depth (" + std::to_string(depth) + ") in " +
                             path);
  if (interlace != 0) throw std::runtime_error("png_read: interlaced PNG unsupported: " + path);
  int src_ch;
  switch (ctype) {
    case 0: src_ch = 1; break;
    case 2: src_ch = 3; break;
    case 4: src_ch = 2; break;
    case 6: src_ch = 4; break;
    default:
      throw std::runtime_error("png_read: unsupported color type " + std::to_string(ctype) +
                               " in " + path);
  }

  const size_t row = static_cast<size_t>(w) * src_ch;
  std::vector<uint8_t> raw((row + 1) * h);
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      raw_len != raw.size())
    throw std::runtime_error("png_read: corrupt image data in " + path);

  // undo per-row filters in place
  std::vector<uint8_t> prev(row, 0);
  std::vector<uint8_t> cur(row);
  std::vector<uint8_t> out(static_cast<size_t>(w) * h * src_ch);
  for (uint32_t y = 0; y < h; ++y) {
    const uint8_t filt = raw[(row + 1) * y];
    const uint8_t* src = raw.data() + (row + 1) * y + 1;
    for (size_t i = 0; i < row; ++i) {
      const int a = i >= static_cast<size_t>(src_ch) ? cur[i - src_ch] : 0;
      const int b = prev[i];
      const int c = i >= static_cast<size_t>(src_ch) ? prev[i - src_ch] : 0;
      int v = src[i];
      switch (filt) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw std::runtime_error("png_read: bad filter type in " + path);
      }
      cur[i] = static_cast<uint8_t>(v);
    }
    std::memcpy(out.data() + row * y, cur.data(), row);
    prev = cur;
  }

  Image8 img;
  img.w = static_cast<int>(w);
  img.h = static_cast<int>(h);
  if (src_ch == 1 || src_ch == 3) {
    img.channels = src_ch;
    img.pix = std::move(out);
  } else {  // drop alpha
    img.channels = src_ch == 2 ? 1 : 3;
    img.pix.resize(static_cast<size_t>(w) * h * img.channels);
    for (size_t p = 0; p < static_cast<size_t>(w) * h; ++p)
      for (int c = 0; c < img.channels; ++c)
        img.pix[p * img.channels + c] = out[p * src_ch + c];
  }
  return img;
}

}  // namespace hseg
