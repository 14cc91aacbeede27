#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace infdit {

// 8-bit RGB raster, the interchange form between files and Image.
struct RasterU8 {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint8_t> rgb;  // HWC, 3 channels
};

namespace pngio {

inline void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline std::uint32_t get_u32_be(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

inline void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                         const std::vector<std::uint8_t>& payload) {
  put_u32_be(out, static_cast<std::uint32_t>(payload.size()));
  const std::size_t type_at = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, out.data() + type_at, static_cast<uInt>(4 + payload.size()));
  put_u32_be(out, static_cast<std::uint32_t>(crc));
}

inline const std::uint8_t kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

inline std::vector<std::uint8_t> encode_rgb8(const RasterU8& img) {
  if (img.height < 1 || img.width < 1) throw std::invalid_argument("png: empty image");
  std::vector<std::uint8_t> out(kSignature, kSignature + 8);

  std::vector<std::uint8_t> ihdr;
  put_u32_be(ihdr, static_cast<std::uint32_t>(img.width));
  put_u32_be(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // color type: truecolor
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter method
  ihdr.push_back(0);  // no interlace
  append_chunk(out, "IHDR", ihdr);

  // Raw scanlines, filter byte 0 (None) per row.
  const std::size_t stride = static_cast<std::size_t>(img.width) * 3;
  std::vector<std::uint8_t> raw;
  raw.reserve((stride + 1) * static_cast<std::size_t>(img.height));
  for (std::int64_t y = 0; y < img.height; ++y) {
    raw.push_back(0);
    const std::uint8_t* row = img.rgb.data() + static_cast<std::size_t>(y) * stride;
    raw.insert(raw.end(), row, row + stride);
  }

  uLongf comp_size = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> comp(comp_size);
  if (compress2(comp.data(), &comp_size, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("png: deflate failed");
  comp.resize(comp_size);
  append_chunk(out, "IDAT", comp);
  append_chunk(out, "IEND", {});
  return out;
}

inline std::uint8_t paeth(std::uint8_t a, std::uint8_t b, std::uint8_t c) {
  const int p = int(a) + int(b) - int(c);
  const int pa = std::abs(p - int(a));
  const int pb = std::abs(p - int(b));
  const int pc = std::abs(p - int(c));
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

inline RasterU8 decode_rgb8(const std::vector<std::uint8_t>& file) {
  if (file.size() < 8 || std::memcmp(file.data(), kSignature, 8) != 0)
    throw std::runtime_error("png: bad signature");

  std::int64_t width = 0, height = 0;
  int color_type = -1;
  bool saw_ihdr = false, saw_iend = false;
  std::vector<std::uint8_t> idat;

  std::size_t pos = 8;
  while (pos + 12 <= file.size()) {
    const std::uint32_t len = get_u32_be(file.data() + pos);
    if (pos + 12 + len > file.size()) throw std::runtime_error("png: truncated chunk");
    const char* type = reinterpret_cast<const char*>(file.data() + pos + 4);
    const std::uint8_t* payload = file.data() + pos + 8;

    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, file.data() + pos + 4, 4 + len);
    if (static_cast<std::uint32_t>(crc) != get_u32_be(payload + len))
      throw std::runtime_error("png: chunk crc mismatch");

    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw std::runtime_error("png: bad IHDR");
      width = get_u32_be(payload);
      height = get_u32_be(payload + 4);
      const int bit_depth = payload[8];
      color_type = payload[9];
      const int interlace = payload[12];
      if (bit_depth != 8) throw std::runtime_error("png: unsupported bit depth");
      if (color_type != 2 && color_type != 6)
        throw std::runtime_error("png: unsupported color type (need RGB or RGBA)");
      if (payload[10] != 0 || payload[11] != 0 || interlace != 0)
        throw std::runtime_error("png: unsupported compression/filter/interlace");
      saw_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
      break;
    }
    pos += 12 + len;
  }
  if (!saw_ihdr || !saw_iend || idat.empty()) throw std::runtime_error("png: truncated file");
  if (width < 1 || height < 1) throw std::runtime_error("png: bad dimensions");

  const int bpp = color_type == 6 ? 4 : 3;
  const std::size_t stride = static_cast<std::size_t>(width) * bpp;
  const std::size_t raw_size = (stride + 1) * static_cast<std::size_t>(height);
  std::vector<std::uint8_t> raw(raw_size);
  uLongf dest_len = static_cast<uLongf>(raw_size);
  const int zrc = uncompress(raw.data(), &dest_len, idat.data(), static_cast<uLong>(idat.size()));
  if (zrc != Z_OK || dest_len != raw_size) throw std::runtime_error("png: inflate failed");

  // Undo per-row filters in place.
  std::vector<std::uint8_t> prev(stride, 0);
  RasterU8 img;
  img.height = height;
  img.width = width;
  img.rgb.resize(static_cast<std::size_t>(height) * static_cast<std::size_t>(width) * 3);
  std::vector<std::uint8_t> cur(stride);
  for (std::int64_t y = 0; y < height; ++y) {
    const std::uint8_t* row = raw.data() + static_cast<std::size_t>(y) * (stride + 1);
    const int filter = row[0];
    const std::uint8_t* src = row + 1;
    for (std::size_t i = 0; i < stride; ++i) {
      const std::uint8_t a = i >= static_cast<std::size_t>(bpp) ? cur[i - bpp] : 0;
      const std::uint8_t b = prev[i];
      const std::uint8_t c = i >= static_cast<std::size_t>(bpp) ? prev[i - bpp] : 0;
      std::uint8_t v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v = static_cast<std::uint8_t>(v + a); break;
        case 2: v = static_cast<std::uint8_t>(v + b); break;
        case 3: v = static_cast<std::uint8_t>(v + ((int(a) + int(b)) >> 1)); break;
        case 4: v = static_cast<std::uint8_t>(v + paeth(a, b, c)); break;
        default: throw std::runtime_error("png: bad filter type");
      }
      cur[i] = v;
    }
    std::uint8_t* dst = img.rgb.data() + static_cast<std::size_t>(y) * width * 3;
    for (std::int64_t x = 0; x < width; ++x)
      for (int ch = 0; ch < 3; ++ch) dst[x * 3 + ch] = cur[static_cast<std::size_t>(x) * bpp + ch];
    std::swap(prev, cur);
  }
  return img;
}

}  // namespace pngio

namespace ppmio {

inline std::vector<std::uint8_t> encode_p6(const RasterU8& img) {
  std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                       "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.rgb.begin(), img.rgb.end());
  return out;
}

inline RasterU8 decode_p6(const std::vector<std::uint8_t>& file) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < file.size()) {
      if (std::isspace(file[pos])) {
        ++pos;
      } else if (file[pos] == '#') {
        while (pos < file.size() && file[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> std::int64_t {
    skip_space();
    if (pos >= file.size() || !std::isdigit(file[pos])) throw std::runtime_error("ppm: bad header");
    std::int64_t v = 0;
    while (pos < file.size() && std::isdigit(file[pos])) v = v * 10 + (file[pos++] - '0');
    return v;
  };

  if (file.size() < 2 || file[0] != 'P' || file[1] != '6')
    throw std::runtime_error("ppm: not a P6 file");
  pos = 2;
  const std::int64_t w = read_int();
  const std::int64_t h = read_int();
  const std::int64_t maxval = read_int();
  if (maxval != 255) throw std::runtime_error("ppm: only maxval 255 supported");
  if (pos >= file.size() || !std::isspace(file[pos])) throw std::runtime_error("ppm: bad header");
  ++pos;  // single whitespace before raster

  const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3;
  if (file.size() - pos < need) throw std::runtime_error("ppm: truncated file");
  RasterU8 img;
  img.height = h;
  img.width = w;
  img.rgb.assign(file.begin() + static_cast<std::ptrdiff_t>(pos),
                 file.begin() + static_cast<std::ptrdiff_t>(pos + need));
  return img;
}

}  // namespace ppmio

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace infdit
