// Copyright (c) the imlkit project
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "imlkit/errors.hpp"
#include "imlkit/tensor.hpp"

namespace imlkit {

// Interleaved 8-bit image, 1 (gray) or 3 (RGB) channels, row-major.
struct ImageU8 {
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> data;

  ImageU8() = default;
  ImageU8(std::size_t w, std::size_t h, std::size_t c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), data(w * h * c, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c = 0) {
    return data[(y * width + x) * channels + c];
  }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return data[(y * width + x) * channels + c];
  }

  bool operator==(const ImageU8& o) const {
    return width == o.width && height == o.height && channels == o.channels && data == o.data;
  }
};

// Deterministic half-away-from-zero rounding into the 8-bit range.
inline std::uint8_t quantize_u8(double v) {
  if (v <= 0.0) return 0;
  if (v >= 255.0) return 255;
  return static_cast<std::uint8_t>(static_cast<long long>(v + 0.5));
}

// [3,H,W] or [B,3,H,W] tensors in [-1,1] from 8-bit images and back.
template <typename T>
inline Tensor<T> image_to_tensor(const ImageU8& img) {
  if (img.channels != 3) throw DataError("image_to_tensor: expected an RGB image");
  Tensor<T> t = Tensor<T>::zeros({3, img.height, img.width});
  auto& v = t.value();
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < img.height; ++y) {
      for (std::size_t x = 0; x < img.width; ++x) {
        v[(c * img.height + y) * img.width + x] =
            static_cast<T>(double(img.at(y, x, c)) / 127.5 - 1.0);
      }
    }
  }
  return t;
}

template <typename T>
inline Tensor<T> batch_to_tensor(const std::vector<const ImageU8*>& images) {
  if (images.empty()) throw DataError("batch_to_tensor: empty batch");
  const std::size_t H = images[0]->height, W = images[0]->width;
  Tensor<T> t = Tensor<T>::zeros({images.size(), 3, H, W});
  auto& v = t.value();
  for (std::size_t b = 0; b < images.size(); ++b) {
    const ImageU8& img = *images[b];
    if (img.height != H || img.width != W || img.channels != 3) {
      throw DataError("batch_to_tensor: inconsistent image dimensions in batch");
    }
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
          v[((b * 3 + c) * H + y) * W + x] = static_cast<T>(double(img.at(y, x, c)) / 127.5 - 1.0);
        }
      }
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Minimal PNG codec (8-bit gray / RGB, non-interlaced) on top of zlib.
// ---------------------------------------------------------------------------

namespace pngdetail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline std::uint32_t read_u32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

inline void write_chunk(std::vector<std::uint8_t>& out, const char type[4],
                        const std::vector<std::uint8_t>& payload) {
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const auto crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

inline int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace pngdetail

inline std::vector<std::uint8_t> encode_png(const ImageU8& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw DataError("encode_png: only 1- or 3-channel images supported");
  }
  using namespace pngdetail;
  std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};

  std::vector<std::uint8_t> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(img.width));
  put_u32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);                                       // bit depth
  ihdr.push_back(img.channels == 3 ? 2 : 0);               // color type
  ihdr.push_back(0);                                       // compression
  ihdr.push_back(0);                                       // filter
  ihdr.push_back(0);                                       // interlace
  write_chunk(out, "IHDR", ihdr);

  // Filter type 0 (None) on every scanline.
  const std::size_t stride = img.width * img.channels;
  std::vector<std::uint8_t> raw;
  raw.reserve(img.height * (stride + 1));
  for (std::size_t y = 0; y < img.height; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), img.data.begin() + y * stride, img.data.begin() + (y + 1) * stride);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw DataError("encode_png: zlib compression failed");
  }
  compressed.resize(bound);
  write_chunk(out, "IDAT", compressed);
  write_chunk(out, "IEND", {});
  return out;
}

inline ImageU8 decode_png(const std::vector<std::uint8_t>& bytes) {
  using namespace pngdetail;
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0) {
    throw DataError("decode_png: not a PNG file");
  }
  std::size_t pos = 8;
  ImageU8 img;
  std::vector<std::uint8_t> idat;
  bool seen_ihdr = false;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t len = read_u32(bytes.data() + pos);
    if (pos + 12 + len > bytes.size()) throw DataError("decode_png: truncated chunk");
    const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
    const std::uint8_t* payload = bytes.data() + pos + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw DataError("decode_png: bad IHDR");
      img.width = read_u32(payload);
      img.height = read_u32(payload + 4);
      const int depth = payload[8], color = payload[9], interlace = payload[12];
      if (depth != 8 || (color != 0 && color != 2) || interlace != 0) {
        throw DataError("decode_png: unsupported format (need 8-bit gray/RGB, non-interlaced)");
      }
      img.channels = color == 2 ? 3 : 1;
      seen_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (!seen_ihdr || img.width == 0 || img.height == 0) throw DataError("decode_png: missing IHDR");

  const std::size_t stride = img.width * img.channels;
  const std::size_t raw_size = img.height * (stride + 1);
  std::vector<std::uint8_t> raw(raw_size);
  uLongf dest = static_cast<uLongf>(raw_size);
  if (uncompress(raw.data(), &dest, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      dest != raw_size) {
    throw DataError("decode_png: zlib decompression failed");
  }

  img.data.assign(img.height * stride, 0);
  const std::size_t bpp = img.channels;
  for (std::size_t y = 0; y < img.height; ++y) {
    const std::uint8_t filter = raw[y * (stride + 1)];
    const std::uint8_t* src = raw.data() + y * (stride + 1) + 1;
    std::uint8_t* cur = img.data.data() + y * stride;
    const std::uint8_t* prev = y > 0 ? img.data.data() + (y - 1) * stride : nullptr;
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= bpp ? cur[i - bpp] : 0;
      const int b = prev ? prev[i] : 0;
      const int c = (prev && i >= bpp) ? prev[i - bpp] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw DataError("decode_png: unknown filter type");
      }
      cur[i] = static_cast<std::uint8_t>(v & 0xFF);
    }
  }
  return img;
}

inline void write_png(const std::string& path, const ImageU8& img) {
  const auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw DataError("short write: " + path);
}

inline ImageU8 read_png(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_png(bytes);
}

}  // namespace imlkit
