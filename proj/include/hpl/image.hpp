#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "hpl/errors.hpp"

namespace hpl {

namespace fs = std::filesystem;

// Float image, HWC interleaved, values nominally in [0,1].
struct ImageF {
  long h = 0, w = 0, c = 0;
  std::vector<float> data;

  ImageF() = default;
  ImageF(long h_, long w_, long c_) : h(h_), w(w_), c(c_), data(size_t(h_) * w_ * c_, 0.f) {}

  float& at(long y, long x, long ch) { return data[(y * w + x) * c + ch]; }
  float at(long y, long x, long ch) const { return data[(y * w + x) * c + ch]; }
  long numel() const { return h * w * c; }
};

namespace detail {

inline void skip_pnm_space(std::istream& in) {
  for (;;) {
    int ch = in.peek();
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(ch)) {
      in.get();
    } else {
      return;
    }
  }
}

inline long read_pnm_int(std::istream& in) {
  skip_pnm_space(in);
  long v = 0;
  if (!(in >> v)) throw DataError("truncated PNM header");
  return v;
}

}  // namespace detail

// Binary PPM (P6, 3 channels) and PGM (P5, 1 channel), maxval 255.
inline ImageF read_pnm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path.string());
  std::string magic;
  in >> magic;
  long channels;
  if (magic == "P6") channels = 3;
  else if (magic == "P5") channels = 1;
  else throw DataError("unsupported PNM magic '" + magic + "' in " + path.string());
  const long w = detail::read_pnm_int(in);
  const long h = detail::read_pnm_int(in);
  const long maxval = detail::read_pnm_int(in);
  if (maxval != 255) throw DataError("expected maxval 255 in " + path.string());
  in.get();  // single whitespace byte before raster
  std::vector<uint8_t> raw(size_t(w) * h * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    throw DataError("truncated raster in " + path.string());
  ImageF img(h, w, channels);
  for (size_t i = 0; i < raw.size(); ++i) img.data[i] = raw[i] / 255.0f;
  return img;
}

inline void write_pnm(const fs::path& path, const ImageF& img) {
  if (img.c != 1 && img.c != 3) throw ParamError("write_pnm: need 1 or 3 channels");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write image: " + path.string());
  out << (img.c == 3 ? "P6" : "P5") << "\n" << img.w << " " << img.h << "\n255\n";
  std::vector<uint8_t> raw(size_t(img.numel()));
  for (long i = 0; i < img.numel(); ++i) {
    const float v = std::clamp(img.data[i], 0.0f, 1.0f);
    raw[i] = static_cast<uint8_t>(std::lround(v * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError("short write on " + path.string());
}

// Snaps every channel value to the 8-bit grid used on disk, so an image
// written and re-read is bit-identical to the in-memory original.
inline void quantize_u8(ImageF& img) {
  for (float& v : img.data)
    v = std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f;
}

// Bilinear resize, half-pixel centers, edge clamped.
inline ImageF resize_bilinear(const ImageF& src, long H, long W) {
  ImageF dst(H, W, src.c);
  for (long oy = 0; oy < H; ++oy) {
    const double sy = std::clamp((oy + 0.5) * src.h / H - 0.5, 0.0, double(src.h - 1));
    const long y0 = static_cast<long>(std::floor(sy));
    const long y1 = std::min(y0 + 1, src.h - 1);
    const double fy = sy - y0;
    for (long ox = 0; ox < W; ++ox) {
      const double sx = std::clamp((ox + 0.5) * src.w / W - 0.5, 0.0, double(src.w - 1));
      const long x0 = static_cast<long>(std::floor(sx));
      const long x1 = std::min(x0 + 1, src.w - 1);
      const double fx = sx - x0;
      for (long ch = 0; ch < src.c; ++ch) {
        const double top = src.at(y0, x0, ch) * (1 - fx) + src.at(y0, x1, ch) * fx;
        const double bot = src.at(y1, x0, ch) * (1 - fx) + src.at(y1, x1, ch) * fx;
        dst.at(oy, ox, ch) = static_cast<float>(top * (1 - fy) + bot * fy);
      }
    }
  }
  return dst;
}

// Nearest-neighbor resize (for label masks).
inline ImageF resize_nearest(const ImageF& src, long H, long W) {
  ImageF dst(H, W, src.c);
  for (long oy = 0; oy < H; ++oy) {
    const long sy = std::min<long>(src.h - 1, static_cast<long>(oy * src.h / H));
    for (long ox = 0; ox < W; ++ox) {
      const long sx = std::min<long>(src.w - 1, static_cast<long>(ox * src.w / W));
      for (long ch = 0; ch < src.c; ++ch) dst.at(oy, ox, ch) = src.at(sy, sx, ch);
    }
  }
  return dst;
}

inline ImageF crop(const ImageF& src, long y0, long x0, long ch_, long cw_) {
  if (y0 < 0 || x0 < 0 || y0 + ch_ > src.h || x0 + cw_ > src.w)
    throw ParamError("crop: window out of bounds");
  ImageF dst(ch_, cw_, src.c);
  for (long y = 0; y < ch_; ++y)
    for (long x = 0; x < cw_; ++x)
      for (long ch = 0; ch < src.c; ++ch) dst.at(y, x, ch) = src.at(y0 + y, x0 + x, ch);
  return dst;
}

inline void hflip_inplace(ImageF& img) {
  for (long y = 0; y < img.h; ++y)
    for (long x = 0; x < img.w / 2; ++x)
      for (long ch = 0; ch < img.c; ++ch)
        std::swap(img.at(y, x, ch), img.at(y, img.w - 1 - x, ch));
}

}  // namespace hpl
