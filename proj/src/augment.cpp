#include "hpl/augment.hpp"

#include <algorithm>
#include <cmath>

#include "hpl/errors.hpp"

namespace hpl {

void CropConfig::validate() const {
  if (n_global < 1) throw ParamError("crop config: need at least one global crop");
  if (n_local < 0) throw ParamError("crop config: negative local crop count");
  if (global_size < 1 || local_size < 1) throw ParamError("crop config: crop sizes must be positive");
  if (local_size >= global_size)
    throw ParamError("crop config: local_size must be smaller than global_size");
  for (const auto& sc : {global_scale, local_scale}) {
    if (!(sc.first > 0 && sc.first <= sc.second && sc.second <= 1.0))
      throw ParamError("crop config: scale ranges must satisfy 0 < lo <= hi <= 1");
  }
  if (jitter_strength < 0 || grayscale_prob < 0 || grayscale_prob > 1 ||
      blur_prob < 0 || blur_prob > 1)
    throw ParamError("crop config: bad photometric settings");
}

void MaskConfig::validate() const {
  if (mask_probability < 0 || mask_probability > 1)
    throw ParamError("mask config: probability must lie in [0, 1]");
  if (!(ratio_range.first >= 0 && ratio_range.first <= ratio_range.second &&
        ratio_range.second < 1.0))
    throw ParamError("mask config: ratio range must satisfy 0 <= lo <= hi < 1");
  if (block_min < 1) throw ParamError("mask config: block_min must be >= 1");
}

namespace {

double luma(const ImageF& img, long y, long x) {
  if (img.c == 1) return img.at(y, x, 0);
  return 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
}

// torchvision-style random resized crop window; falls back to the largest
// centered window with clamped aspect when ten attempts fail.
ImageF random_resized(const ImageF& src, int out_size,
                      const std::pair<double, double>& scale, Rng& rng) {
  const double area = static_cast<double>(src.h) * static_cast<double>(src.w);
  const double log_lo = std::log(3.0 / 4.0), log_hi = std::log(4.0 / 3.0);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * rng.uniform(scale.first, scale.second);
    const double aspect = std::exp(rng.uniform(log_lo, log_hi));
    const long bw = std::lround(std::sqrt(target * aspect));
    const long bh = std::lround(std::sqrt(target / aspect));
    if (bw >= 1 && bw <= src.w && bh >= 1 && bh <= src.h) {
      const long y0 = static_cast<long>(rng.uniform_int(static_cast<uint64_t>(src.h - bh + 1)));
      const long x0 = static_cast<long>(rng.uniform_int(static_cast<uint64_t>(src.w - bw + 1)));
      return resize_bilinear(crop(src, y0, x0, bh, bw), out_size, out_size);
    }
  }
  const double in_ratio = static_cast<double>(src.w) / static_cast<double>(src.h);
  long bw = src.w, bh = src.h;
  if (in_ratio < 3.0 / 4.0)
    bh = std::lround(src.w * 4.0 / 3.0);
  else if (in_ratio > 4.0 / 3.0)
    bw = std::lround(src.h * 4.0 / 3.0);
  bw = std::min(bw, src.w);
  bh = std::min(bh, src.h);
  return resize_bilinear(crop(src, (src.h - bh) / 2, (src.w - bw) / 2, bh, bw),
                         out_size, out_size);
}

void clamp01(ImageF& img) {
  for (float& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
}

void apply_jitter(ImageF& img, double strength, Rng& rng) {
  const double b = 1.0 + strength * rng.uniform(-1.0, 1.0);
  const double c = 1.0 + strength * rng.uniform(-1.0, 1.0);
  const double s = 1.0 + strength * rng.uniform(-1.0, 1.0);
  double mean = 0;
  for (long y = 0; y < img.h; ++y)
    for (long x = 0; x < img.w; ++x) mean += luma(img, y, x);
  mean /= static_cast<double>(img.h * img.w);
  for (long y = 0; y < img.h; ++y)
    for (long x = 0; x < img.w; ++x) {
      const double g = luma(img, y, x);
      for (long ch = 0; ch < img.c; ++ch) {
        double v = img.at(y, x, ch);
        v = g + s * (v - g);        // saturation toward/away from gray
        v = mean + c * (v - mean);  // contrast about the crop mean
        v *= b;                     // brightness
        img.at(y, x, ch) = static_cast<float>(v);
      }
    }
}

void to_grayscale(ImageF& img) {
  for (long y = 0; y < img.h; ++y)
    for (long x = 0; x < img.w; ++x) {
      const float g = static_cast<float>(luma(img, y, x));
      for (long ch = 0; ch < img.c; ++ch) img.at(y, x, ch) = g;
    }
}

void gaussian_blur(ImageF& img, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(2.0 * sigma)));
  std::vector<double> k(static_cast<size_t>(2 * radius + 1));
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;

  ImageF tmp = img;
  for (long y = 0; y < img.h; ++y)  // horizontal pass, edge clamped
    for (long x = 0; x < img.w; ++x)
      for (long ch = 0; ch < img.c; ++ch) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i) {
          const long xx = std::clamp<long>(x + i, 0, img.w - 1);
          acc += k[i + radius] * img.at(y, xx, ch);
        }
        tmp.at(y, x, ch) = static_cast<float>(acc);
      }
  for (long y = 0; y < img.h; ++y)  // vertical pass
    for (long x = 0; x < img.w; ++x)
      for (long ch = 0; ch < img.c; ++ch) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i) {
          const long yy = std::clamp<long>(y + i, 0, img.h - 1);
          acc += k[i + radius] * tmp.at(yy, x, ch);
        }
        img.at(y, x, ch) = static_cast<float>(acc);
      }
}

ImageF make_crop(const ImageF& image, int out_size,
                 const std::pair<double, double>& scale, const CropConfig& cfg,
                 Rng& rng) {
  ImageF out = random_resized(image, out_size, scale, rng);
  if (cfg.hflip && rng.bernoulli(0.5)) hflip_inplace(out);
  if (cfg.jitter_strength > 0) apply_jitter(out, cfg.jitter_strength, rng);
  if (cfg.grayscale_prob > 0 && rng.bernoulli(cfg.grayscale_prob)) to_grayscale(out);
  if (cfg.blur_prob > 0 && rng.bernoulli(cfg.blur_prob))
    gaussian_blur(out, rng.uniform(0.1, 1.2));
  clamp01(out);
  return out;
}

}  // namespace

MultiCropOutput multi_crop(const ImageF& image, const CropConfig& cfg, Rng& rng) {
  cfg.validate();
  if (image.h < 1 || image.w < 1 || image.data.empty())
    throw ParamError("multi_crop: empty image");
  MultiCropOutput out;
  out.global_crops.reserve(cfg.n_global);
  out.local_crops.reserve(cfg.n_local);
  for (int i = 0; i < cfg.n_global; ++i)
    out.global_crops.push_back(make_crop(image, cfg.global_size, cfg.global_scale, cfg, rng));
  for (int i = 0; i < cfg.n_local; ++i)
    out.local_crops.push_back(make_crop(image, cfg.local_size, cfg.local_scale, cfg, rng));
  return out;
}

ByteTensor block_mask(long n_p, int grid_side, const MaskConfig& cfg, Rng& rng,
                      std::vector<MaskRect>* rects_out) {
  cfg.validate();
  if (rects_out) rects_out->clear();
  if (grid_side < 1 || n_p != static_cast<long>(grid_side) * grid_side)
    throw ParamError("block_mask: n_p must equal grid_side^2");
  ByteTensor mask({n_p});
  if (!rng.bernoulli(cfg.mask_probability)) return mask;

  const long target =
      std::lround(rng.uniform(cfg.ratio_range.first, cfg.ratio_range.second) * n_p);
  long covered = 0;
  for (int guard = 0; covered < target && guard < 1000; ++guard) {
    const long remaining = target - covered;
    long area = cfg.block_min +
                static_cast<long>(rng.uniform_int(static_cast<uint64_t>(remaining)));
    area = std::min(area, std::max<long>(remaining, cfg.block_min));
    const double r = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
    const long bh = std::clamp<long>(std::lround(std::sqrt(area * r)), 1, grid_side);
    const long bw = std::clamp<long>(std::lround(std::ceil(double(area) / bh)), 1, grid_side);
    const long y0 = static_cast<long>(rng.uniform_int(static_cast<uint64_t>(grid_side - bh + 1)));
    const long x0 = static_cast<long>(rng.uniform_int(static_cast<uint64_t>(grid_side - bw + 1)));

    // Visit the block in scan order, stopping the moment the target is hit;
    // the visited region (full rows + one partial row) is recorded so the
    // mask stays an exact union of the reported rectangles.
    long full_rows = 0, partial = 0;
    for (long dy = 0; dy < bh && covered < target; ++dy) {
      long filled_in_row = 0;
      for (long dx = 0; dx < bw && covered < target; ++dx) {
        uint8_t& cell = mask[(y0 + dy) * grid_side + (x0 + dx)];
        if (!cell) {
          cell = 1;
          ++covered;
        }
        ++filled_in_row;
      }
      if (filled_in_row == bw)
        ++full_rows;
      else
        partial = filled_in_row;
    }
    if (rects_out) {
      if (full_rows > 0)
        rects_out->push_back({static_cast<int>(y0), static_cast<int>(x0),
                              static_cast<int>(full_rows), static_cast<int>(bw)});
      if (partial > 0)
        rects_out->push_back({static_cast<int>(y0 + full_rows), static_cast<int>(x0), 1,
                              static_cast<int>(partial)});
    }
  }
  return mask;
}

}  // namespace hpl
