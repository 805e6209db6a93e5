#pragma once

#include <utility>
#include <vector>

#include "hpl/image.hpp"
#include "hpl/rng.hpp"
#include "hpl/tensor.hpp"

namespace hpl {

struct CropConfig {
  int n_global = 2;
  int n_local = 8;
  int global_size = 64;
  int local_size = 24;
  std::pair<double, double> global_scale = {0.45, 1.0};
  std::pair<double, double> local_scale = {0.15, 0.45};
  // Photometric knobs; zeroing them all makes crops purely geometric.
  bool hflip = true;
  double jitter_strength = 0.4;  // brightness/contrast/saturation amplitude
  double grayscale_prob = 0.1;
  double blur_prob = 0.3;
  void validate() const;
};

struct MaskConfig {
  double mask_probability = 0.5;
  std::pair<double, double> ratio_range = {0.1, 0.5};
  int block_min = 1;
  void validate() const;
};

struct MultiCropOutput {
  std::vector<ImageF> global_crops;
  std::vector<ImageF> local_crops;
};

// Random-resized crops plus flip/jitter/grayscale/blur, all driven by `rng`
// only. With scale (1,1) the geometric part degenerates to a plain resize of
// the full frame.
MultiCropOutput multi_crop(const ImageF& image, const CropConfig& cfg, Rng& rng);

struct MaskRect {
  int y0, x0, h, w;
};

// Block mask over a grid_side x grid_side patch grid, flattened row-major to
// n_p entries. With probability mask_probability the mask covers a fraction
// drawn from ratio_range (hit exactly, the last block is trimmed in scan
// order); otherwise it is all zeros. `rects_out`, when given, receives the
// rectangles whose union is the mask.
ByteTensor block_mask(long n_p, int grid_side, const MaskConfig& cfg, Rng& rng,
                      std::vector<MaskRect>* rects_out = nullptr);

}  // namespace hpl
