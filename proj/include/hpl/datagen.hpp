#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hpl/dataset.hpp"
#include "hpl/image.hpp"
#include "hpl/rng.hpp"

namespace hpl {

// Full parameter set for one rendered blob; every visual property is derived
// from these, so equal params => identical pixels.
struct BlobParams {
  double cx = 0.5, cy = 0.5;       // center, relative to image size
  double radius = 0.32;            // semi-major axis, relative
  double ecc = 0.8;                // semi-minor / semi-major
  double theta = 0.0;              // rotation, radians
  double hue = 0.05, sat = 0.55, val = 0.40;  // blob base color (HSV)
  double tex_freq = 4.0;           // ripple cycles across the blob
  double tex_amp = 0.12;           // ripple amplitude on value channel
  double tex_phase_u = 0.0, tex_phase_v = 0.0;
  double border_amp = 0.08;        // radial boundary irregularity
  double border_c2 = 0.0, border_c3 = 0.0, border_c5 = 0.0;  // harmonics
  double border_p2 = 0.0, border_p3 = 0.0, border_p5 = 0.0;
  double bg_hue = 0.08, bg_sat = 0.35, bg_val = 0.75;  // background skin tone
  double bg_grad = 0.03;           // vertical shading
  double noise_sigma = 0.015;      // per-pixel value noise
};

// Renders the blob over the background. If mask_out is non-null it receives
// the exact support (1 inside the blob boundary, 0 outside) at mask threshold
// identical to the paint test. Output pixels are already passed through the
// 8-bit quantizer so a PPM round trip is lossless.
ImageF render_blob(const BlobParams& p, int size, Rng& pixel_rng,
                   ImageF* mask_out = nullptr);

// Deterministic per-class appearance recipe: two shape/color families crossed
// with three ripple frequencies, so some class pairs differ only in texture.
struct ClassStyle {
  double hue_center, hue_jitter;
  double ecc_mean;
  double freq_mean;
  double border_amp;
};
ClassStyle class_style(int class_id);

std::string class_label_name(int class_id);

// Draws blob parameters for one sample of the given class; `rng` must be a
// dedicated per-sample stream.
BlobParams sample_blob_params(const ClassStyle& style, Rng& rng);

// Background tone bucket used as the sample's subgroup tag.
extern const std::vector<std::string> kToneBuckets;

struct GenOptions {
  int n_per_class = 10;
  int n_classes = 3;
  int image_size = 32;
  double labeled_fraction = 1.0;
  uint64_t seed = 0;
};

// Each generator writes images (PPM), masks (PGM, segmentation only) and
// manifest.json under out_dir and returns the loaded manifest.
CorpusManifest generate_classification_corpus(const GenOptions& opt,
                                              const fs::path& out_dir);

struct SegGenOptions {
  int n_samples = 40;
  int image_size = 64;
  uint64_t seed = 0;
};
CorpusManifest generate_segmentation_corpus(const SegGenOptions& opt,
                                            const fs::path& out_dir);

struct CaptionGenOptions {
  int n_samples = 40;
  int image_size = 64;
  uint64_t seed = 0;
};
CorpusManifest generate_caption_corpus(const CaptionGenOptions& opt,
                                       const fs::path& out_dir);

// Caption text for a rendered blob; same params => same sentence.
std::string caption_for_params(const BlobParams& p);

}  // namespace hpl
