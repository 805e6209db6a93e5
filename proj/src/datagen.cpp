#include "hpl/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "hpl/errors.hpp"

namespace hpl {

namespace {

// h in [0,1) wrapping; s, v in [0,1].
void hsv_to_rgb(double h, double s, double v, float* rgb) {
  h -= std::floor(h);
  const double x = h * 6.0;
  const int sector = std::min(5, static_cast<int>(x));
  const double f = x - sector;
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  double r, g, b;
  switch (sector) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
  rgb[0] = static_cast<float>(std::clamp(r, 0.0, 1.0));
  rgb[1] = static_cast<float>(std::clamp(g, 0.0, 1.0));
  rgb[2] = static_cast<float>(std::clamp(b, 0.0, 1.0));
}

std::string format_id(const char* prefix, int idx) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s-%05d", prefix, idx);
  return buf;
}

constexpr double kTau = 6.283185307179586;

}  // namespace

const std::vector<std::string> kToneBuckets = {"tone-a", "tone-b", "tone-c",
                                               "tone-d"};
namespace {
const double kToneValues[4] = {0.58, 0.68, 0.78, 0.88};
}

ImageF render_blob(const BlobParams& p, int size, Rng& pixel_rng,
                   ImageF* mask_out) {
  if (size < 8) throw ParamError("render_blob: image size must be >= 8");
  ImageF img(size, size, 3);
  if (mask_out) *mask_out = ImageF(size, size, 1);

  const double ct = std::cos(p.theta), st = std::sin(p.theta);
  const double a = p.radius;
  const double b = p.radius * p.ecc;
  for (int y = 0; y < size; ++y) {
    const double v = (y + 0.5) / size;
    for (int x = 0; x < size; ++x) {
      const double u = (x + 0.5) / size;
      const double noise = pixel_rng.normal(0.0, p.noise_sigma);

      const double dx = u - p.cx, dy = v - p.cy;
      const double du = ct * dx + st * dy;
      const double dv = -st * dx + ct * dy;
      const double rho = std::sqrt((du / a) * (du / a) + (dv / b) * (dv / b));
      const double phi = std::atan2(dv, du);
      const double rim =
          1.0 + p.border_amp * (p.border_c2 * std::sin(2 * phi + p.border_p2) +
                                p.border_c3 * std::sin(3 * phi + p.border_p3) +
                                p.border_c5 * std::sin(5 * phi + p.border_p5));
      const bool inside = rho <= rim;

      double hue, sat, val;
      if (inside) {
        const double ripple = p.tex_amp *
                              std::sin(kTau * p.tex_freq * (du / a) + p.tex_phase_u) *
                              std::sin(kTau * p.tex_freq * (dv / b) + p.tex_phase_v);
        hue = p.hue;
        sat = p.sat;
        val = p.val + ripple + noise;
      } else {
        hue = p.bg_hue;
        sat = p.bg_sat;
        val = p.bg_val + p.bg_grad * (2.0 * v - 1.0) + noise;
      }
      hsv_to_rgb(hue, sat, std::clamp(val, 0.0, 1.0), &img.at(y, x, 0));
      if (mask_out) mask_out->at(y, x, 0) = inside ? 1.0f : 0.0f;
    }
  }
  quantize_u8(img);
  return img;
}

ClassStyle class_style(int class_id) {
  if (class_id < 0) throw ParamError("class_style: negative class id");
  ClassStyle s;
  // Two color/shape families crossed with three ripple frequencies: with
  // three classes, classes 0 and 2 share the family and differ only in
  // texture frequency.
  const bool family_a = (class_id % 2) == 0;
  s.hue_center = family_a ? 0.02 : 0.10;
  s.hue_jitter = 0.05;
  s.ecc_mean = family_a ? 0.90 : 0.55;
  static const double kFreqs[3] = {2.2, 4.7, 8.8};
  s.freq_mean = kFreqs[class_id % 3];
  s.border_amp = family_a ? 0.05 : 0.12;
  return s;
}

std::string class_label_name(int class_id) {
  static const char* kNames[] = {"alpha", "beta",  "gamma", "delta",
                                 "omega", "sigma", "kappa", "zeta"};
  const int n = static_cast<int>(sizeof(kNames) / sizeof(kNames[0]));
  if (class_id < n) return kNames[class_id];
  return "family-" + std::to_string(class_id);
}

BlobParams sample_blob_params(const ClassStyle& style, Rng& rng) {
  BlobParams p;
  p.cx = rng.uniform(0.38, 0.62);
  p.cy = rng.uniform(0.38, 0.62);
  p.radius = rng.uniform(0.24, 0.34);
  p.ecc = std::clamp(style.ecc_mean + rng.uniform(-0.06, 0.06), 0.30, 0.98);
  p.theta = rng.uniform(0.0, kTau / 2.0);
  p.hue = style.hue_center + rng.uniform(-style.hue_jitter, style.hue_jitter);
  p.sat = rng.uniform(0.45, 0.70);
  p.val = rng.uniform(0.30, 0.50);
  p.tex_freq = style.freq_mean * rng.uniform(0.88, 1.12);
  p.tex_amp = rng.uniform(0.09, 0.15);
  p.tex_phase_u = rng.uniform(0.0, kTau);
  p.tex_phase_v = rng.uniform(0.0, kTau);
  p.border_amp = style.border_amp;
  p.border_c2 = rng.uniform(0.3, 1.0);
  p.border_c3 = rng.uniform(0.3, 1.0);
  p.border_c5 = rng.uniform(0.3, 1.0);
  p.border_p2 = rng.uniform(0.0, kTau);
  p.border_p3 = rng.uniform(0.0, kTau);
  p.border_p5 = rng.uniform(0.0, kTau);
  p.bg_hue = rng.uniform(0.07, 0.10);
  p.bg_sat = rng.uniform(0.30, 0.42);
  return p;
}

namespace {

// Applies the background tone bucket drawn from `rng` and returns its tag.
std::string apply_tone_bucket(BlobParams& p, Rng& rng) {
  const int bucket = static_cast<int>(rng.uniform_int(kToneBuckets.size()));
  p.bg_val = kToneValues[bucket] + rng.uniform(-0.02, 0.02);
  return kToneBuckets[bucket];
}

void ensure_dirs(const fs::path& out_dir, bool with_masks) {
  fs::create_directories(out_dir / "images");
  if (with_masks) fs::create_directories(out_dir / "masks");
}

}  // namespace

CorpusManifest generate_classification_corpus(const GenOptions& opt,
                                              const fs::path& out_dir) {
  if (opt.n_per_class <= 0 || opt.n_classes <= 0)
    throw ParamError("generate_classification_corpus: counts must be positive");
  if (opt.labeled_fraction < 0.0 || opt.labeled_fraction > 1.0)
    throw ParamError("labeled_fraction must lie in [0, 1]");
  ensure_dirs(out_dir, false);

  CorpusManifest m;
  m.name = "synthetic-classification";
  m.task = "classification";
  m.seed = opt.seed;
  for (int c = 0; c < opt.n_classes; ++c)
    m.label_names.push_back(class_label_name(c));

  const Rng root(mix_seed({0x636c7367656eULL, opt.seed}));
  const int total = opt.n_per_class * opt.n_classes;
  const int train_per_class = (opt.n_per_class + 1) / 2;

  std::vector<int> class_of(total), within(total);
  std::vector<std::string> train_ids, test_ids;
  m.samples.resize(total);
  for (int c = 0; c < opt.n_classes; ++c) {
    const ClassStyle style = class_style(c);
    for (int i = 0; i < opt.n_per_class; ++i) {
      const int idx = c * opt.n_per_class + i;
      Rng srng = root.split(static_cast<uint64_t>(idx));
      BlobParams p = sample_blob_params(style, srng);
      const std::string subgroup = apply_tone_bucket(p, srng);
      ImageF img = render_blob(p, opt.image_size, srng);

      SampleRecord& rec = m.samples[idx];
      rec.sample_id = format_id("cls", idx);
      rec.relative_path = "images/" + rec.sample_id + ".ppm";
      rec.subgroup = subgroup;
      write_pnm(out_dir / rec.relative_path, img);
      class_of[idx] = c;
      within[idx] = i;
      (i < train_per_class ? train_ids : test_ids).push_back(rec.sample_id);
    }
  }
  m.splits["train"] = train_ids;
  m.splits["test"] = test_ids;

  // Exactly floor(labeled_fraction * total) samples carry labels, assigned
  // round-robin over (class, split) cells so coverage stays balanced.
  const int want = static_cast<int>(std::floor(opt.labeled_fraction * total));
  std::vector<std::vector<int>> cells(static_cast<size_t>(opt.n_classes) * 2);
  for (int idx = 0; idx < total; ++idx) {
    const int cell = class_of[idx] * 2 + (within[idx] < train_per_class ? 0 : 1);
    cells[cell].push_back(idx);
  }
  int assigned = 0;
  for (size_t round = 0; assigned < want; ++round) {
    bool any = false;
    for (auto& cell : cells) {
      if (round < cell.size()) {
        any = true;
        if (assigned < want) {
          const int idx = cell[round];
          m.samples[idx].label_ids = {class_of[idx]};
          ++assigned;
        }
      }
    }
    if (!any) break;  // fraction 1.0 exhausts every cell
  }

  m.save(out_dir / "manifest.json");
  return CorpusManifest::load(out_dir / "manifest.json");
}

CorpusManifest generate_segmentation_corpus(const SegGenOptions& opt,
                                            const fs::path& out_dir) {
  if (opt.n_samples <= 0)
    throw ParamError("generate_segmentation_corpus: n_samples must be positive");
  ensure_dirs(out_dir, true);

  CorpusManifest m;
  m.name = "synthetic-segmentation";
  m.task = "segmentation";
  m.seed = opt.seed;
  m.label_names = {"blob"};

  const Rng root(mix_seed({0x73656767656eULL, opt.seed}));
  const int train_count = (opt.n_samples + 1) / 2;
  std::vector<std::string> train_ids, test_ids;
  for (int i = 0; i < opt.n_samples; ++i) {
    Rng srng = root.split(static_cast<uint64_t>(i));
    BlobParams p;
    p.cx = srng.uniform(0.35, 0.65);
    p.cy = srng.uniform(0.35, 0.65);
    p.radius = srng.uniform(0.20, 0.34);
    p.ecc = srng.uniform(0.50, 0.95);
    p.theta = srng.uniform(0.0, kTau / 2.0);
    p.border_amp = srng.uniform(0.05, 0.15);
    p.border_c2 = srng.uniform(0.3, 1.0);
    p.border_c3 = srng.uniform(0.3, 1.0);
    p.border_c5 = srng.uniform(0.3, 1.0);
    p.border_p2 = srng.uniform(0.0, kTau);
    p.border_p3 = srng.uniform(0.0, kTau);
    p.border_p5 = srng.uniform(0.0, kTau);
    p.bg_hue = srng.uniform(0.07, 0.10);
    p.bg_sat = srng.uniform(0.30, 0.42);
    const std::string subgroup = apply_tone_bucket(p, srng);
    // Blob appearance stays in the family of the classification corpus (dark
    // textured interior) but spans a wide contrast range: the faint end keeps
    // the boundary readable mostly through the ripple texture, so flat color
    // thresholds trail texture-aware features.
    p.hue = srng.uniform(0.02, 0.12);
    p.sat = srng.uniform(0.42, 0.62);
    p.val = p.bg_val - srng.uniform(0.10, 0.30);
    p.tex_freq = srng.uniform(5.0, 9.0);
    p.tex_amp = srng.uniform(0.13, 0.19);
    p.tex_phase_u = srng.uniform(0.0, kTau);
    p.tex_phase_v = srng.uniform(0.0, kTau);

    ImageF mask;
    ImageF img = render_blob(p, opt.image_size, srng, &mask);

    SampleRecord rec;
    rec.sample_id = format_id("seg", i);
    rec.relative_path = "images/" + rec.sample_id + ".ppm";
    rec.mask_path = "masks/" + rec.sample_id + ".pgm";
    rec.subgroup = subgroup;
    write_pnm(out_dir / rec.relative_path, img);
    write_pnm(out_dir / rec.mask_path, mask);
    (i < train_count ? train_ids : test_ids).push_back(rec.sample_id);
    m.samples.push_back(std::move(rec));
  }
  m.splits["train"] = train_ids;
  m.splits["test"] = test_ids;
  m.save(out_dir / "manifest.json");
  return CorpusManifest::load(out_dir / "manifest.json");
}

std::string caption_for_params(const BlobParams& p) {
  const char* size_w = p.radius < 0.28 ? "small" : (p.radius < 0.34 ? "medium" : "large");
  const char* shade_w = p.val < 0.40 ? "dark" : "light";
  const char* shape_w = p.ecc > 0.75 ? "round" : "oval";
  const char* tex_w =
      p.tex_amp < 0.07 ? "smooth" : (p.tex_freq < 5.0 ? "coarse" : "fine");
  const char* v_w = p.cy < 0.42 ? "upper" : (p.cy > 0.58 ? "lower" : "middle");
  const char* h_w = p.cx < 0.42 ? "left" : (p.cx > 0.58 ? "right" : "center");
  std::string s;
  s += "a ";
  s += size_w;
  s += " ";
  s += shade_w;
  s += " ";
  s += shape_w;
  s += " blob with ";
  s += tex_w;
  s += " texture in the ";
  s += v_w;
  s += " ";
  s += h_w;
  return s;
}

CorpusManifest generate_caption_corpus(const CaptionGenOptions& opt,
                                       const fs::path& out_dir) {
  if (opt.n_samples <= 0)
    throw ParamError("generate_caption_corpus: n_samples must be positive");
  ensure_dirs(out_dir, false);

  CorpusManifest m;
  m.name = "synthetic-caption";
  m.task = "caption";
  m.seed = opt.seed;

  const Rng root(mix_seed({0x63617067656eULL, opt.seed}));
  const int train_count = (opt.n_samples + 1) / 2;
  std::vector<std::string> train_ids, test_ids;
  for (int i = 0; i < opt.n_samples; ++i) {
    Rng srng = root.split(static_cast<uint64_t>(i));
    const ClassStyle style = class_style(static_cast<int>(srng.uniform_int(6)));
    BlobParams p = sample_blob_params(style, srng);
    // Widen the attribute ranges so every caption word occurs.
    p.cx = srng.uniform(0.30, 0.70);
    p.cy = srng.uniform(0.30, 0.70);
    p.radius = srng.uniform(0.22, 0.40);
    p.tex_amp = srng.uniform(0.03, 0.18);
    const std::string subgroup = apply_tone_bucket(p, srng);
    ImageF img = render_blob(p, opt.image_size, srng);

    SampleRecord rec;
    rec.sample_id = format_id("cap", i);
    rec.relative_path = "images/" + rec.sample_id + ".ppm";
    rec.caption = caption_for_params(p);
    rec.subgroup = subgroup;
    write_pnm(out_dir / rec.relative_path, img);
    (i < train_count ? train_ids : test_ids).push_back(rec.sample_id);
    m.samples.push_back(std::move(rec));
  }
  m.splits["train"] = train_ids;
  m.splits["test"] = test_ids;
  m.save(out_dir / "manifest.json");
  return CorpusManifest::load(out_dir / "manifest.json");
}

}  // namespace hpl
