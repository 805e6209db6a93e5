#include <doctest.h>

#include <filesystem>
#include <set>
#include <string>

#include "hpl/datagen.hpp"
#include "hpl/dataset.hpp"
#include "hpl/errors.hpp"
#include "hpl/serialize.hpp"

using namespace hpl;

namespace {

fs::path fresh_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("hpl_datagen_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int count_labeled(const CorpusManifest& m) {
  int n = 0;
  for (const auto& s : m.samples) n += s.labeled() ? 1 : 0;
  return n;
}

}  // namespace

TEST_CASE("classification corpus: counts, splits, determinism") {
  GenOptions opt;
  opt.n_per_class = 10;
  opt.n_classes = 3;
  opt.image_size = 32;
  opt.labeled_fraction = 1.0;
  opt.seed = 7;

  const fs::path dir_a = fresh_dir("cls_a");
  CorpusManifest a = generate_classification_corpus(opt, dir_a);
  CHECK(a.samples.size() == 30);
  CHECK(a.label_names.size() == 3);
  CHECK(a.splits.at("train").size() == 15);
  CHECK(a.splits.at("test").size() == 15);
  CHECK(count_labeled(a) == 30);

  // Same options elsewhere: every image byte-identical.
  const fs::path dir_b = fresh_dir("cls_b");
  CorpusManifest b = generate_classification_corpus(opt, dir_b);
  for (const auto& s : a.samples) {
    CHECK(Sha256::file_hex(dir_a / s.relative_path) ==
          Sha256::file_hex(dir_b / s.relative_path));
  }

  // A different seed must change pixel content.
  GenOptions opt2 = opt;
  opt2.seed = 8;
  const fs::path dir_c = fresh_dir("cls_c");
  CorpusManifest c = generate_classification_corpus(opt2, dir_c);
  bool any_diff = false;
  for (size_t i = 0; i < a.samples.size(); ++i)
    if (Sha256::file_hex(dir_a / a.samples[i].relative_path) !=
        Sha256::file_hex(dir_c / c.samples[i].relative_path))
      any_diff = true;
  CHECK(any_diff);

  // Subgroup tags populated from the tone buckets.
  std::set<std::string> groups;
  for (const auto& s : a.samples) {
    CHECK(!s.subgroup.empty());
    groups.insert(s.subgroup);
  }
  CHECK(groups.size() >= 2);
  for (const auto& g : groups)
    CHECK(std::find(kToneBuckets.begin(), kToneBuckets.end(), g) !=
          kToneBuckets.end());
}

TEST_CASE("classification corpus: labeled_fraction is exact") {
  GenOptions opt;
  opt.n_per_class = 10;
  opt.n_classes = 5;
  opt.image_size = 16;
  opt.seed = 3;

  opt.labeled_fraction = 0.0;
  CHECK(count_labeled(generate_classification_corpus(opt, fresh_dir("f0"))) == 0);

  opt.labeled_fraction = 0.5;
  CorpusManifest half = generate_classification_corpus(opt, fresh_dir("f50"));
  CHECK(count_labeled(half) == 25);

  // Coverage is balanced: every (class, split) cell holds 2 or 3 labels.
  for (int cls = 0; cls < 5; ++cls) {
    for (const char* split : {"train", "test"}) {
      int n = 0;
      for (const auto* rec : half.split_records(split))
        if (rec->labeled() && rec->label_ids[0] == cls) ++n;
      CHECK(n >= 2);
      CHECK(n <= 3);
    }
  }

  opt.labeled_fraction = 0.33;
  CHECK(count_labeled(generate_classification_corpus(opt, fresh_dir("f33"))) ==
        16);  // floor(0.33 * 50)
}

TEST_CASE("manifest round trip and validation errors") {
  GenOptions opt;
  opt.n_per_class = 4;
  opt.n_classes = 2;
  opt.image_size = 16;
  opt.labeled_fraction = 1.0;
  opt.seed = 11;
  const fs::path dir = fresh_dir("roundtrip");
  CorpusManifest m = generate_classification_corpus(opt, dir);

  CorpusManifest re = CorpusManifest::load(dir / "manifest.json");
  CHECK(re.name == m.name);
  CHECK(re.task == m.task);
  CHECK(re.seed == m.seed);
  CHECK(re.label_names == m.label_names);
  CHECK(re.splits == m.splits);
  REQUIRE(re.samples.size() == m.samples.size());
  for (size_t i = 0; i < m.samples.size(); ++i) {
    CHECK(re.samples[i].sample_id == m.samples[i].sample_id);
    CHECK(re.samples[i].relative_path == m.samples[i].relative_path);
    CHECK(re.samples[i].label_ids == m.samples[i].label_ids);
    CHECK(re.samples[i].subgroup == m.samples[i].subgroup);
  }

  // Overlapping splits must be rejected.
  CorpusManifest bad = m;
  bad.splits["test"].push_back(bad.splits["train"].front());
  CHECK_THROWS_AS(bad.validate(), DataError);

  // A split naming a nonexistent sample must be rejected.
  CorpusManifest bad2 = m;
  bad2.splits["train"].push_back("cls-99999");
  CHECK_THROWS_AS(bad2.validate(), DataError);

  // Deleting an image makes the reload fail, naming the sample.
  const std::string victim = m.samples[2].sample_id;
  fs::remove(dir / m.samples[2].relative_path);
  try {
    CorpusManifest::load(dir / "manifest.json");
    FAIL("expected load to reject the missing file");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(victim) != std::string::npos);
  }
}

TEST_CASE("render_blob: mask equals painted support exactly") {
  BlobParams p;
  p.cx = 0.52;
  p.cy = 0.47;
  p.radius = 0.3;
  p.ecc = 0.7;
  p.theta = 0.9;
  p.border_amp = 0.12;
  p.border_c2 = 0.8;
  p.border_c3 = 0.5;
  p.border_c5 = 0.9;
  p.border_p2 = 1.0;
  p.border_p3 = 2.0;
  p.border_p5 = 3.0;
  p.noise_sigma = 0.0;  // deterministic paint
  p.tex_amp = 0.0;
  p.val = 0.35;

  Rng rng_a(1), rng_b(1);
  ImageF mask;
  ImageF img_a = render_blob(p, 48, rng_a, &mask);
  BlobParams q = p;
  q.val = 0.55;  // only the blob interior may change
  ImageF img_b = render_blob(q, 48, rng_b);

  long inside = 0;
  for (long y = 0; y < 48; ++y) {
    for (long x = 0; x < 48; ++x) {
      const bool changed = img_a.at(y, x, 0) != img_b.at(y, x, 0) ||
                           img_a.at(y, x, 1) != img_b.at(y, x, 1) ||
                           img_a.at(y, x, 2) != img_b.at(y, x, 2);
      CHECK(changed == (mask.at(y, x, 0) == 1.0f));
      inside += mask.at(y, x, 0) == 1.0f ? 1 : 0;
    }
  }
  CHECK(inside > 100);          // the blob is actually visible
  CHECK(inside < 48 * 48 / 2);  // and does not swallow the frame
}

TEST_CASE("segmentation corpus: masks stored losslessly") {
  SegGenOptions opt;
  opt.n_samples = 8;
  opt.image_size = 32;
  opt.seed = 5;
  const fs::path dir = fresh_dir("seg");
  CorpusManifest m = generate_segmentation_corpus(opt, dir);
  CHECK(m.samples.size() == 8);
  CHECK(m.splits.at("train").size() == 4);
  for (const auto& s : m.samples) {
    ImageF mask = load_sample_mask(m, s);
    CHECK(mask.c == 1);
    long on = 0;
    for (float v : mask.data) {
      CHECK((v == 0.0f || v == 1.0f));
      on += v == 1.0f ? 1 : 0;
    }
    CHECK(on > 0);
    CHECK(on < mask.h * mask.w);
  }
}

TEST_CASE("image files survive a read round trip bit-exactly") {
  GenOptions opt;
  opt.n_per_class = 2;
  opt.n_classes = 2;
  opt.image_size = 24;
  opt.labeled_fraction = 1.0;
  opt.seed = 2;
  const fs::path dir = fresh_dir("bits");
  CorpusManifest m = generate_classification_corpus(opt, dir);
  for (const auto& s : m.samples) {
    ImageF img = load_sample_image(m, s);
    const fs::path copy = dir / (s.sample_id + "_copy.ppm");
    write_pnm(copy, img);
    CHECK(Sha256::file_hex(dir / s.relative_path) == Sha256::file_hex(copy));
  }
}

TEST_CASE("caption text is a pure function of the parameters") {
  BlobParams p;
  p.radius = 0.25;
  p.val = 0.30;
  p.ecc = 0.90;
  p.tex_amp = 0.10;
  p.tex_freq = 7.0;
  p.cx = 0.30;
  p.cy = 0.30;
  CHECK(caption_for_params(p) ==
        "a small dark round blob with fine texture in the upper left");

  p.radius = 0.38;
  p.val = 0.45;
  p.ecc = 0.55;
  p.tex_amp = 0.05;
  p.cx = 0.65;
  p.cy = 0.50;
  CHECK(caption_for_params(p) ==
        "a large light oval blob with smooth texture in the middle right");

  CaptionGenOptions opt;
  opt.n_samples = 30;
  opt.image_size = 32;
  opt.seed = 9;
  CorpusManifest m = generate_caption_corpus(opt, fresh_dir("cap"));
  const std::set<std::string> vocab = {
      "a",      "small",  "medium", "large", "dark",   "light",
      "round",  "oval",   "blob",   "with",  "smooth", "coarse",
      "fine",   "texture","in",     "the",   "upper",  "lower",
      "middle", "left",   "right",  "center"};
  for (const auto& s : m.samples) {
    REQUIRE(!s.caption.empty());
    std::string word;
    for (char ch : s.caption + " ") {
      if (ch == ' ') {
        if (!word.empty()) CHECK(vocab.count(word) == 1);
        word.clear();
      } else {
        word.push_back(ch);
      }
    }
  }
}
