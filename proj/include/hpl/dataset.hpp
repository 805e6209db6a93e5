#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hpl/image.hpp"

namespace hpl {

// One manifest entry. label_ids empty = unlabeled; mask_path / caption /
// subgroup are optional depending on the task.
struct SampleRecord {
  std::string sample_id;
  std::string relative_path;
  std::vector<int> label_ids;
  std::string mask_path;
  std::string caption;
  std::string subgroup;

  bool labeled() const { return !label_ids.empty(); }
};

struct CorpusManifest {
  std::string name;
  std::string task;  // classification | segmentation | caption
  std::vector<std::string> label_names;
  uint64_t seed = 0;
  std::map<std::string, std::vector<std::string>> splits;
  std::vector<SampleRecord> samples;
  fs::path root;  // directory holding manifest.json; not serialized

  const SampleRecord& sample(const std::string& id) const;
  bool has_sample(const std::string& id) const;
  std::vector<const SampleRecord*> split_records(const std::string& split) const;

  // Enforces: unique ids, splits reference existing ids and are pairwise
  // disjoint, label ids within label_names, referenced files exist.
  void validate() const;

  void save(const fs::path& manifest_path) const;
  static CorpusManifest load(const fs::path& manifest_path);
};

ImageF load_sample_image(const CorpusManifest& m, const SampleRecord& rec);
// Binary mask as 0/1 floats (single channel).
ImageF load_sample_mask(const CorpusManifest& m, const SampleRecord& rec);

}  // namespace hpl
