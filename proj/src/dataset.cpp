#include "hpl/dataset.hpp"

#include <algorithm>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "hpl/errors.hpp"
#include "hpl/serialize.hpp"

namespace hpl {

using nlohmann::json;

const SampleRecord& CorpusManifest::sample(const std::string& id) const {
  for (const auto& s : samples) {
    if (s.sample_id == id) return s;
  }
  throw DataError("unknown sample_id '" + id + "' in corpus '" + name + "'");
}

bool CorpusManifest::has_sample(const std::string& id) const {
  return std::any_of(samples.begin(), samples.end(),
                     [&](const SampleRecord& s) { return s.sample_id == id; });
}

std::vector<const SampleRecord*> CorpusManifest::split_records(
    const std::string& split) const {
  auto it = splits.find(split);
  if (it == splits.end())
    throw DataError("corpus '" + name + "' has no split '" + split + "'");
  std::unordered_map<std::string, const SampleRecord*> by_id;
  by_id.reserve(samples.size());
  for (const auto& s : samples) by_id.emplace(s.sample_id, &s);
  std::vector<const SampleRecord*> out;
  out.reserve(it->second.size());
  for (const auto& id : it->second) {
    auto f = by_id.find(id);
    if (f == by_id.end())
      throw DataError("split '" + split + "' references unknown sample_id '" +
                      id + "'");
    out.push_back(f->second);
  }
  return out;
}

void CorpusManifest::validate() const {
  if (task != "classification" && task != "segmentation" && task != "caption")
    throw DataError("corpus '" + name + "': unknown task '" + task + "'");

  std::unordered_set<std::string> ids;
  for (const auto& s : samples) {
    if (s.sample_id.empty()) throw DataError("corpus has sample with empty id");
    if (!ids.insert(s.sample_id).second)
      throw DataError("duplicate sample_id '" + s.sample_id + "'");
    if (s.relative_path.empty())
      throw DataError("sample '" + s.sample_id + "' has empty image path");
    for (int lid : s.label_ids) {
      if (lid < 0 || lid >= static_cast<int>(label_names.size()))
        throw DataError("sample '" + s.sample_id + "' label id " +
                        std::to_string(lid) + " outside label_names (size " +
                        std::to_string(label_names.size()) + ")");
    }
    if (task == "segmentation" && s.mask_path.empty())
      throw DataError("segmentation sample '" + s.sample_id +
                      "' is missing mask_path");
    if (task == "caption" && s.caption.empty())
      throw DataError("caption sample '" + s.sample_id +
                      "' is missing a caption");
  }

  // Splits must reference existing ids; no id may appear in two splits.
  std::unordered_map<std::string, std::string> owner;
  for (const auto& [split, members] : splits) {
    std::unordered_set<std::string> seen;
    for (const auto& id : members) {
      if (!ids.count(id))
        throw DataError("split '" + split + "' references unknown sample_id '" +
                        id + "'");
      if (!seen.insert(id).second)
        throw DataError("split '" + split + "' lists sample_id '" + id +
                        "' twice");
      auto [it, inserted] = owner.emplace(id, split);
      if (!inserted)
        throw DataError("sample_id '" + id + "' appears in splits '" +
                        it->second + "' and '" + split + "'");
    }
  }

  if (!root.empty()) {
    for (const auto& s : samples) {
      if (!fs::exists(root / s.relative_path))
        throw DataError("sample '" + s.sample_id + "': missing file '" +
                        s.relative_path + "'");
      if (!s.mask_path.empty() && !fs::exists(root / s.mask_path))
        throw DataError("sample '" + s.sample_id + "': missing mask file '" +
                        s.mask_path + "'");
    }
  }
}

void CorpusManifest::save(const fs::path& manifest_path) const {
  json j;
  j["name"] = name;
  j["task"] = task;
  j["label_names"] = label_names;
  j["seed"] = seed;
  json jsplits = json::object();
  for (const auto& [split, members] : splits) jsplits[split] = members;
  j["splits"] = jsplits;
  json jsamples = json::array();
  for (const auto& s : samples) {
    json js;
    js["sample_id"] = s.sample_id;
    js["path"] = s.relative_path;
    if (!s.label_ids.empty()) js["label_ids"] = s.label_ids;
    if (!s.mask_path.empty()) js["mask_path"] = s.mask_path;
    if (!s.caption.empty()) js["caption"] = s.caption;
    if (!s.subgroup.empty()) js["subgroup"] = s.subgroup;
    jsamples.push_back(std::move(js));
  }
  j["samples"] = std::move(jsamples);
  write_json_file(manifest_path, j);
}

CorpusManifest CorpusManifest::load(const fs::path& manifest_path) {
  json j = read_json_file(manifest_path);
  CorpusManifest m;
  try {
    m.name = j.at("name").get<std::string>();
    m.task = j.at("task").get<std::string>();
    m.label_names = j.at("label_names").get<std::vector<std::string>>();
    m.seed = j.at("seed").get<uint64_t>();
    for (const auto& [split, members] : j.at("splits").items())
      m.splits[split] = members.get<std::vector<std::string>>();
    for (const auto& js : j.at("samples")) {
      SampleRecord s;
      s.sample_id = js.at("sample_id").get<std::string>();
      s.relative_path = js.at("path").get<std::string>();
      if (js.contains("label_ids"))
        s.label_ids = js.at("label_ids").get<std::vector<int>>();
      if (js.contains("mask_path"))
        s.mask_path = js.at("mask_path").get<std::string>();
      if (js.contains("caption")) s.caption = js.at("caption").get<std::string>();
      if (js.contains("subgroup"))
        s.subgroup = js.at("subgroup").get<std::string>();
      m.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw DataError("malformed manifest '" + manifest_path.string() +
                    "': " + e.what());
  }
  m.root = manifest_path.parent_path();
  m.validate();
  return m;
}

ImageF load_sample_image(const CorpusManifest& m, const SampleRecord& rec) {
  fs::path p = m.root / rec.relative_path;
  if (!fs::exists(p))
    throw DataError("sample '" + rec.sample_id + "': missing file '" +
                    rec.relative_path + "'");
  return read_pnm(p);
}

ImageF load_sample_mask(const CorpusManifest& m, const SampleRecord& rec) {
  if (rec.mask_path.empty())
    throw DataError("sample '" + rec.sample_id + "' has no mask");
  fs::path p = m.root / rec.mask_path;
  if (!fs::exists(p))
    throw DataError("sample '" + rec.sample_id + "': missing mask file '" +
                    rec.mask_path + "'");
  ImageF img = read_pnm(p);
  if (img.c != 1)
    throw DataError("mask for sample '" + rec.sample_id +
                    "' must be single-channel");
  for (float& v : img.data) v = v > 0.5f ? 1.0f : 0.0f;
  return img;
}

}  // namespace hpl
