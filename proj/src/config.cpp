#include "hpl/config.hpp"

#include <algorithm>

#include "hpl/errors.hpp"
#include "hpl/serialize.hpp"

namespace hpl {

void check_keys(const json& j, const std::vector<std::string>& allowed,
                const std::string& context) {
  if (!j.is_object()) throw ParamError("config: " + context + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw ParamError("config: unknown key '" + it.key() + "' in " + context);
  }
}

namespace {

std::pair<double, double> pair_from(const json& j, const std::string& context) {
  if (!j.is_array() || j.size() != 2)
    throw ParamError("config: " + context + " must be a [lo, hi] pair");
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

json gen_options_json(const GenOptions& o) {
  return {{"n_per_class", o.n_per_class},
          {"n_classes", o.n_classes},
          {"image_size", o.image_size},
          {"labeled_fraction", o.labeled_fraction},
          {"seed", o.seed}};
}

GenOptions gen_options_from_json(const json& j) {
  check_keys(j, {"n_per_class", "n_classes", "image_size", "labeled_fraction", "seed"},
             "gen options");
  GenOptions o;
  o.n_per_class = j.value("n_per_class", o.n_per_class);
  o.n_classes = j.value("n_classes", o.n_classes);
  o.image_size = j.value("image_size", o.image_size);
  o.labeled_fraction = j.value("labeled_fraction", o.labeled_fraction);
  o.seed = j.value("seed", o.seed);
  return o;
}

json seg_gen_options_json(const SegGenOptions& o) {
  return {{"n_samples", o.n_samples}, {"image_size", o.image_size}, {"seed", o.seed}};
}

SegGenOptions seg_gen_options_from_json(const json& j) {
  check_keys(j, {"n_samples", "image_size", "seed"}, "seg gen options");
  SegGenOptions o;
  o.n_samples = j.value("n_samples", o.n_samples);
  o.image_size = j.value("image_size", o.image_size);
  o.seed = j.value("seed", o.seed);
  return o;
}

json caption_gen_options_json(const CaptionGenOptions& o) {
  return {{"n_samples", o.n_samples}, {"image_size", o.image_size}, {"seed", o.seed}};
}

CaptionGenOptions caption_gen_options_from_json(const json& j) {
  check_keys(j, {"n_samples", "image_size", "seed"}, "caption gen options");
  CaptionGenOptions o;
  o.n_samples = j.value("n_samples", o.n_samples);
  o.image_size = j.value("image_size", o.image_size);
  o.seed = j.value("seed", o.seed);
  return o;
}

json head_config_json(const HeadConfig& c) {
  return {{"hidden_dims", c.hidden_dims},
          {"bottleneck_dim", c.bottleneck_dim},
          {"n_prototypes", c.n_prototypes},
          {"student_temp", c.student_temp},
          {"teacher_temp", c.teacher_temp}};
}

HeadConfig head_config_from_json(const json& j) {
  check_keys(j, {"hidden_dims", "bottleneck_dim", "n_prototypes", "student_temp",
                 "teacher_temp"},
             "head config");
  HeadConfig c;
  c.hidden_dims = j.value("hidden_dims", c.hidden_dims);
  c.bottleneck_dim = j.value("bottleneck_dim", c.bottleneck_dim);
  c.n_prototypes = j.value("n_prototypes", c.n_prototypes);
  c.student_temp = j.value("student_temp", c.student_temp);
  c.teacher_temp = j.value("teacher_temp", c.teacher_temp);
  return c;
}

json loss_weights_json(const LossWeights& w) {
  return {{"image", w.w_image}, {"patch", w.w_patch}, {"koleo", w.w_koleo}, {"sup", w.w_sup}};
}

LossWeights loss_weights_from_json(const json& j) {
  check_keys(j, {"image", "patch", "koleo", "sup"}, "loss weights");
  LossWeights w;
  w.w_image = j.value("image", w.w_image);
  w.w_patch = j.value("patch", w.w_patch);
  w.w_koleo = j.value("koleo", w.w_koleo);
  w.w_sup = j.value("sup", w.w_sup);
  return w;
}

json crop_config_json(const CropConfig& c) {
  return {{"n_global", c.n_global},
          {"n_local", c.n_local},
          {"global_size", c.global_size},
          {"local_size", c.local_size},
          {"global_scale", {c.global_scale.first, c.global_scale.second}},
          {"local_scale", {c.local_scale.first, c.local_scale.second}},
          {"hflip", c.hflip},
          {"jitter_strength", c.jitter_strength},
          {"grayscale_prob", c.grayscale_prob},
          {"blur_prob", c.blur_prob}};
}

CropConfig crop_config_from_json(const json& j) {
  check_keys(j, {"n_global", "n_local", "global_size", "local_size", "global_scale",
                 "local_scale", "hflip", "jitter_strength", "grayscale_prob",
                 "blur_prob"},
             "crop config");
  CropConfig c;
  c.n_global = j.value("n_global", c.n_global);
  c.n_local = j.value("n_local", c.n_local);
  c.global_size = j.value("global_size", c.global_size);
  c.local_size = j.value("local_size", c.local_size);
  if (j.contains("global_scale")) c.global_scale = pair_from(j["global_scale"], "global_scale");
  if (j.contains("local_scale")) c.local_scale = pair_from(j["local_scale"], "local_scale");
  c.hflip = j.value("hflip", c.hflip);
  c.jitter_strength = j.value("jitter_strength", c.jitter_strength);
  c.grayscale_prob = j.value("grayscale_prob", c.grayscale_prob);
  c.blur_prob = j.value("blur_prob", c.blur_prob);
  return c;
}

json mask_config_json(const MaskConfig& c) {
  return {{"probability", c.mask_probability},
          {"ratio_range", {c.ratio_range.first, c.ratio_range.second}},
          {"block_min", c.block_min}};
}

MaskConfig mask_config_from_json(const json& j) {
  check_keys(j, {"probability", "ratio_range", "block_min"}, "mask config");
  MaskConfig c;
  c.mask_probability = j.value("probability", c.mask_probability);
  if (j.contains("ratio_range")) c.ratio_range = pair_from(j["ratio_range"], "ratio_range");
  c.block_min = j.value("block_min", c.block_min);
  return c;
}

json train_config_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"base_lr", c.base_lr},
          {"final_lr", c.final_lr},
          {"warmup_fraction", c.warmup_fraction},
          {"weight_decay", c.weight_decay},
          {"optimizer", c.optimizer},
          {"momentum_schedule", {c.momentum_schedule.first, c.momentum_schedule.second}},
          {"teacher_temp_schedule",
           {{"start", c.teacher_temp.start},
            {"end", c.teacher_temp.end},
            {"warmup_epochs", c.teacher_temp.warmup_epochs}}},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j) {
  check_keys(j, {"epochs", "batch_size", "base_lr", "final_lr", "warmup_fraction",
                 "weight_decay", "optimizer", "momentum_schedule",
                 "teacher_temp_schedule", "seed"},
             "train config");
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.base_lr = j.value("base_lr", c.base_lr);
  c.final_lr = j.value("final_lr", c.final_lr);
  c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.optimizer = j.value("optimizer", c.optimizer);
  if (j.contains("momentum_schedule"))
    c.momentum_schedule = pair_from(j["momentum_schedule"], "momentum_schedule");
  if (j.contains("teacher_temp_schedule")) {
    const json& t = j["teacher_temp_schedule"];
    check_keys(t, {"start", "end", "warmup_epochs"}, "teacher_temp_schedule");
    c.teacher_temp.start = t.value("start", c.teacher_temp.start);
    c.teacher_temp.end = t.value("end", c.teacher_temp.end);
    c.teacher_temp.warmup_epochs = t.value("warmup_epochs", c.teacher_temp.warmup_epochs);
  }
  c.seed = j.value("seed", c.seed);
  return c;
}

json pretrain_options_json(const PretrainOptions& o) {
  return {{"vit", vit_config_json(o.vit)},
          {"head", head_config_json(o.head)},
          {"loss_weights", loss_weights_json(o.loss_weights)},
          {"crops", crop_config_json(o.crops)},
          {"mask", mask_config_json(o.mask)},
          {"train", train_config_json(o.train)},
          {"merge_threshold", o.merge_threshold},
          {"sinkhorn_iters", o.sinkhorn_iters}};
}

PretrainOptions pretrain_options_from_json(const json& j) {
  check_keys(j, {"vit", "head", "loss_weights", "crops", "mask", "train",
                 "merge_threshold", "sinkhorn_iters"},
             "pretrain options");
  PretrainOptions o;
  if (j.contains("vit")) {
    check_keys(j["vit"],
               {"image_size", "patch_size", "dim", "depth", "heads", "mlp_ratio"},
               "vit config");
    json full = vit_config_json(o.vit);  // defaults for omitted keys
    full.update(j["vit"]);
    o.vit = vit_config_from_json(full);
  }
  if (j.contains("head")) o.head = head_config_from_json(j["head"]);
  if (j.contains("loss_weights")) o.loss_weights = loss_weights_from_json(j["loss_weights"]);
  if (j.contains("crops")) o.crops = crop_config_from_json(j["crops"]);
  if (j.contains("mask")) o.mask = mask_config_from_json(j["mask"]);
  if (j.contains("train")) o.train = train_config_from_json(j["train"]);
  o.merge_threshold = j.value("merge_threshold", o.merge_threshold);
  o.sinkhorn_iters = j.value("sinkhorn_iters", o.sinkhorn_iters);
  return o;
}

void apply_override(json& config, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ParamError("override '" + assignment + "' is not of the form path=value");
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  std::vector<std::string> parts;
  size_t begin = 0;
  while (begin <= path.size()) {
    const size_t dot = path.find('.', begin);
    const std::string piece =
        path.substr(begin, dot == std::string::npos ? std::string::npos : dot - begin);
    if (piece.empty()) throw ParamError("override path '" + path + "' has an empty segment");
    parts.push_back(piece);
    if (dot == std::string::npos) break;
    begin = dot + 1;
  }

  json* node = &config;
  for (size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i]))
      throw ParamError("override path '" + path + "': no section '" + parts[i] + "'");
    node = &(*node)[parts[i]];
  }
  if (!node->is_object())
    throw ParamError("override path '" + path + "' does not land in an object");

  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;  // unquoted strings pass through verbatim
  }
  (*node)[parts.back()] = std::move(value);
}

json load_config_file(const fs::path& path, const std::vector<std::string>& overrides) {
  json config = read_json_file(path);
  if (!config.is_object())
    throw DataError("config file " + path.string() + " must hold a JSON object");
  for (const auto& ov : overrides) apply_override(config, ov);
  return config;
}

}  // namespace hpl
