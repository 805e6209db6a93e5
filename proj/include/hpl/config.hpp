#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "hpl/datagen.hpp"
#include "hpl/pretrain.hpp"

namespace hpl {

using nlohmann::json;

// Every section parser rejects keys it does not know, so typos in config
// files or --override paths fail loudly instead of silently using defaults.
void check_keys(const json& j, const std::vector<std::string>& allowed,
                const std::string& context);

json gen_options_json(const GenOptions& o);
GenOptions gen_options_from_json(const json& j);
json seg_gen_options_json(const SegGenOptions& o);
SegGenOptions seg_gen_options_from_json(const json& j);
json caption_gen_options_json(const CaptionGenOptions& o);
CaptionGenOptions caption_gen_options_from_json(const json& j);

json head_config_json(const HeadConfig& c);
HeadConfig head_config_from_json(const json& j);
json loss_weights_json(const LossWeights& w);
LossWeights loss_weights_from_json(const json& j);
json crop_config_json(const CropConfig& c);
CropConfig crop_config_from_json(const json& j);
json mask_config_json(const MaskConfig& c);
MaskConfig mask_config_from_json(const json& j);
json train_config_json(const TrainConfig& c);
TrainConfig train_config_from_json(const json& j);

json pretrain_options_json(const PretrainOptions& o);
PretrainOptions pretrain_options_from_json(const json& j);

// Applies "dotted.path=value" onto a config tree. The path must resolve to
// an existing leaf (or a key inside an existing object); the value is parsed
// as JSON when possible and falls back to a plain string.
void apply_override(json& config, const std::string& assignment);

// Reads a JSON config file and applies overrides in order.
json load_config_file(const fs::path& path,
                      const std::vector<std::string>& overrides);

}  // namespace hpl
