#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace hpl {

// Record of how an output directory was produced: the command, the fully
// resolved configuration, content hashes of every input file, and the seed.
// Deliberately free of timestamps and host details so identical runs write
// identical manifests.
nlohmann::json make_run_manifest(const std::string& command,
                                 const nlohmann::json& resolved_config,
                                 const std::vector<std::filesystem::path>& inputs,
                                 uint64_t seed);

void write_run_manifest(const std::filesystem::path& out_dir,
                        const nlohmann::json& manifest);

nlohmann::json load_run_manifest(const std::filesystem::path& out_dir);

}  // namespace hpl
