#include "hpl/runio.hpp"

#include "hpl/errors.hpp"
#include "hpl/serialize.hpp"
#include "hpl/version.hpp"

namespace hpl {

nlohmann::json make_run_manifest(const std::string& command,
                                 const nlohmann::json& resolved_config,
                                 const std::vector<std::filesystem::path>& inputs,
                                 uint64_t seed) {
  nlohmann::json j;
  j["command"] = command;
  j["config"] = resolved_config;
  j["inputs"] = nlohmann::json::array();
  for (const auto& p : inputs) {
    if (!std::filesystem::exists(p))
      throw DataError("manifest input does not exist: " + p.string());
    j["inputs"].push_back(
        {{"path", p.generic_string()}, {"sha256", Sha256::file_hex(p)}});
  }
  j["seed"] = seed;
  j["version"] = version();
  return j;
}

void write_run_manifest(const std::filesystem::path& out_dir,
                        const nlohmann::json& manifest) {
  std::filesystem::create_directories(out_dir);
  write_json_file(out_dir / "run.json", manifest);
}

nlohmann::json load_run_manifest(const std::filesystem::path& out_dir) {
  return read_json_file(out_dir / "run.json");
}

}  // namespace hpl
