#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace rpd {

// Self-describing weight container: magic, format version, a JSON header
// (kind, architecture id, shapes, hashes), then a flat double blob.
struct ModelFile {
  std::string kind;  // "embedding" | "detector"
  nlohmann::json header;
  std::vector<double> params;
};

constexpr uint32_t kModelFormatVersion = 1;

void save_model_file(const std::string& path, const ModelFile& mf);
ModelFile load_model_file(const std::string& path);

}  // namespace rpd
