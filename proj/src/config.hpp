#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "decomp.hpp"
#include "gateway.hpp"

namespace collabrag::config {

struct DatasetOptions {
  int eval_slice = 500;  // first-N cap for the large dev sets; 0 = all
  std::map<std::string, int> quotas;  // per-tag training-mixture caps
};

struct RoundOptions {
  std::string sft_checkpoint_id = "sft/checkpoint";
};

struct PipelineConfig {
  int n_samples = 5;
  double beta = 0.5;
  int k = 10;
  int t_max = decomp::kDefaultTMax;
  double sample_temperature = 1.0;
  bool include_history = true;
  int max_tokens = 64;
  int concurrency = 8;
  uint64_t seed = 0;
  std::string cache_dir = ".collabrag-cache";
  std::string index_dir;
  gateway::BackendSpec decomposer;
  gateway::BackendSpec reader;
  DatasetOptions datasets;
  RoundOptions round;

  void validate() const;
  nlohmann::json to_json() const;

  // Effective-config digest; recorded in every output file this config
  // produces.
  std::string digest() const;

  static PipelineConfig from_json(const nlohmann::json& j,
                                  const std::filesystem::path& base_dir = {});
  // overrides: flat JSON object applied on top of the file contents
  // (e.g. {"cache_dir": "...", "concurrency": 4}).
  static PipelineConfig load(const std::filesystem::path& path,
                             const nlohmann::json& overrides = nlohmann::json::object());
  static PipelineConfig defaults_with(const nlohmann::json& overrides);
};

}  // namespace collabrag::config
