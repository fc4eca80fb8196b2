#include "config.hpp"

#include <fstream>

#include "digest.hpp"
#include "error.hpp"

namespace collabrag::config {

namespace {

using nlohmann::json;

json merge(json base, const json& overrides) {
  for (const auto& [key, value] : overrides.items()) {
    if (value.is_object() && base.contains(key) && base[key].is_object()) {
      base[key] = merge(base[key], value);
    } else {
      base[key] = value;
    }
  }
  return base;
}

}  // namespace

void PipelineConfig::validate() const {
  if (n_samples < 1) raise(ErrorCode::invalid_argument, "N must be >= 1");
  if (!(beta > 0.0)) raise(ErrorCode::invalid_argument, "beta must be positive");
  if (k < 1) raise(ErrorCode::invalid_argument, "k must be >= 1");
  if (t_max < 1) raise(ErrorCode::invalid_argument, "t_max must be >= 1");
  if (sample_temperature < 0.0) {
    raise(ErrorCode::invalid_argument, "sample temperature must be >= 0");
  }
  if (max_tokens < 1) raise(ErrorCode::invalid_argument, "max_tokens must be >= 1");
  if (concurrency < 1) raise(ErrorCode::invalid_argument, "concurrency must be >= 1");
  if (datasets.eval_slice < 0) {
    raise(ErrorCode::invalid_argument, "eval_slice must be >= 0");
  }
}

json PipelineConfig::to_json() const {
  json quotas = json::object();
  for (const auto& [tag, count] : datasets.quotas) quotas[tag] = count;
  return json{
      {"n_samples", n_samples},
      {"beta", beta},
      {"k", k},
      {"t_max", t_max},
      {"sample_temperature", sample_temperature},
      {"include_history", include_history},
      {"max_tokens", max_tokens},
      {"concurrency", concurrency},
      {"seed", seed},
      {"cache_dir", cache_dir},
      {"index_dir", index_dir},
      {"decomposer", decomposer.to_json()},
      {"reader", reader.to_json()},
      {"datasets",
       {{"eval_slice", datasets.eval_slice}, {"quotas", quotas}}},
      {"round", {{"sft_checkpoint_id", round.sft_checkpoint_id}}},
  };
}

std::string PipelineConfig::digest() const { return sha256_hex(to_json().dump()); }

PipelineConfig PipelineConfig::from_json(const json& j,
                                         const std::filesystem::path& base_dir) {
  if (!j.is_object()) {
    raise(ErrorCode::parse, "config must be a JSON object");
  }
  PipelineConfig cfg;
  cfg.n_samples = j.value("n_samples", cfg.n_samples);
  cfg.beta = j.value("beta", cfg.beta);
  cfg.k = j.value("k", cfg.k);
  cfg.t_max = j.value("t_max", cfg.t_max);
  cfg.sample_temperature = j.value("sample_temperature", cfg.sample_temperature);
  cfg.include_history = j.value("include_history", cfg.include_history);
  cfg.max_tokens = j.value("max_tokens", cfg.max_tokens);
  cfg.concurrency = j.value("concurrency", cfg.concurrency);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.cache_dir = j.value("cache_dir", cfg.cache_dir);
  cfg.index_dir = j.value("index_dir", cfg.index_dir);
  if (j.contains("decomposer")) {
    cfg.decomposer = gateway::BackendSpec::from_json(j["decomposer"], base_dir);
  }
  if (j.contains("reader")) {
    cfg.reader = gateway::BackendSpec::from_json(j["reader"], base_dir);
  }
  if (j.contains("datasets")) {
    const json& d = j["datasets"];
    cfg.datasets.eval_slice = d.value("eval_slice", cfg.datasets.eval_slice);
    for (const auto& [tag, count] : d.value("quotas", json::object()).items()) {
      cfg.datasets.quotas[tag] = count.get<int>();
    }
  }
  if (j.contains("round")) {
    cfg.round.sft_checkpoint_id =
        j["round"].value("sft_checkpoint_id", cfg.round.sft_checkpoint_id);
  }
  cfg.validate();
  return cfg;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path,
                                    const json& overrides) {
  std::ifstream in(path);
  if (!in) {
    raise(ErrorCode::io, "cannot open config file: " + path.string());
  }
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) {
    raise(ErrorCode::parse, "config is not valid JSON: " + path.string());
  }
  return from_json(merge(std::move(j), overrides), path.parent_path());
}

PipelineConfig PipelineConfig::defaults_with(const json& overrides) {
  return from_json(merge(json::object(), overrides));
}

}  // namespace collabrag::config
