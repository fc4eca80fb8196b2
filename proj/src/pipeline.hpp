#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "config.hpp"
#include "environment.hpp"
#include "objective.hpp"
#include "preference.hpp"
#include "retrieval.hpp"

namespace collabrag::pipeline {

struct CmdResult {
  nlohmann::json report;
  bool partial = false;  // some questions failed but the run completed
};

// One configured pipeline instance: gateway + cache + lazily loaded corpus.
// Commands are file-in/file-out; every output embeds the config digest.
class Engine {
 public:
  explicit Engine(config::PipelineConfig cfg);

  const config::PipelineConfig& cfg() const { return cfg_; }
  const std::string& config_digest() const { return config_digest_; }
  gateway::ModelGateway& gw() { return *gw_; }

  CmdResult ingest(const std::string& corpus_path, const std::string& index_dir);
  CmdResult run(const std::string& dataset_path, const std::string& format,
                const std::string& out_traces, int limit_override = -1);
  CmdResult sample(const std::string& dataset_path, const std::string& format,
                   const std::string& out_candidates, bool sft_only = false,
                   int limit_override = -1);
  CmdResult build_sft(const std::string& candidates_path,
                      const std::string& out_path, bool include_all = false);
  CmdResult build_prefs(const std::string& candidates_path,
                        const std::string& out_path, int round);
  CmdResult recall(const std::string& traces_path, const std::string& mode,
                   const std::string& dataset_path = "",
                   const std::string& format = "custom");
  CmdResult loss_check(const std::string& pairs_path,
                       const std::string& manifest_path = "");
  CmdResult round(int m, const std::string& dataset_path,
                  const std::string& format, const std::string& runs_dir,
                  int limit_override = -1);
  CmdResult verify(const std::string& file_path);
  CmdResult cache_stats();
  CmdResult cache_clear();

 private:
  const retrieval::CorpusIndex& corpus();
  env::EnvConfig env_config() const;

  config::PipelineConfig cfg_;
  std::string config_digest_;
  std::unique_ptr<gateway::ModelGateway> gw_;
  std::optional<retrieval::CorpusIndex> corpus_;
  std::string corpus_dir_;
};

// Reads a JSONL trace file (one EpisodeTrace per line).
std::vector<env::EpisodeTrace> read_traces(const std::string& path);

// Reads a JSONL candidates file (one CandidateSet per line).
std::vector<prefs::CandidateSet> read_candidate_sets(const std::string& path);

// Reads a JSONL pair-logprob file; throws with the offending line number.
std::vector<objective::PairLogProbs> read_pair_logprobs(const std::string& path);

}  // namespace collabrag::pipeline
