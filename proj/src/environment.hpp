#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "decomp.hpp"
#include "gateway.hpp"
#include "metrics.hpp"
#include "prompts.hpp"
#include "retrieval.hpp"

namespace collabrag::env {

inline constexpr int kTraceSchemaVersion = 1;

struct QuestionInstance {
  std::string id;
  std::string question;
  metrics::GoldAnswerSet gold;
  std::string dataset;

  void validate() const;
};

struct StepRecord {
  int index = 0;
  std::string template_text;
  std::string resolved;
  std::vector<retrieval::Hit> hits;
  std::string answer;
};

struct Provenance {
  std::string decomposer_id;
  std::string reader_id;
  std::string config_digest;
  std::vector<std::string> timestamps;  // reader responses, call order
};

struct EpisodeTrace {
  std::string question_id;
  std::string question;
  std::string dataset;
  std::vector<std::string> gold_aliases;
  std::string raw_decomposition;
  decomp::FormatVerdict verdict;
  std::vector<StepRecord> steps;
  std::string final_answer;
  metrics::RewardBreakdown reward;
  Provenance provenance;
  std::string error;  // non-empty => the episode aborted

  bool ok() const { return error.empty(); }

  nlohmann::json to_json() const;
  static EpisodeTrace from_json(const nlohmann::json& j);

  retrieval::RecallEpisode to_recall_episode() const;
};

struct EnvConfig {
  int k = 10;
  int t_max = decomp::kDefaultTMax;
  int max_tokens = 64;
  bool include_history = true;
  std::string config_digest;
  std::string decomposer_id;  // provenance only
};

// Executes one decomposition against the retrieval store and reader.
// Invalid format: zero steps, empty final answer, u = 0, zero reader calls.
// Valid: resolve -> retrieve -> read for t = 1..T, then one final synthesis
// call; reader-call count is exactly T + 1.
EpisodeTrace run_episode(const QuestionInstance& q,
                         std::string_view raw_decomposition,
                         gateway::ModelGateway& gw,
                         const gateway::BackendSpec& reader,
                         const retrieval::CorpusIndex& corpus,
                         const EnvConfig& cfg,
                         const prompts::PromptBundle& bundle =
                             prompts::PromptBundle::defaults());

struct BatchResult {
  std::vector<EpisodeTrace> traces;  // input order
  size_t failures = 0;
};

// One greedy decomposition per question, then run_episode; episodes run
// concurrently (bounded by `concurrency`); per-question failures become
// error traces and never abort the batch.
BatchResult run_batch(std::span<const QuestionInstance> questions,
                      gateway::ModelGateway& gw,
                      const gateway::BackendSpec& decomposer,
                      const gateway::BackendSpec& reader,
                      const retrieval::CorpusIndex& corpus,
                      const EnvConfig& cfg, int concurrency,
                      const prompts::PromptBundle& bundle =
                          prompts::PromptBundle::defaults());

struct DatasetMetrics {
  size_t questions = 0;
  double em = 0.0;
  double acc = 0.0;
  double f1 = 0.0;
  double mean_u = 0.0;
};

struct MetricReport {
  size_t questions = 0;
  size_t scored = 0;
  size_t errors = 0;
  size_t format_invalid = 0;
  std::optional<DatasetMetrics> overall;  // empty when no scored traces
  std::map<std::string, DatasetMetrics> per_dataset;

  nlohmann::json to_json() const;
};

// Means over scored traces, overall and per dataset tag. Throws
// missing_gold when a trace's question id has no gold entry.
MetricReport evaluate(std::span<const EpisodeTrace> traces,
                      const std::map<std::string, metrics::GoldAnswerSet>& golds);

}  // namespace collabrag::env
