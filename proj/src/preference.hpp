#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "environment.hpp"

namespace collabrag::prefs {

// N sampled decompositions for one question, each already scored by the
// environment. Sampling order is preserved; ties break toward the earlier
// sample.
struct Candidate {
  std::string raw_text;
  env::EpisodeTrace trace;

  double reward() const { return trace.reward.u; }
};

struct CandidateSet {
  env::QuestionInstance question;
  std::string prompt;  // the rendered decompose prompt all candidates share
  std::vector<Candidate> candidates;

  nlohmann::json to_json(const std::string& config_digest) const;
  static CandidateSet from_json(const nlohmann::json& j);
};

struct SFTExample {
  std::string prompt;
  std::string target;  // canonical serialized decomposition
  double reward = 0.0;
  std::string question_id;
};

struct PreferencePair {
  std::string prompt;
  std::string chosen;
  std::string rejected;
  double reward_gap = 0.0;
  int round = 0;
  std::string question_id;
};

struct SftStats {
  size_t kept = 0;
  size_t dropped = 0;
  std::map<std::string, size_t> reward_histogram;  // "0", "0.5", "1" buckets
};

struct PrefStats {
  size_t pairs = 0;
  size_t discards = 0;
};

struct SftOptions {
  double min_reward = 0.5;
  bool include_all = false;  // admit every candidate with u >= min_reward
  int t_max = decomp::kDefaultTMax;
};

// Rejection-sampling SFT set: per question the argmax-reward candidate
// (first sample wins ties), kept iff u >= 0.5, target canonically
// re-serialized.
std::pair<std::vector<SFTExample>, SftStats> build_sft(
    std::span<const CandidateSet> sets, const SftOptions& options = {});

// Best-of-N / worst-of-N pairs. A question is discarded exactly when all of
// its candidates score the same reward; every emitted pair has
// u(chosen) > u(rejected) and both sides share the question's prompt.
std::pair<std::vector<PreferencePair>, PrefStats> build_preferences(
    std::span<const CandidateSet> sets, int round);

struct RoundManifest {
  int round = 0;
  int n_samples = 0;
  double temperature = 0.0;
  double beta = 0.0;
  int k = 0;
  std::string dataset_digest;
  std::string config_digest;
  std::string decomposer_id;
  std::string policy_id;     // checkpoint this round's training produces
  std::string reference_id;  // reference model for the DPO objective

  nlohmann::json to_json() const;
  static RoundManifest from_json(const nlohmann::json& j);
  std::string digest() const;
};

struct RoundInputs {
  int n_samples = 5;
  double temperature = 1.0;
  double beta = 0.5;
  int k = 10;
  std::string dataset_digest;
  std::string config_digest;
  std::string decomposer_id;
  std::string sft_checkpoint_id;
};

// Round m's contract for the external trainer: candidates come from the
// policy produced by round m-1 (the SFT checkpoint when m = 0) and that same
// policy is the DPO reference. Rounds m >= 1 require the predecessor
// manifest.
RoundManifest plan_round(int round, const RoundInputs& inputs,
                         const std::optional<RoundManifest>& predecessor);

}  // namespace collabrag::prefs
