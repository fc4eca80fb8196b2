#include "objective.hpp"

#include <cmath>

#include "error.hpp"

namespace collabrag::objective {

namespace {

void validate_side(const TokenLogProbTrace& policy,
                   const TokenLogProbTrace& reference, const char* side) {
  if (policy.logprobs.size() != reference.logprobs.size()) {
    raise(ErrorCode::invalid_argument,
          std::string(side) + " policy/reference traces differ in length (" +
              std::to_string(policy.logprobs.size()) + " vs " +
              std::to_string(reference.logprobs.size()) + ")");
  }
  if (!policy.tokens.empty() && !reference.tokens.empty() &&
      policy.tokens != reference.tokens) {
    raise(ErrorCode::invalid_argument,
          std::string(side) + " policy/reference token sequences differ");
  }
}

}  // namespace

double pairwise_sum(std::span<const double> values) {
  if (values.size() <= 16) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

void TokenLogProbTrace::validate() const {
  if (!tokens.empty() && tokens.size() != logprobs.size()) {
    raise(ErrorCode::invalid_argument,
          "token and logprob sequences differ in length");
  }
  for (double lp : logprobs) {
    if (!(lp <= 0.0)) {
      raise(ErrorCode::invalid_argument,
            "log-probability must be <= 0, got " + std::to_string(lp));
    }
  }
}

double TokenLogProbTrace::sequence_logprob() const {
  return pairwise_sum(logprobs);
}

void PairLogProbs::validate() const {
  chosen_policy.validate();
  chosen_reference.validate();
  rejected_policy.validate();
  rejected_reference.validate();
  validate_side(chosen_policy, chosen_reference, "chosen");
  validate_side(rejected_policy, rejected_reference, "rejected");
}

double log_sigmoid(double x) {
  // log sigma(x) = -softplus(-x) = -(max(-x,0) + log1p(exp(-|x|)))
  return -(std::max(-x, 0.0) + std::log1p(std::exp(-std::abs(x))));
}

double sft_loss(std::span<const TokenLogProbTrace> traces) {
  if (traces.empty()) {
    raise(ErrorCode::invalid_argument, "sft_loss requires at least one trace");
  }
  std::vector<double> per_trace;
  per_trace.reserve(traces.size());
  for (const TokenLogProbTrace& t : traces) {
    t.validate();
    per_trace.push_back(-t.sequence_logprob());
  }
  return pairwise_sum(per_trace) / static_cast<double>(per_trace.size());
}

double implicit_reward_margin(const PairLogProbs& pair, double beta) {
  if (!(beta > 0.0)) {
    raise(ErrorCode::invalid_argument, "beta must be positive");
  }
  double delta_chosen = pair.chosen_policy.sequence_logprob() -
                        pair.chosen_reference.sequence_logprob();
  double delta_rejected = pair.rejected_policy.sequence_logprob() -
                          pair.rejected_reference.sequence_logprob();
  return beta * (delta_chosen - delta_rejected);
}

double dpo_loss(std::span<const PairLogProbs> pairs, double beta) {
  if (!(beta > 0.0)) {
    raise(ErrorCode::invalid_argument, "beta must be positive");
  }
  if (pairs.empty()) {
    raise(ErrorCode::invalid_argument, "dpo_loss requires at least one pair");
  }
  std::vector<double> per_pair;
  per_pair.reserve(pairs.size());
  for (const PairLogProbs& pair : pairs) {
    pair.validate();
    per_pair.push_back(-log_sigmoid(implicit_reward_margin(pair, beta)));
  }
  return pairwise_sum(per_pair) / static_cast<double>(per_pair.size());
}

}  // namespace collabrag::objective
