#pragma once

#include <span>
#include <string>
#include <vector>

namespace collabrag::objective {

// Per-token log-probabilities of one serialized decomposition under one
// model. Token strings are optional (the loss only needs the numbers); when
// present they must match logprobs in length.
struct TokenLogProbTrace {
  std::vector<std::string> tokens;
  std::vector<double> logprobs;

  double sequence_logprob() const;
  void validate() const;
};

// One preference pair scored under the policy and its reference. The chosen
// traces share a token sequence across policy/reference, likewise rejected.
struct PairLogProbs {
  TokenLogProbTrace chosen_policy;
  TokenLogProbTrace chosen_reference;
  TokenLogProbTrace rejected_policy;
  TokenLogProbTrace rejected_reference;
  std::string pair_id;
  int round = 0;

  void validate() const;
};

// Pairwise (tree) summation; order-stable and low-error for long batches.
double pairwise_sum(std::span<const double> values);

// log(sigmoid(x)) via the softplus identity; finite for |x| up to 1e4 and far
// beyond.
double log_sigmoid(double x);

// Next-token prediction loss: mean over traces of the negated sum of token
// logprobs.
double sft_loss(std::span<const TokenLogProbTrace> traces);

// beta * (delta_chosen - delta_rejected), where delta is the policy-minus-
// reference sequence log-ratio. Positive margin <=> pair loss below ln 2.
double implicit_reward_margin(const PairLogProbs& pair, double beta);

// Iterative DPO loss: mean over pairs of -log sigmoid(margin).
double dpo_loss(std::span<const PairLogProbs> pairs, double beta);

}  // namespace collabrag::objective
