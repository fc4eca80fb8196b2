#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "decomp.hpp"

namespace collabrag::metrics {

// Acceptable answer strings for one question. Construction validates that
// the set is non-empty and every alias survives normalization.
struct GoldAnswerSet {
  std::vector<std::string> aliases;

  static GoldAnswerSet from(std::vector<std::string> aliases);
};

struct RewardBreakdown {
  bool format_valid = false;
  int em = 0;
  int acc = 0;
  double u = 0.0;

  bool operator==(const RewardBreakdown&) const = default;
};

// Character classes used by the normalizer. Punctuation is Unicode general
// category P* plus the ASCII symbol specials ($ + < = > ^ ` | ~); whitespace
// is ASCII whitespace plus Unicode Z*.
bool is_punct_codepoint(uint32_t cp);
bool is_space_codepoint(uint32_t cp);

// Lowercase (ASCII), punctuation to spaces, articles (a/an/the) dropped as
// whole tokens, whitespace collapsed, trimmed. Idempotent.
std::string normalize_answer(std::string_view s);
std::vector<std::string> normalize_tokens(std::string_view s);

// 1 iff the normalized prediction equals some normalized alias.
int exact_match(std::string_view pred, const GoldAnswerSet& gold);

// 1 iff some normalized alias occurs as a contiguous token run inside the
// normalized prediction (the relaxed containment reward).
int accuracy(std::string_view pred, const GoldAnswerSet& gold);

// Max over aliases of token-multiset F1 between normalized token bags.
double f1_score(std::string_view pred, const GoldAnswerSet& gold);

// Whether `needle_tokens` occurs contiguously inside `haystack_tokens`.
bool contains_token_run(const std::vector<std::string>& haystack_tokens,
                        const std::vector<std::string>& needle_tokens);

// The composite reward: u = 0.5 * (EM + Acc) when the format verdict is
// valid, 0 otherwise. u is always one of {0, 0.5, 1}.
RewardBreakdown score_episode(std::string_view final_answer,
                              const GoldAnswerSet& gold,
                              const decomp::FormatVerdict& verdict);

}  // namespace collabrag::metrics
