#include "metrics.hpp"

#include <algorithm>
#include <unordered_map>

#include "error.hpp"

namespace collabrag::metrics {

namespace {

struct CpRange {
  uint32_t lo, hi;
};

// Unicode general category P*, generated from the Unicode character database.
constexpr CpRange kPunctRanges[] = {
#include "unicode_punct_ranges.inc"
};

// ASCII characters conventionally stripped by QA normalizers that fall under
// Unicode S* rather than P*.
constexpr char kAsciiSymbolPunct[] = {'$', '+', '<', '=', '>', '^', '`', '|', '~'};

// Unicode Z* separators.
constexpr CpRange kSpaceRanges[] = {
    {0x20, 0x20},     {0xA0, 0xA0},    {0x1680, 0x1680}, {0x2000, 0x200A},
    {0x2028, 0x2029}, {0x202F, 0x202F}, {0x205F, 0x205F}, {0x3000, 0x3000},
};

bool in_ranges(const CpRange* ranges, size_t n, uint32_t cp) {
  size_t lo = 0, hi = n;
  while (lo < hi) {
    size_t mid = (lo + hi) / 2;
    if (cp < ranges[mid].lo) {
      hi = mid;
    } else if (cp > ranges[mid].hi) {
      lo = mid + 1;
    } else {
      return true;
    }
  }
  return false;
}

// Decodes one UTF-8 codepoint at `i`; malformed bytes decode as themselves
// (single-byte latin-1 fallback) so normalization never fails.
std::pair<uint32_t, size_t> decode_utf8(std::string_view s, size_t i) {
  unsigned char c = static_cast<unsigned char>(s[i]);
  if (c < 0x80) return {c, 1};
  size_t len = 0;
  uint32_t cp = 0;
  if ((c & 0xE0) == 0xC0) {
    len = 2;
    cp = c & 0x1F;
  } else if ((c & 0xF0) == 0xE0) {
    len = 3;
    cp = c & 0x0F;
  } else if ((c & 0xF8) == 0xF0) {
    len = 4;
    cp = c & 0x07;
  } else {
    return {c, 1};
  }
  if (i + len > s.size()) return {c, 1};
  for (size_t j = 1; j < len; ++j) {
    unsigned char cc = static_cast<unsigned char>(s[i + j]);
    if ((cc & 0xC0) != 0x80) return {c, 1};
    cp = (cp << 6) | (cc & 0x3F);
  }
  return {cp, len};
}

bool is_article(const std::string& token) {
  return token == "a" || token == "an" || token == "the";
}

std::unordered_map<std::string, int> token_counts(
    const std::vector<std::string>& tokens) {
  std::unordered_map<std::string, int> counts;
  for (const std::string& t : tokens) ++counts[t];
  return counts;
}

}  // namespace

bool is_punct_codepoint(uint32_t cp) {
  if (cp < 0x80) {
    for (char c : kAsciiSymbolPunct) {
      if (cp == static_cast<uint32_t>(c)) return true;
    }
  }
  return in_ranges(kPunctRanges, std::size(kPunctRanges), cp);
}

bool is_space_codepoint(uint32_t cp) {
  if (cp == '\t' || cp == '\n' || cp == '\r' || cp == '\f' || cp == '\v')
    return true;
  return in_ranges(kSpaceRanges, std::size(kSpaceRanges), cp);
}

std::vector<std::string> normalize_tokens(std::string_view s) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty() && !is_article(current)) tokens.push_back(current);
    current.clear();
  };
  for (size_t i = 0; i < s.size();) {
    auto [cp, len] = decode_utf8(s, i);
    if (is_punct_codepoint(cp) || is_space_codepoint(cp)) {
      flush();
    } else if (cp >= 'A' && cp <= 'Z') {
      current.push_back(static_cast<char>(cp - 'A' + 'a'));
    } else {
      current.append(s.substr(i, len));
    }
    i += len;
  }
  flush();
  return tokens;
}

std::string normalize_answer(std::string_view s) {
  std::vector<std::string> tokens = normalize_tokens(s);
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

GoldAnswerSet GoldAnswerSet::from(std::vector<std::string> aliases) {
  if (aliases.empty()) {
    raise(ErrorCode::invalid_argument, "gold answer set must be non-empty");
  }
  for (const std::string& alias : aliases) {
    if (normalize_answer(alias).empty()) {
      raise(ErrorCode::invalid_argument,
            "gold alias normalizes to empty: \"" + alias + "\"");
    }
  }
  return GoldAnswerSet{std::move(aliases)};
}

int exact_match(std::string_view pred, const GoldAnswerSet& gold) {
  std::string p = normalize_answer(pred);
  for (const std::string& alias : gold.aliases) {
    if (p == normalize_answer(alias)) return 1;
  }
  return 0;
}

bool contains_token_run(const std::vector<std::string>& haystack_tokens,
                        const std::vector<std::string>& needle_tokens) {
  if (needle_tokens.empty()) return false;
  if (needle_tokens.size() > haystack_tokens.size()) return false;
  for (size_t i = 0; i + needle_tokens.size() <= haystack_tokens.size(); ++i) {
    if (std::equal(needle_tokens.begin(), needle_tokens.end(),
                   haystack_tokens.begin() + static_cast<long>(i))) {
      return true;
    }
  }
  return false;
}

int accuracy(std::string_view pred, const GoldAnswerSet& gold) {
  std::vector<std::string> p = normalize_tokens(pred);
  for (const std::string& alias : gold.aliases) {
    if (contains_token_run(p, normalize_tokens(alias))) return 1;
  }
  return 0;
}

double f1_score(std::string_view pred, const GoldAnswerSet& gold) {
  std::vector<std::string> p = normalize_tokens(pred);
  auto p_counts = token_counts(p);
  double best = 0.0;
  for (const std::string& alias : gold.aliases) {
    std::vector<std::string> g = normalize_tokens(alias);
    auto g_counts = token_counts(g);
    long overlap = 0;
    for (const auto& [token, count] : g_counts) {
      auto it = p_counts.find(token);
      if (it != p_counts.end()) overlap += std::min(count, it->second);
    }
    if (overlap == 0 || p.empty() || g.empty()) continue;
    double precision = static_cast<double>(overlap) / static_cast<double>(p.size());
    double recall = static_cast<double>(overlap) / static_cast<double>(g.size());
    best = std::max(best, 2.0 * precision * recall / (precision + recall));
  }
  return best;
}

RewardBreakdown score_episode(std::string_view final_answer,
                              const GoldAnswerSet& gold,
                              const decomp::FormatVerdict& verdict) {
  RewardBreakdown r;
  r.format_valid = verdict.valid;
  r.em = exact_match(final_answer, gold);
  r.acc = accuracy(final_answer, gold);
  r.u = verdict.valid ? 0.5 * (r.em + r.acc) : 0.0;
  return r;
}

}  // namespace collabrag::metrics
