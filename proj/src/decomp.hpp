#pragma once

#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace collabrag::decomp {

// Default cap on decomposition length; configurable everywhere it matters.
inline constexpr int kDefaultTMax = 8;

// One sub-question step. `template_text` is stored trimmed, single-line, and
// may contain `#j` placeholders referring to answers of earlier steps.
struct SubQuestion {
  int index = 0;  // 1-based step label
  std::string template_text;

  // Placeholder indices in document order (maximal digit runs after '#').
  std::vector<int> references() const;

  bool operator==(const SubQuestion&) const = default;
};

struct Decomposition {
  std::vector<SubQuestion> steps;
  std::string raw_text;  // the exact generated text this was parsed from

  int step_count() const { return static_cast<int>(steps.size()); }

  // Structural equality: raw_text is provenance, not identity.
  bool operator==(const Decomposition& other) const {
    return steps == other.steps;
  }
};

enum class Violation {
  parse_fail,
  bad_label_sequence,
  out_of_range_ref,
  textual_ref,
  empty_step,
  too_many_steps,
};

const char* to_string(Violation v);

struct FormatVerdict {
  bool valid = true;
  std::vector<Violation> violations;
};

struct ParseError {
  Violation code = Violation::parse_fail;
  std::string message;
};

using ParseResult = std::variant<Decomposition, ParseError>;

inline bool parse_ok(const ParseResult& r) {
  return std::holds_alternative<Decomposition>(r);
}

// Extracts `### Q<t>: <body>` lines from arbitrary model output. Prose
// outside the labeled lines is ignored; labels must run 1..T in document
// order; bodies are trimmed and must be non-empty. LF and CRLF both accepted.
ParseResult parse_decomposition(std::string_view raw);

// Format reward check (the format(.) term of the reward). Pure and
// deterministic; never throws. A failed parse yields the parse error's code
// as the sole violation.
FormatVerdict check_format(const ParseResult& parsed, int t_max = kDefaultTMax);
FormatVerdict check_format(std::string_view raw, int t_max = kDefaultTMax);

// Replaces every `#j` with prior_answers[j-1]. Substitution is simultaneous
// (inserted text is never rescanned) and digit runs are maximal, so `#12` is
// never read as `#1` followed by "2". Throws unresolved_reference when an
// index is 0 or exceeds prior_answers.
std::string resolve_template(std::string_view template_text,
                             std::span<const std::string> prior_answers);
std::string resolve_step(const SubQuestion& step,
                         std::span<const std::string> prior_answers);

// Canonical `### Q<t>: <template>` block, LF-separated, no trailing newline.
// parse_decomposition(serialize_decomposition(d)) == d for every valid d.
std::string serialize_decomposition(const Decomposition& d);

}  // namespace collabrag::decomp
