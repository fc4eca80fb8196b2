#include "decomp.hpp"

#include <cctype>
#include <optional>

#include "error.hpp"

namespace collabrag::decomp {

namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }

std::string_view trim(std::string_view s) {
  size_t b = 0;
  size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

// Matches `### Q<digits>:` after optional leading whitespace; returns the
// label and the trimmed body, or nullopt when the line is prose.
std::optional<std::pair<int, std::string_view>> match_step_line(
    std::string_view line) {
  size_t i = 0;
  while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
  if (line.substr(i, 3) != "###") return std::nullopt;
  i += 3;
  while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
  if (i >= line.size() || line[i] != 'Q') return std::nullopt;
  ++i;
  size_t digit_start = i;
  while (i < line.size() && is_digit(line[i])) ++i;
  if (i == digit_start) return std::nullopt;
  long label = 0;
  for (size_t d = digit_start; d < i; ++d) {
    label = label * 10 + (line[d] - '0');
    if (label > 1'000'000) return std::nullopt;  // absurd label, treat as prose
  }
  while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
  if (i >= line.size() || line[i] != ':') return std::nullopt;
  ++i;
  return std::make_pair(static_cast<int>(label), trim(line.substr(i)));
}

// Case-insensitive scan for "question" followed by optional whitespace,
// optional '#', optional whitespace, then a digit. This is the textual
// back-reference family ("... mentioned in Question 1") that defeats
// placeholder resolution.
bool has_textual_reference(std::string_view text) {
  static constexpr std::string_view kWord = "question";
  for (size_t i = 0; i + kWord.size() <= text.size(); ++i) {
    bool word = true;
    for (size_t j = 0; j < kWord.size(); ++j) {
      char c = static_cast<char>(
          std::tolower(static_cast<unsigned char>(text[i + j])));
      if (c != kWord[j]) {
        word = false;
        break;
      }
    }
    if (!word) continue;
    size_t p = i + kWord.size();
    while (p < text.size() && std::isspace(static_cast<unsigned char>(text[p])))
      ++p;
    if (p < text.size() && text[p] == '#') {
      ++p;
      while (p < text.size() &&
             std::isspace(static_cast<unsigned char>(text[p])))
        ++p;
    }
    if (p < text.size() && is_digit(text[p])) return true;
  }
  return false;
}

void push_unique(std::vector<Violation>& violations, Violation v) {
  for (Violation existing : violations) {
    if (existing == v) return;
  }
  violations.push_back(v);
}

}  // namespace

const char* to_string(Violation v) {
  switch (v) {
    case Violation::parse_fail: return "PARSE_FAIL";
    case Violation::bad_label_sequence: return "BAD_LABEL_SEQUENCE";
    case Violation::out_of_range_ref: return "OUT_OF_RANGE_REF";
    case Violation::textual_ref: return "TEXTUAL_REF";
    case Violation::empty_step: return "EMPTY_STEP";
    case Violation::too_many_steps: return "TOO_MANY_STEPS";
  }
  return "UNKNOWN";
}

std::vector<int> SubQuestion::references() const {
  std::vector<int> refs;
  const std::string& t = template_text;
  for (size_t i = 0; i < t.size(); ++i) {
    if (t[i] != '#') continue;
    size_t j = i + 1;
    long value = 0;
    while (j < t.size() && is_digit(t[j])) {
      value = value * 10 + (t[j] - '0');
      if (value > 1'000'000) value = 1'000'001;
      ++j;
    }
    if (j > i + 1) {
      refs.push_back(static_cast<int>(value));
      i = j - 1;
    }
  }
  return refs;
}

ParseResult parse_decomposition(std::string_view raw) {
  std::vector<SubQuestion> steps;
  size_t pos = 0;
  while (pos <= raw.size()) {
    size_t nl = raw.find('\n', pos);
    std::string_view line =
        raw.substr(pos, nl == std::string_view::npos ? raw.size() - pos
                                                     : nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (auto m = match_step_line(line)) {
      steps.push_back(SubQuestion{m->first, std::string(m->second)});
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }

  if (steps.empty()) {
    return ParseError{Violation::parse_fail,
                      "no labeled sub-question line found"};
  }
  for (size_t i = 0; i < steps.size(); ++i) {
    if (steps[i].index != static_cast<int>(i) + 1) {
      return ParseError{
          Violation::bad_label_sequence,
          "expected label Q" + std::to_string(i + 1) + ", found Q" +
              std::to_string(steps[i].index)};
    }
  }
  for (const SubQuestion& s : steps) {
    if (s.template_text.empty()) {
      return ParseError{Violation::empty_step,
                        "step Q" + std::to_string(s.index) + " body is empty"};
    }
  }
  return Decomposition{std::move(steps), std::string(raw)};
}

FormatVerdict check_format(const ParseResult& parsed, int t_max) {
  FormatVerdict verdict;
  if (const auto* err = std::get_if<ParseError>(&parsed)) {
    verdict.valid = false;
    verdict.violations.push_back(err->code);
    return verdict;
  }
  const Decomposition& d = std::get<Decomposition>(parsed);
  if (d.step_count() > t_max) {
    push_unique(verdict.violations, Violation::too_many_steps);
  }
  for (const SubQuestion& step : d.steps) {
    for (int ref : step.references()) {
      if (ref < 1 || ref >= step.index) {
        push_unique(verdict.violations, Violation::out_of_range_ref);
        break;
      }
    }
  }
  for (const SubQuestion& step : d.steps) {
    if (has_textual_reference(step.template_text)) {
      push_unique(verdict.violations, Violation::textual_ref);
      break;
    }
  }
  verdict.valid = verdict.violations.empty();
  return verdict;
}

FormatVerdict check_format(std::string_view raw, int t_max) {
  return check_format(parse_decomposition(raw), t_max);
}

std::string resolve_template(std::string_view template_text,
                             std::span<const std::string> prior_answers) {
  std::string out;
  out.reserve(template_text.size());
  for (size_t i = 0; i < template_text.size();) {
    if (template_text[i] == '#' && i + 1 < template_text.size() &&
        is_digit(template_text[i + 1])) {
      size_t j = i + 1;
      long index = 0;
      while (j < template_text.size() && is_digit(template_text[j])) {
        index = index * 10 + (template_text[j] - '0');
        if (index > 1'000'000) index = 1'000'001;
        ++j;
      }
      if (index < 1 || static_cast<size_t>(index) > prior_answers.size()) {
        raise(ErrorCode::unresolved_reference,
              "placeholder #" + std::to_string(index) + " has no prior answer (" +
                  std::to_string(prior_answers.size()) + " available)");
      }
      out += prior_answers[static_cast<size_t>(index) - 1];
      i = j;
    } else {
      out.push_back(template_text[i]);
      ++i;
    }
  }
  return out;
}

std::string resolve_step(const SubQuestion& step,
                         std::span<const std::string> prior_answers) {
  return resolve_template(step.template_text, prior_answers);
}

std::string serialize_decomposition(const Decomposition& d) {
  std::string out;
  for (size_t i = 0; i < d.steps.size(); ++i) {
    if (i > 0) out.push_back('\n');
    out += "### Q";
    out += std::to_string(d.steps[i].index);
    out += ": ";
    out += d.steps[i].template_text;
  }
  return out;
}

}  // namespace collabrag::decomp
