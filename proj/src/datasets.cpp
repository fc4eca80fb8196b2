#include "datasets.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "digest.hpp"
#include "error.hpp"

namespace collabrag::datasets {

namespace {

using nlohmann::json;

bool large_devset(std::string_view format) {
  return format == "hotpotqa" || format == "2wikimqa" || format == "musique";
}

// Validates and appends one record; on failure itemizes the drop instead.
void add_record(LoadResult& out, const std::string& where, std::string id,
                std::string question, std::vector<std::string> gold,
                std::string tag) {
  ++out.records_seen;
  if (question.empty()) {
    out.dropped.push_back(where + ": empty question");
    return;
  }
  if (gold.empty()) {
    out.dropped.push_back(where + ": no gold answer");
    return;
  }
  try {
    env::QuestionInstance q{std::move(id), std::move(question),
                            metrics::GoldAnswerSet::from(std::move(gold)),
                            std::move(tag)};
    out.questions.push_back(std::move(q));
  } catch (const Error& e) {
    out.dropped.push_back(where + ": " + e.what());
  }
}

json parse_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    raise(ErrorCode::io, "cannot open dataset file: " + path.string());
  }
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) {
    raise(ErrorCode::parse, "dataset is not valid JSON: " + path.string());
  }
  return j;
}

void load_hotpot_style(const std::filesystem::path& path, std::string_view tag,
                       LoadResult& out) {
  json doc = parse_json_file(path);
  if (!doc.is_array()) {
    raise(ErrorCode::parse, "expected a JSON array: " + path.string());
  }
  size_t i = 0;
  for (const auto& rec : doc) {
    ++i;
    std::string where = "record " + std::to_string(i);
    if (!rec.is_object()) {
      ++out.records_seen;
      out.dropped.push_back(where + ": not an object");
      continue;
    }
    std::string id = rec.value("_id", rec.value("id", std::string{}));
    if (id.empty()) id = std::string(tag) + "-" + std::to_string(i);
    std::vector<std::string> gold;
    if (rec.contains("answer") && rec["answer"].is_string()) {
      gold.push_back(rec["answer"].get<std::string>());
    }
    add_record(out, where, std::move(id),
               rec.value("question", std::string{}), std::move(gold),
               std::string(tag));
  }
}

void load_strategyqa(const std::filesystem::path& path, LoadResult& out) {
  json doc = parse_json_file(path);
  if (!doc.is_array()) {
    raise(ErrorCode::parse, "expected a JSON array: " + path.string());
  }
  size_t i = 0;
  for (const auto& rec : doc) {
    ++i;
    std::string where = "record " + std::to_string(i);
    if (!rec.is_object() || !rec.contains("answer") ||
        !rec["answer"].is_boolean()) {
      ++out.records_seen;
      out.dropped.push_back(where + ": missing boolean answer");
      continue;
    }
    std::string id = rec.value("qid", rec.value("id", std::string{}));
    if (id.empty()) id = "strategyqa-" + std::to_string(i);
    bool answer = rec["answer"].get<bool>();
    std::vector<std::string> gold =
        answer ? std::vector<std::string>{"yes", "true"}
               : std::vector<std::string>{"no", "false"};
    add_record(out, where, std::move(id),
               rec.value("question", std::string{}), std::move(gold),
               "strategyqa");
  }
}

void load_jsonl(const std::filesystem::path& path, std::string_view format,
                LoadResult& out) {
  std::ifstream in(path);
  if (!in) {
    raise(ErrorCode::io, "cannot open dataset file: " + path.string());
  }
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::string where = "line " + std::to_string(line_no);
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object()) {
      ++out.records_seen;
      out.dropped.push_back(where + ": malformed JSON");
      continue;
    }
    std::string id = rec.value("id", std::string{});
    if (id.empty()) id = std::string(format) + "-" + std::to_string(line_no);
    std::vector<std::string> gold;
    std::string tag(format);
    if (format == "musique") {
      if (rec.contains("answer") && rec["answer"].is_string()) {
        gold.push_back(rec["answer"].get<std::string>());
      }
      for (const auto& alias : rec.value("answer_aliases", json::array())) {
        if (alias.is_string()) gold.push_back(alias.get<std::string>());
      }
    } else {  // custom
      for (const auto& alias : rec.value("answers", json::array())) {
        if (alias.is_string()) gold.push_back(alias.get<std::string>());
      }
      if (gold.empty() && rec.contains("answer") && rec["answer"].is_string()) {
        gold.push_back(rec["answer"].get<std::string>());
      }
      tag = rec.value("dataset", std::string("custom"));
    }
    add_record(out, where, std::move(id),
               rec.value("question", std::string{}), std::move(gold),
               std::move(tag));
  }
}

// RFC4180-style row split, enough for the two-column question/answer shape.
std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',' || c == '\t') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return s;
}

void load_bamboogle(const std::filesystem::path& path, LoadResult& out) {
  std::ifstream in(path);
  if (!in) {
    raise(ErrorCode::io, "cannot open dataset file: " + path.string());
  }
  std::string line;
  size_t line_no = 0;
  long q_col = -1, a_col = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields = split_csv_row(line);
    if (q_col < 0) {
      for (size_t c = 0; c < fields.size(); ++c) {
        std::string name = lower(fields[c]);
        if (name == "question") q_col = static_cast<long>(c);
        if (name == "answer") a_col = static_cast<long>(c);
      }
      if (q_col < 0 || a_col < 0) {
        raise(ErrorCode::parse,
              "bamboogle file needs Question and Answer columns: " +
                  path.string());
      }
      continue;
    }
    std::string where = "line " + std::to_string(line_no);
    if (static_cast<long>(fields.size()) <= std::max(q_col, a_col)) {
      ++out.records_seen;
      out.dropped.push_back(where + ": too few columns");
      continue;
    }
    add_record(out, where, "bamboogle-" + std::to_string(line_no),
               fields[static_cast<size_t>(q_col)],
               {fields[static_cast<size_t>(a_col)]}, "bamboogle");
  }
}

}  // namespace

bool known_format(std::string_view format) {
  return format == "hotpotqa" || format == "2wikimqa" || format == "musique" ||
         format == "strategyqa" || format == "bamboogle" || format == "custom";
}

LoadResult load(const std::filesystem::path& path, std::string_view format,
                const config::DatasetOptions& options, int limit_override) {
  if (!known_format(format)) {
    raise(ErrorCode::invalid_argument,
          "unknown dataset format: " + std::string(format));
  }
  LoadResult out;
  out.file_digest = sha256_file_hex(path.string());

  if (format == "hotpotqa" || format == "2wikimqa") {
    load_hotpot_style(path, format, out);
  } else if (format == "strategyqa") {
    load_strategyqa(path, out);
  } else if (format == "bamboogle") {
    load_bamboogle(path, out);
  } else {
    load_jsonl(path, format, out);
  }

  int limit = limit_override >= 0
                  ? limit_override
                  : (large_devset(format) ? options.eval_slice : 0);
  auto quota_it = options.quotas.find(std::string(format));
  if (quota_it != options.quotas.end()) {
    limit = limit > 0 ? std::min(limit, quota_it->second) : quota_it->second;
  }
  if (limit > 0 && out.questions.size() > static_cast<size_t>(limit)) {
    out.questions.resize(static_cast<size_t>(limit));
  }
  return out;
}

}  // namespace collabrag::datasets
