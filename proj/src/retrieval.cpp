#include "retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "digest.hpp"
#include "error.hpp"

namespace collabrag::retrieval {

namespace {

using nlohmann::json;

constexpr int kManifestSchemaVersion = 1;

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char raw : text) {
    unsigned char c = static_cast<unsigned char>(raw);
    if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c >= 0x80) {
      current.push_back(raw);
    } else if (c >= 'A' && c <= 'Z') {
      current.push_back(static_cast<char>(c - 'A' + 'a'));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

CorpusIndex CorpusIndex::ingest(std::vector<Passage> passages,
                                Bm25Params params) {
  CorpusIndex index;
  index.params_ = params;
  index.passages_ = std::move(passages);

  std::string digest_input;
  for (size_t i = 0; i < index.passages_.size(); ++i) {
    const Passage& p = index.passages_[i];
    if (p.body.empty()) {
      raise(ErrorCode::invalid_argument,
            "passage body is empty for id \"" + p.id + "\"");
    }
    auto [it, inserted] = index.id_to_pos_.emplace(p.id, i);
    if (!inserted) {
      raise(ErrorCode::duplicate_id, "duplicate passage id \"" + p.id + "\"");
    }
    digest_input += p.id;
    digest_input.push_back('\x1f');
    digest_input += p.title;
    digest_input.push_back('\x1f');
    digest_input += p.body;
    digest_input.push_back('\x1e');
  }
  index.stats_.corpus_digest = sha256_hex(digest_input);
  index.stats_.passage_count = index.passages_.size();
  index.build_postings();
  index.index_digest_ =
      sha256_hex(index.stats_.corpus_digest + "|bm25|k1=" +
                 format_double(params.k1) + "|b=" + format_double(params.b));
  return index;
}

void CorpusIndex::build_postings() {
  doc_len_.clear();
  doc_len_.reserve(passages_.size());
  stats_.token_count = 0;
  for (size_t i = 0; i < passages_.size(); ++i) {
    std::vector<std::string> tokens =
        tokenize(passages_[i].title + " " + passages_[i].body);
    doc_len_.push_back(static_cast<uint32_t>(tokens.size()));
    stats_.token_count += tokens.size();
    std::unordered_map<std::string, uint32_t> tf;
    for (std::string& t : tokens) ++tf[std::move(t)];
    for (auto& [term, count] : tf) {
      postings_[term].emplace_back(static_cast<uint32_t>(i), count);
    }
  }
  avgdl_ = passages_.empty()
               ? 0.0
               : static_cast<double>(stats_.token_count) /
                     static_cast<double>(passages_.size());
}

CorpusIndex CorpusIndex::ingest_jsonl(std::istream& in, Bm25Params params) {
  std::vector<Passage> passages;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    json record = json::parse(line, nullptr, false);
    if (record.is_discarded() || !record.is_object()) {
      raise(ErrorCode::parse, "malformed corpus record at line " +
                                  std::to_string(line_no));
    }
    if (!record.contains("id") || !record["id"].is_string() ||
        !record.contains("text") || !record["text"].is_string()) {
      raise(ErrorCode::parse, "corpus record at line " +
                                  std::to_string(line_no) +
                                  " must have string fields id and text");
    }
    Passage p;
    p.id = record["id"].get<std::string>();
    p.title = record.value("title", std::string{});
    p.body = record["text"].get<std::string>();
    if (p.body.empty()) {
      raise(ErrorCode::parse, "corpus record at line " +
                                  std::to_string(line_no) +
                                  " has an empty text field");
    }
    passages.push_back(std::move(p));
  }
  return ingest(std::move(passages), params);
}

CorpusIndex CorpusIndex::ingest_jsonl_file(const std::filesystem::path& path,
                                           Bm25Params params) {
  std::ifstream in(path);
  if (!in) {
    raise(ErrorCode::io, "cannot open corpus file: " + path.string());
  }
  return ingest_jsonl(in, params);
}

void CorpusIndex::save(const std::filesystem::path& dir) const {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  {
    std::ofstream out(dir / "passages.jsonl", std::ios::binary);
    if (!out) {
      raise(ErrorCode::io, "cannot write " + (dir / "passages.jsonl").string());
    }
    for (const Passage& p : passages_) {
      json record{{"id", p.id}, {"title", p.title}, {"text", p.body}};
      out << record.dump() << '\n';
    }
  }
  json manifest{
      {"schema_version", kManifestSchemaVersion},
      {"corpus_digest", stats_.corpus_digest},
      {"index_digest", index_digest_},
      {"passage_count", stats_.passage_count},
      {"token_count", stats_.token_count},
      {"scorer", {{"kind", "bm25"}, {"k1", params_.k1}, {"b", params_.b}}},
  };
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) {
    raise(ErrorCode::io, "cannot write " + (dir / "manifest.json").string());
  }
  out << manifest.dump(2) << '\n';
}

CorpusIndex CorpusIndex::load(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) {
    raise(ErrorCode::io, "cannot open index manifest: " +
                             (dir / "manifest.json").string());
  }
  json manifest = json::parse(mf, nullptr, false);
  if (manifest.is_discarded() || !manifest.is_object() ||
      manifest.value("schema_version", 0) != kManifestSchemaVersion) {
    raise(ErrorCode::parse,
          "bad index manifest: " + (dir / "manifest.json").string());
  }
  Bm25Params params;
  params.k1 = manifest["scorer"].value("k1", params.k1);
  params.b = manifest["scorer"].value("b", params.b);

  std::ifstream in(dir / "passages.jsonl");
  if (!in) {
    raise(ErrorCode::io,
          "cannot open " + (dir / "passages.jsonl").string());
  }
  CorpusIndex index = ingest_jsonl(in, params);
  if (index.stats_.corpus_digest !=
      manifest.value("corpus_digest", std::string{})) {
    raise(ErrorCode::cache_corrupt,
          "index at " + dir.string() +
              " does not match its manifest corpus digest");
  }
  return index;
}

RetrievalResult CorpusIndex::retrieve(std::string_view query, int k) const {
  if (k < 1) {
    raise(ErrorCode::invalid_argument, "k must be >= 1");
  }
  std::vector<std::string> terms = tokenize(query);
  if (terms.empty()) {
    raise(ErrorCode::invalid_argument, "empty query");
  }
  const size_t n = passages_.size();
  std::vector<double> scores(n, 0.0);
  const double num_docs = static_cast<double>(n);
  for (const std::string& term : terms) {
    auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    const auto& posting = it->second;
    const double df = static_cast<double>(posting.size());
    const double idf = std::log(1.0 + (num_docs - df + 0.5) / (df + 0.5));
    for (const auto& [doc, tf] : posting) {
      const double dl = static_cast<double>(doc_len_[doc]);
      const double denom =
          tf + params_.k1 * (1.0 - params_.b + params_.b * dl / avgdl_);
      scores[doc] += idf * (tf * (params_.k1 + 1.0)) / denom;
    }
  }

  std::vector<uint32_t> order(n);
  for (uint32_t i = 0; i < n; ++i) order[i] = i;
  size_t take = std::min<size_t>(static_cast<size_t>(k), n);
  auto better = [&](uint32_t a, uint32_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return passages_[a].id < passages_[b].id;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<long>(take),
                    order.end(), better);

  RetrievalResult result;
  result.query = std::string(query);
  result.hits.reserve(take);
  for (size_t i = 0; i < take; ++i) {
    result.hits.push_back(Hit{passages_[order[i]].id, scores[order[i]]});
  }
  return result;
}

const Passage* CorpusIndex::find(std::string_view id) const {
  auto it = id_to_pos_.find(std::string(id));
  if (it == id_to_pos_.end()) return nullptr;
  return &passages_[it->second];
}

const char* to_string(RecallMode mode) {
  return mode == RecallMode::single_query ? "single-query" : "decomposed-union";
}

std::optional<RecallMode> recall_mode_from(std::string_view name) {
  if (name == "single-query") return RecallMode::single_query;
  if (name == "decomposed-union") return RecallMode::decomposed_union;
  return std::nullopt;
}

namespace {

bool gold_in_passages(const CorpusIndex& corpus,
                      std::span<const std::string> passage_ids,
                      const metrics::GoldAnswerSet& gold) {
  for (const std::string& id : passage_ids) {
    const Passage* p = corpus.find(id);
    if (p == nullptr) continue;
    std::vector<std::string> body_tokens = metrics::normalize_tokens(p->body);
    for (const std::string& alias : gold.aliases) {
      if (metrics::contains_token_run(body_tokens,
                                      metrics::normalize_tokens(alias))) {
        return true;
      }
    }
  }
  return false;
}

}  // namespace

RecallReport answer_recall(const CorpusIndex& corpus,
                           std::span<const RecallEpisode> episodes,
                           RecallMode mode, int k) {
  RecallReport report;
  report.mode = mode;
  report.k = k;
  report.questions = episodes.size();
  for (const RecallEpisode& episode : episodes) {
    bool recalled = false;
    if (mode == RecallMode::decomposed_union) {
      recalled = gold_in_passages(corpus, episode.retrieved_ids, episode.gold);
    } else {
      std::vector<std::string> ids;
      if (!tokenize(episode.question).empty()) {
        RetrievalResult r = corpus.retrieve(episode.question, k);
        for (const Hit& h : r.hits) ids.push_back(h.passage_id);
      }
      recalled = gold_in_passages(corpus, ids, episode.gold);
    }
    if (recalled) ++report.recalled;
  }
  if (report.questions > 0) {
    report.recall = static_cast<double>(report.recalled) /
                    static_cast<double>(report.questions);
  }
  return report;
}

}  // namespace collabrag::retrieval
