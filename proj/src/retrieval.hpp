#pragma once

#include <filesystem>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "metrics.hpp"

namespace collabrag::retrieval {

struct Passage {
  std::string id;
  std::string title;
  std::string body;
};

struct Hit {
  std::string passage_id;
  double score = 0.0;
};

struct RetrievalResult {
  std::string query;
  std::vector<Hit> hits;  // scores non-increasing, ids break ties ascending
};

struct IngestStats {
  size_t passage_count = 0;
  size_t token_count = 0;
  std::string corpus_digest;
};

struct Bm25Params {
  double k1 = 0.9;
  double b = 0.4;
};

// Lowercased alphanumeric runs; bytes >= 0x80 are treated as word bytes so
// UTF-8 words survive intact.
std::vector<std::string> tokenize(std::string_view text);

// Immutable after construction; retrieval is safe for concurrent readers.
class CorpusIndex {
 public:
  static CorpusIndex ingest(std::vector<Passage> passages, Bm25Params params = {});
  static CorpusIndex ingest_jsonl(std::istream& in, Bm25Params params = {});
  static CorpusIndex ingest_jsonl_file(const std::filesystem::path& path,
                                       Bm25Params params = {});

  // Versioned on-disk layout: manifest.json + passages.jsonl.
  void save(const std::filesystem::path& dir) const;
  static CorpusIndex load(const std::filesystem::path& dir);

  RetrievalResult retrieve(std::string_view query, int k) const;

  const Passage* find(std::string_view id) const;
  size_t size() const { return passages_.size(); }
  const IngestStats& stats() const { return stats_; }
  const Bm25Params& params() const { return params_; }

  // Digest of (corpus bytes, scorer parameters); equal digests imply
  // identical rankings.
  const std::string& index_digest() const { return index_digest_; }

 private:
  CorpusIndex() = default;
  void build_postings();

  std::vector<Passage> passages_;
  std::unordered_map<std::string, size_t> id_to_pos_;
  std::unordered_map<std::string, std::vector<std::pair<uint32_t, uint32_t>>>
      postings_;  // term -> (doc position, term frequency)
  std::vector<uint32_t> doc_len_;
  double avgdl_ = 0.0;
  Bm25Params params_;
  IngestStats stats_;
  std::string index_digest_;
};

enum class RecallMode { single_query, decomposed_union };

const char* to_string(RecallMode mode);
std::optional<RecallMode> recall_mode_from(std::string_view name);

// Minimal view of an episode for the recall analysis: the original question,
// the union of passage ids its steps retrieved, and the gold aliases.
struct RecallEpisode {
  std::string question;
  std::vector<std::string> retrieved_ids;
  metrics::GoldAnswerSet gold;
};

struct RecallReport {
  RecallMode mode = RecallMode::decomposed_union;
  int k = 0;
  size_t questions = 0;
  size_t recalled = 0;
  std::optional<double> recall;  // empty when there is no data
};

// Fraction of questions whose retrieved passages contain a gold alias as a
// normalized contiguous token run. decomposed_union checks the union of the
// episode's per-step retrievals; single_query re-retrieves with the original
// question.
RecallReport answer_recall(const CorpusIndex& corpus,
                           std::span<const RecallEpisode> episodes,
                           RecallMode mode, int k);

}  // namespace collabrag::retrieval
