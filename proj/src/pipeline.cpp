#include "pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <atomic>
#include <fstream>
#include <thread>

#include "datasets.hpp"
#include "digest.hpp"
#include "error.hpp"

namespace collabrag::pipeline {

namespace {

using nlohmann::json;

// Exclusive advisory lock so two commands never write one run directory.
class DirLock {
 public:
  explicit DirLock(const std::filesystem::path& dir) : path_(dir / ".lock") {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      raise(ErrorCode::io,
            "run directory is locked (remove " + path_.string() +
                " if no other command is running)");
    }
  }
  ~DirLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      std::error_code ec;
      std::filesystem::remove(path_, ec);
    }
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

std::ofstream open_output(const std::string& path) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
  }
  std::ofstream out(p, std::ios::binary);
  if (!out) {
    raise(ErrorCode::io, "cannot write output file: " + path);
  }
  return out;
}

json counters_json(const gateway::GatewayCounters& c) {
  return json{{"network_requests", c.network_requests},
              {"cache_hits", c.cache_hits},
              {"scripted_calls", c.scripted_calls},
              {"retries", c.retries}};
}

std::map<std::string, metrics::GoldAnswerSet> gold_map(
    std::span<const env::QuestionInstance> questions) {
  std::map<std::string, metrics::GoldAnswerSet> golds;
  for (const env::QuestionInstance& q : questions) {
    golds.emplace(q.id, q.gold);
  }
  return golds;
}

objective::TokenLogProbTrace logprob_trace(const json& values,
                                           const std::string& where) {
  if (!values.is_array()) {
    raise(ErrorCode::parse, where + ": expected an array of logprobs");
  }
  objective::TokenLogProbTrace trace;
  for (const auto& v : values) {
    if (!v.is_number()) {
      raise(ErrorCode::parse, where + ": logprob is not a number");
    }
    trace.logprobs.push_back(v.get<double>());
  }
  return trace;
}

}  // namespace

std::vector<env::EpisodeTrace> read_traces(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    raise(ErrorCode::io, "cannot open trace file: " + path);
  }
  std::vector<env::EpisodeTrace> traces;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      raise(ErrorCode::parse,
            path + " line " + std::to_string(line_no) + ": malformed JSON");
    }
    traces.push_back(env::EpisodeTrace::from_json(j));
  }
  return traces;
}

std::vector<prefs::CandidateSet> read_candidate_sets(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    raise(ErrorCode::io, "cannot open candidates file: " + path);
  }
  std::vector<prefs::CandidateSet> sets;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      raise(ErrorCode::parse,
            path + " line " + std::to_string(line_no) + ": malformed JSON");
    }
    sets.push_back(prefs::CandidateSet::from_json(j));
  }
  return sets;
}

std::vector<objective::PairLogProbs> read_pair_logprobs(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    raise(ErrorCode::io, "cannot open pair-logprob file: " + path);
  }
  std::vector<objective::PairLogProbs> pairs;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::string where = path + " line " + std::to_string(line_no);
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      raise(ErrorCode::parse, where + ": malformed JSON");
    }
    for (const char* field : {"chosen_policy", "chosen_reference",
                              "rejected_policy", "rejected_reference"}) {
      if (!j.contains(field)) {
        raise(ErrorCode::parse,
              where + ": missing field " + std::string(field));
      }
    }
    objective::PairLogProbs pair;
    pair.chosen_policy = logprob_trace(j["chosen_policy"], where);
    pair.chosen_reference = logprob_trace(j["chosen_reference"], where);
    pair.rejected_policy = logprob_trace(j["rejected_policy"], where);
    pair.rejected_reference = logprob_trace(j["rejected_reference"], where);
    pair.pair_id = j.value("pair_id", std::string{});
    pair.round = j.value("round", 0);
    try {
      pair.validate();
    } catch (const Error& e) {
      raise(ErrorCode::parse, where + ": " + e.what());
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

Engine::Engine(config::PipelineConfig cfg)
    : cfg_(std::move(cfg)),
      config_digest_(cfg_.digest()),
      gw_(std::make_unique<gateway::ModelGateway>(cfg_.cache_dir,
                                                  cfg_.concurrency)) {}

const retrieval::CorpusIndex& Engine::corpus() {
  if (cfg_.index_dir.empty()) {
    raise(ErrorCode::invalid_argument,
          "no index_dir configured; run ingest first and set index_dir");
  }
  if (!corpus_ || corpus_dir_ != cfg_.index_dir) {
    corpus_ = retrieval::CorpusIndex::load(cfg_.index_dir);
    corpus_dir_ = cfg_.index_dir;
  }
  return *corpus_;
}

env::EnvConfig Engine::env_config() const {
  env::EnvConfig e;
  e.k = cfg_.k;
  e.t_max = cfg_.t_max;
  e.max_tokens = cfg_.max_tokens;
  e.include_history = cfg_.include_history;
  e.config_digest = config_digest_;
  e.decomposer_id = cfg_.decomposer.id();
  return e;
}

CmdResult Engine::ingest(const std::string& corpus_path,
                         const std::string& index_dir) {
  retrieval::CorpusIndex index =
      retrieval::CorpusIndex::ingest_jsonl_file(corpus_path);
  index.save(index_dir);
  return CmdResult{json{{"passages", index.stats().passage_count},
                        {"tokens", index.stats().token_count},
                        {"corpus_digest", index.stats().corpus_digest},
                        {"index_digest", index.index_digest()},
                        {"index_dir", index_dir},
                        {"config_digest", config_digest_}}};
}

CmdResult Engine::run(const std::string& dataset_path,
                      const std::string& format,
                      const std::string& out_traces, int limit_override) {
  datasets::LoadResult data =
      datasets::load(dataset_path, format, cfg_.datasets, limit_override);
  const retrieval::CorpusIndex& index = corpus();

  env::BatchResult batch =
      env::run_batch(data.questions, *gw_, cfg_.decomposer, cfg_.reader,
                     index, env_config(), cfg_.concurrency);

  std::ofstream out = open_output(out_traces);
  for (const env::EpisodeTrace& trace : batch.traces) {
    out << trace.to_json().dump() << '\n';
  }

  env::MetricReport metrics_report =
      env::evaluate(batch.traces, gold_map(data.questions));
  json report = metrics_report.to_json();
  report["config_digest"] = config_digest_;
  report["dataset_digest"] = data.file_digest;
  report["dropped_records"] = data.dropped;
  report["traces_file"] = out_traces;
  report["counters"] = counters_json(gw_->counters());
  return CmdResult{std::move(report), batch.failures > 0};
}

CmdResult Engine::sample(const std::string& dataset_path,
                         const std::string& format,
                         const std::string& out_candidates, bool sft_only,
                         int limit_override) {
  if (cfg_.n_samples < 2 && !sft_only) {
    raise(ErrorCode::invalid_argument,
          "preference building needs N >= 2 (configured N=" +
              std::to_string(cfg_.n_samples) + "); pass sft-only to proceed");
  }
  datasets::LoadResult data =
      datasets::load(dataset_path, format, cfg_.datasets, limit_override);
  const retrieval::CorpusIndex& index = corpus();
  env::EnvConfig ecfg = env_config();

  struct Slot {
    std::optional<prefs::CandidateSet> set;
    std::string error;
  };
  std::vector<Slot> slots(data.questions.size());
  std::atomic<size_t> next{0};

  auto worker = [&] {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= data.questions.size()) return;
      const env::QuestionInstance& q = data.questions[i];
      try {
        prefs::CandidateSet set;
        set.question = q;
        set.prompt = prompts::render_decompose_prompt(
            prompts::PromptBundle::defaults(), q.question);
        gateway::DecodingParams sampling{cfg_.sample_temperature,
                                         cfg_.max_tokens, cfg_.n_samples};
        std::vector<gateway::Completion> completions =
            gw_->complete(cfg_.decomposer, set.prompt, sampling);
        for (const gateway::Completion& c : completions) {
          env::EpisodeTrace trace = env::run_episode(
              q, c.text, *gw_, cfg_.reader, index, ecfg);
          set.candidates.push_back(prefs::Candidate{c.text, std::move(trace)});
        }
        slots[i].set = std::move(set);
      } catch (const std::exception& e) {
        slots[i].error = q.id + ": " + e.what();
      }
    }
  };

  int threads = std::max(
      1, std::min<int>(cfg_.concurrency,
                       static_cast<int>(data.questions.size())));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  std::ofstream out = open_output(out_candidates);
  std::map<std::string, size_t> histogram;
  size_t written = 0, candidates = 0;
  std::vector<std::string> failures;
  for (const Slot& slot : slots) {
    if (!slot.error.empty()) {
      failures.push_back(slot.error);
      continue;
    }
    out << slot.set->to_json(config_digest_).dump() << '\n';
    ++written;
    for (const prefs::Candidate& c : slot.set->candidates) {
      ++candidates;
      char bucket[16];
      std::snprintf(bucket, sizeof(bucket), "%g", c.reward());
      ++histogram[bucket];
    }
  }

  json hist = json::object();
  for (const auto& [bucket, count] : histogram) hist[bucket] = count;
  json report{{"questions", data.questions.size()},
              {"written", written},
              {"candidates", candidates},
              {"n_samples", cfg_.n_samples},
              {"reward_histogram", hist},
              {"failures", failures},
              {"dropped_records", data.dropped},
              {"dataset_digest", data.file_digest},
              {"config_digest", config_digest_},
              {"candidates_file", out_candidates},
              {"counters", counters_json(gw_->counters())}};
  return CmdResult{std::move(report), !failures.empty()};
}

CmdResult Engine::build_sft(const std::string& candidates_path,
                            const std::string& out_path, bool include_all) {
  std::vector<prefs::CandidateSet> sets = read_candidate_sets(candidates_path);
  prefs::SftOptions options;
  options.include_all = include_all;
  options.t_max = cfg_.t_max;
  auto [examples, stats] = prefs::build_sft(sets, options);

  std::ofstream out = open_output(out_path);
  for (const prefs::SFTExample& e : examples) {
    out << json{{"prompt", e.prompt},
                {"target", e.target},
                {"reward", e.reward},
                {"question_id", e.question_id},
                {"config_digest", config_digest_}}
               .dump()
        << '\n';
  }
  json hist = json::object();
  for (const auto& [bucket, count] : stats.reward_histogram) {
    hist[bucket] = count;
  }
  return CmdResult{json{{"kept", stats.kept},
                        {"dropped", stats.dropped},
                        {"examples", examples.size()},
                        {"reward_histogram", hist},
                        {"sft_file", out_path},
                        {"config_digest", config_digest_}}};
}

CmdResult Engine::build_prefs(const std::string& candidates_path,
                              const std::string& out_path, int round) {
  std::vector<prefs::CandidateSet> sets = read_candidate_sets(candidates_path);
  auto [pairs, stats] = prefs::build_preferences(sets, round);

  std::ofstream out = open_output(out_path);
  for (const prefs::PreferencePair& p : pairs) {
    out << json{{"prompt", p.prompt},
                {"chosen", p.chosen},
                {"rejected", p.rejected},
                {"reward_gap", p.reward_gap},
                {"round", p.round},
                {"question_id", p.question_id},
                {"config_digest", config_digest_}}
               .dump()
        << '\n';
  }
  return CmdResult{json{{"pairs", stats.pairs},
                        {"discards", stats.discards},
                        {"round", round},
                        {"prefs_file", out_path},
                        {"config_digest", config_digest_}}};
}

CmdResult Engine::recall(const std::string& traces_path,
                         const std::string& mode,
                         const std::string& dataset_path,
                         const std::string& format) {
  std::optional<retrieval::RecallMode> parsed_mode =
      retrieval::recall_mode_from(mode);
  if (!parsed_mode) {
    raise(ErrorCode::invalid_argument,
          "mode must be single-query or decomposed-union, got \"" + mode +
              "\"");
  }
  std::vector<env::EpisodeTrace> traces = read_traces(traces_path);

  std::map<std::string, metrics::GoldAnswerSet> golds;
  if (!dataset_path.empty()) {
    datasets::LoadResult data =
        datasets::load(dataset_path, format, cfg_.datasets, 0);
    golds = gold_map(data.questions);
  }

  std::vector<retrieval::RecallEpisode> episodes;
  for (const env::EpisodeTrace& trace : traces) {
    if (!trace.ok()) continue;
    retrieval::RecallEpisode episode = trace.to_recall_episode();
    if (!golds.empty()) {
      auto it = golds.find(trace.question_id);
      if (it == golds.end()) {
        raise(ErrorCode::missing_gold,
              "no gold answer for question id \"" + trace.question_id + "\"");
      }
      episode.gold = it->second;
    }
    episodes.push_back(std::move(episode));
  }

  retrieval::RecallReport r =
      retrieval::answer_recall(corpus(), episodes, *parsed_mode, cfg_.k);
  json report{{"mode", retrieval::to_string(r.mode)},
              {"k", r.k},
              {"questions", r.questions},
              {"recalled", r.recalled},
              {"recall", r.recall ? json(*r.recall) : json(nullptr)},
              {"config_digest", config_digest_}};
  return CmdResult{std::move(report)};
}

CmdResult Engine::loss_check(const std::string& pairs_path,
                             const std::string& manifest_path) {
  double beta = cfg_.beta;
  std::optional<prefs::RoundManifest> manifest;
  if (!manifest_path.empty()) {
    std::ifstream in(manifest_path);
    if (!in) {
      raise(ErrorCode::io, "cannot open round manifest: " + manifest_path);
    }
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) {
      raise(ErrorCode::parse, "round manifest is not valid JSON: " + manifest_path);
    }
    manifest = prefs::RoundManifest::from_json(j);
    beta = manifest->beta;
  }

  std::vector<objective::PairLogProbs> pairs = read_pair_logprobs(pairs_path);
  if (pairs.empty()) {
    raise(ErrorCode::invalid_argument,
          "pair-logprob file has no pairs: " + pairs_path);
  }
  double loss = objective::dpo_loss(pairs, beta);

  std::vector<objective::TokenLogProbTrace> chosen_policy;
  std::vector<double> margins;
  size_t round_mismatches = 0;
  for (const objective::PairLogProbs& p : pairs) {
    chosen_policy.push_back(p.chosen_policy);
    margins.push_back(objective::implicit_reward_margin(p, beta));
    if (manifest && p.round != manifest->round) ++round_mismatches;
  }
  double mean_margin = objective::pairwise_sum(margins) /
                       static_cast<double>(margins.size());
  double min_margin = *std::min_element(margins.begin(), margins.end());
  double max_margin = *std::max_element(margins.begin(), margins.end());

  json report{{"pairs", pairs.size()},
              {"beta", beta},
              {"dpo_loss", loss},
              {"sft_loss_chosen_policy", objective::sft_loss(chosen_policy)},
              {"mean_margin", mean_margin},
              {"min_margin", min_margin},
              {"max_margin", max_margin},
              {"config_digest", config_digest_}};
  if (manifest) {
    report["round"] = manifest->round;
    report["round_mismatches"] = round_mismatches;
    report["manifest_digest"] = manifest->digest();
  }
  return CmdResult{std::move(report)};
}

CmdResult Engine::round(int m, const std::string& dataset_path,
                        const std::string& format, const std::string& runs_dir,
                        int limit_override) {
  std::filesystem::path round_dir =
      std::filesystem::path(runs_dir) / ("round-" + std::to_string(m));

  std::optional<prefs::RoundManifest> predecessor;
  if (m > 0) {
    std::filesystem::path prev = std::filesystem::path(runs_dir) /
                                 ("round-" + std::to_string(m - 1)) /
                                 "manifest.json";
    std::ifstream in(prev);
    if (!in) {
      raise(ErrorCode::missing_predecessor,
            "round " + std::to_string(m) + " needs " + prev.string());
    }
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) {
      raise(ErrorCode::parse, "round manifest is not valid JSON: " + prev.string());
    }
    predecessor = prefs::RoundManifest::from_json(j);
  }

  DirLock lock(round_dir);
  std::string candidates_path = (round_dir / "candidates.jsonl").string();
  std::string prefs_path = (round_dir / "prefs.jsonl").string();

  CmdResult sampled =
      sample(dataset_path, format, candidates_path, false, limit_override);
  CmdResult built = build_prefs(candidates_path, prefs_path, m);

  prefs::RoundInputs inputs;
  inputs.n_samples = cfg_.n_samples;
  inputs.temperature = cfg_.sample_temperature;
  inputs.beta = cfg_.beta;
  inputs.k = cfg_.k;
  inputs.dataset_digest = sampled.report.value("dataset_digest", std::string{});
  inputs.config_digest = config_digest_;
  inputs.decomposer_id = cfg_.decomposer.id();
  inputs.sft_checkpoint_id = cfg_.round.sft_checkpoint_id;
  prefs::RoundManifest manifest = prefs::plan_round(m, inputs, predecessor);

  {
    std::ofstream out = open_output((round_dir / "manifest.json").string());
    out << manifest.to_json().dump(2) << '\n';
  }

  std::string handoff =
      "Train the decomposer on " + prefs_path + " with DPO (beta=" +
      std::to_string(cfg_.beta) + "), reference checkpoint \"" +
      manifest.reference_id + "\"; publish the trained model as \"" +
      manifest.policy_id + "\" and point the next round's decomposer at it.";

  json report{{"round", m},
              {"round_dir", round_dir.string()},
              {"candidates", sampled.report},
              {"preferences", built.report},
              {"manifest", manifest.to_json()},
              {"manifest_digest", manifest.digest()},
              {"handoff", handoff},
              {"config_digest", config_digest_}};
  return CmdResult{std::move(report), sampled.partial};
}

CmdResult Engine::verify(const std::string& file_path) {
  std::ifstream in(file_path);
  if (!in) {
    raise(ErrorCode::io, "cannot open file: " + file_path);
  }
  std::string first_line;
  while (std::getline(in, first_line)) {
    if (!first_line.empty()) break;
  }
  if (first_line.empty()) {
    raise(ErrorCode::parse, "file is empty: " + file_path);
  }
  json j = json::parse(first_line, nullptr, false);
  if (j.is_discarded()) {
    // Whole-file JSON document (e.g. a manifest written with indentation).
    std::ifstream whole(file_path);
    j = json::parse(whole, nullptr, false);
    if (j.is_discarded()) {
      raise(ErrorCode::parse, "file is not JSON or JSONL: " + file_path);
    }
  }
  std::string embedded;
  if (j.contains("config_digest") && j["config_digest"].is_string()) {
    embedded = j["config_digest"].get<std::string>();
  } else if (j.contains("provenance") && j["provenance"].is_object()) {
    embedded = j["provenance"].value("config_digest", std::string{});
  }
  if (embedded.empty()) {
    raise(ErrorCode::parse,
          "file does not embed a config digest: " + file_path);
  }
  bool match = embedded == config_digest_;
  json report{{"file", file_path},
              {"embedded_digest", embedded},
              {"config_digest", config_digest_},
              {"match", match}};
  return CmdResult{std::move(report), !match};
}

CmdResult Engine::cache_stats() {
  gateway::ResponseCache::Stats s = gw_->cache().stats();
  return CmdResult{json{{"cache_dir", gw_->cache().root().string()},
                        {"entries", s.entries},
                        {"bytes", s.bytes},
                        {"counters", counters_json(gw_->counters())}}};
}

CmdResult Engine::cache_clear() {
  uint64_t removed = gw_->cache().clear();
  return CmdResult{json{{"cache_dir", gw_->cache().root().string()},
                        {"removed", removed}}};
}

}  // namespace collabrag::pipeline
