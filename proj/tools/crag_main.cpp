// crag — CLI over the collabrag C API.
//
// Verbs: ingest, run, sample, build-sft, build-prefs, recall, loss-check,
// round, verify, cache. Exit codes: 0 success, 2 partial failure, 1 fatal.

#include <cstdio>
#include <memory>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "collabrag/collabrag.h"

namespace {

using nlohmann::json;

struct GlobalOpts {
  std::string config_path;
  std::string cache_dir;
  int concurrency = -1;
  long long seed = -1;
};

std::string overrides_json(const GlobalOpts& g) {
  json overrides = json::object();
  if (!g.cache_dir.empty()) overrides["cache_dir"] = g.cache_dir;
  if (g.concurrency > 0) overrides["concurrency"] = g.concurrency;
  if (g.seed >= 0) overrides["seed"] = g.seed;
  return overrides.dump();
}

struct EngineHandle {
  crag_engine* engine = nullptr;
  ~EngineHandle() { crag_engine_destroy(engine); }
};

int finish(crag_status rc, char* report) {
  if (report != nullptr) {
    std::printf("%s\n", json::parse(report).dump(2).c_str());
    crag_string_free(report);
  }
  if (rc == CRAG_OK) return 0;
  if (rc == CRAG_PARTIAL) {
    std::fprintf(stderr, "warning: completed with partial failures\n");
    return 2;
  }
  std::fprintf(stderr, "error: %s\n", crag_last_error());
  return 1;
}

int open_engine(const GlobalOpts& g, EngineHandle& h) {
  crag_status rc = crag_engine_create(
      g.config_path.empty() ? nullptr : g.config_path.c_str(),
      overrides_json(g).c_str(), &h.engine);
  if (rc != CRAG_OK) {
    std::fprintf(stderr, "error: %s\n", crag_last_error());
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"collabrag pipeline engine"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--config", g.config_path, "pipeline config JSON file");
  app.add_option("--cache-dir", g.cache_dir, "response cache directory");
  app.add_option("--concurrency", g.concurrency, "max in-flight requests");
  app.add_option("--seed", g.seed, "run seed recorded in manifests");

  // ingest
  std::string corpus_path, index_dir;
  CLI::App* ingest = app.add_subcommand("ingest", "index a passage corpus");
  ingest->add_option("--corpus", corpus_path, "passages JSONL (id/title/text)")
      ->required();
  ingest->add_option("--index-dir", index_dir, "output index directory")
      ->required();

  // run
  std::string dataset_path, dataset_format = "custom", out_path;
  int limit = -1;
  CLI::App* run = app.add_subcommand("run", "decompose + answer a dataset");
  run->add_option("--dataset", dataset_path, "dataset file")->required();
  run->add_option("--format", dataset_format,
                  "hotpotqa|2wikimqa|musique|strategyqa|bamboogle|custom");
  run->add_option("--out", out_path, "output traces JSONL")->required();
  run->add_option("--limit", limit, "cap on questions (overrides eval slice)");

  // sample
  bool sft_only = false;
  CLI::App* sample =
      app.add_subcommand("sample", "sample N scored decompositions/question");
  sample->add_option("--dataset", dataset_path, "dataset file")->required();
  sample->add_option("--format", dataset_format, "dataset format");
  sample->add_option("--out", out_path, "output candidates JSONL")->required();
  sample->add_option("--limit", limit, "cap on questions");
  sample->add_flag("--sft-only", sft_only, "allow N=1 (SFT data only)");

  // build-sft
  std::string candidates_path;
  bool include_all = false;
  CLI::App* build_sft =
      app.add_subcommand("build-sft", "rejection-sampling SFT dataset");
  build_sft->add_option("--candidates", candidates_path, "candidates JSONL")
      ->required();
  build_sft->add_option("--out", out_path, "output SFT JSONL")->required();
  build_sft->add_flag("--all", include_all,
                      "keep every candidate above the reward threshold");

  // build-prefs
  int round_m = 0;
  CLI::App* build_prefs =
      app.add_subcommand("build-prefs", "best/worst-of-N preference pairs");
  build_prefs->add_option("--candidates", candidates_path, "candidates JSONL")
      ->required();
  build_prefs->add_option("--out", out_path, "output preference JSONL")
      ->required();
  build_prefs->add_option("--round", round_m, "DPO round index")->required();

  // recall
  std::string traces_path, mode = "decomposed-union";
  CLI::App* recall =
      app.add_subcommand("recall", "passage-level answer recall");
  recall->add_option("--traces", traces_path, "episode traces JSONL")
      ->required();
  recall->add_option("--mode", mode, "single-query|decomposed-union");
  recall->add_option("--dataset", dataset_path, "gold dataset (optional)");
  recall->add_option("--format", dataset_format, "dataset format");

  // loss-check
  std::string pairs_path, manifest_path;
  CLI::App* loss_check = app.add_subcommand(
      "loss-check", "verify SFT/DPO losses on logprob traces");
  loss_check->add_option("--pairs", pairs_path, "pair-logprob JSONL")
      ->required();
  loss_check->add_option("--manifest", manifest_path,
                         "round manifest (beta/round source)");

  // round
  std::string runs_dir = "runs";
  CLI::App* round_cmd =
      app.add_subcommand("round", "sample + build-prefs + manifest");
  round_cmd->add_option("--m", round_m, "round index")->required();
  round_cmd->add_option("--dataset", dataset_path, "training questions")
      ->required();
  round_cmd->add_option("--format", dataset_format, "dataset format");
  round_cmd->add_option("--runs-dir", runs_dir, "runs directory");
  round_cmd->add_option("--limit", limit, "cap on questions");

  // verify
  std::string verify_file;
  CLI::App* verify =
      app.add_subcommand("verify", "check a file's embedded config digest");
  verify->add_option("--file", verify_file, "output file to verify")
      ->required();

  // cache
  CLI::App* cache = app.add_subcommand("cache", "response cache maintenance");
  cache->require_subcommand(1);
  CLI::App* cache_stats = cache->add_subcommand("stats", "entry count and size");
  CLI::App* cache_clear = cache->add_subcommand("clear", "delete all entries");

  CLI11_PARSE(app, argc, argv);

  EngineHandle h;
  if (int rc = open_engine(g, h); rc != 0) return rc;

  char* report = nullptr;
  crag_status rc = CRAG_ERR_INTERNAL;
  if (*ingest) {
    rc = crag_ingest(h.engine, corpus_path.c_str(), index_dir.c_str(), &report);
  } else if (*run) {
    rc = crag_run(h.engine, dataset_path.c_str(), dataset_format.c_str(),
                  out_path.c_str(), limit, &report);
  } else if (*sample) {
    rc = crag_sample(h.engine, dataset_path.c_str(), dataset_format.c_str(),
                     out_path.c_str(), sft_only ? 1 : 0, limit, &report);
  } else if (*build_sft) {
    rc = crag_build_sft(h.engine, candidates_path.c_str(), out_path.c_str(),
                        include_all ? 1 : 0, &report);
  } else if (*build_prefs) {
    rc = crag_build_prefs(h.engine, candidates_path.c_str(), out_path.c_str(),
                          round_m, &report);
  } else if (*recall) {
    rc = crag_recall(h.engine, traces_path.c_str(), mode.c_str(),
                     dataset_path.empty() ? nullptr : dataset_path.c_str(),
                     dataset_format.c_str(), &report);
  } else if (*loss_check) {
    rc = crag_loss_check(h.engine, pairs_path.c_str(),
                         manifest_path.empty() ? nullptr : manifest_path.c_str(),
                         &report);
  } else if (*round_cmd) {
    rc = crag_round(h.engine, round_m, dataset_path.c_str(),
                    dataset_format.c_str(), runs_dir.c_str(), limit, &report);
  } else if (*verify) {
    rc = crag_verify(h.engine, verify_file.c_str(), &report);
  } else if (*cache_stats) {
    rc = crag_cache_stats(h.engine, &report);
  } else if (*cache_clear) {
    rc = crag_cache_clear(h.engine, &report);
  }
  return finish(rc, report);
}
