#include "collabrag/collabrag.h"

#include <cstring>
#include <new>
#include <string>

#include <nlohmann/json.hpp>

#include "config.hpp"
#include "decomp.hpp"
#include "error.hpp"
#include "gateway.hpp"
#include "metrics.hpp"
#include "objective.hpp"
#include "pipeline.hpp"
#include "prompts.hpp"

namespace {

using nlohmann::json;

thread_local std::string t_last_error;

crag_status status_for(collabrag::ErrorCode code) {
  using collabrag::ErrorCode;
  switch (code) {
    case ErrorCode::invalid_argument:
    case ErrorCode::unresolved_reference:
      return CRAG_ERR_INVALID_ARGUMENT;
    case ErrorCode::parse:
    case ErrorCode::duplicate_id:
    case ErrorCode::missing_gold:
    case ErrorCode::not_found:
      return CRAG_ERR_PARSE;
    case ErrorCode::io:
      return CRAG_ERR_IO;
    case ErrorCode::backend_transport:
      return CRAG_ERR_BACKEND;
    case ErrorCode::backend_auth:
      return CRAG_ERR_AUTH;
    case ErrorCode::cache_corrupt:
      return CRAG_ERR_CACHE_CORRUPT;
    case ErrorCode::missing_predecessor:
      return CRAG_ERR_MISSING_PREDECESSOR;
    case ErrorCode::internal:
      return CRAG_ERR_INTERNAL;
  }
  return CRAG_ERR_INTERNAL;
}

char* dup_string(const std::string& s) {
  char* out = new (std::nothrow) char[s.size() + 1];
  if (out == nullptr) return nullptr;
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

crag_status set_out(char** out, const std::string& value) {
  if (out == nullptr) {
    t_last_error = "output pointer is null";
    return CRAG_ERR_INVALID_ARGUMENT;
  }
  *out = dup_string(value);
  if (*out == nullptr) {
    t_last_error = "out of memory";
    return CRAG_ERR_INTERNAL;
  }
  return CRAG_OK;
}

template <typename Fn>
crag_status guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const collabrag::Error& e) {
    t_last_error = e.what();
    return status_for(e.code());
  } catch (const json::exception& e) {
    t_last_error = e.what();
    return CRAG_ERR_PARSE;
  } catch (const std::exception& e) {
    t_last_error = e.what();
    return CRAG_ERR_INTERNAL;
  }
}

crag_status require(const void* p, const char* name) {
  if (p == nullptr) {
    t_last_error = std::string(name) + " must not be null";
    return CRAG_ERR_INVALID_ARGUMENT;
  }
  return CRAG_OK;
}

std::vector<std::string> to_vector(const char* const* items, size_t n) {
  std::vector<std::string> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    out.emplace_back(items[i] == nullptr ? "" : items[i]);
  }
  return out;
}

collabrag::metrics::GoldAnswerSet gold_from(const char* const* gold,
                                            size_t n_gold) {
  return collabrag::metrics::GoldAnswerSet::from(to_vector(gold, n_gold));
}

json verdict_json(const collabrag::decomp::FormatVerdict& v) {
  json violations = json::array();
  for (auto violation : v.violations) {
    violations.push_back(collabrag::decomp::to_string(violation));
  }
  return json{{"valid", v.valid}, {"violations", violations}};
}

crag_status emit_command(collabrag::pipeline::CmdResult result,
                         char** report_json) {
  crag_status rc = set_out(report_json, result.report.dump());
  if (rc != CRAG_OK) return rc;
  return result.partial ? CRAG_PARTIAL : CRAG_OK;
}

}  // namespace

struct crag_engine {
  collabrag::pipeline::Engine impl;
};

extern "C" {

const char* crag_version(void) { return "0.1.0"; }

const char* crag_last_error(void) { return t_last_error.c_str(); }

void crag_string_free(char* s) { delete[] s; }

crag_status crag_engine_create(const char* config_path,
                               const char* overrides_json, crag_engine** out) {
  if (crag_status rc = require(out, "out"); rc != CRAG_OK) return rc;
  return guarded([&]() -> crag_status {
    json overrides = json::object();
    if (overrides_json != nullptr && overrides_json[0] != '\0') {
      overrides = json::parse(overrides_json);
      if (!overrides.is_object()) {
        collabrag::raise(collabrag::ErrorCode::invalid_argument,
                         "overrides must be a JSON object");
      }
    }
    collabrag::config::PipelineConfig cfg =
        (config_path != nullptr && config_path[0] != '\0')
            ? collabrag::config::PipelineConfig::load(config_path, overrides)
            : collabrag::config::PipelineConfig::defaults_with(overrides);
    *out = new crag_engine{collabrag::pipeline::Engine(std::move(cfg))};
    return CRAG_OK;
  });
}

void crag_engine_destroy(crag_engine* engine) { delete engine; }

crag_status crag_engine_config_digest(crag_engine* engine, char** out) {
  if (crag_status rc = require(engine, "engine"); rc != CRAG_OK) return rc;
  return guarded([&] { return set_out(out, engine->impl.config_digest()); });
}

crag_status crag_parse_decomposition(const char* raw, char** out_json) {
  if (crag_status rc = require(raw, "raw"); rc != CRAG_OK) return rc;
  return guarded([&]() -> crag_status {
    collabrag::decomp::ParseResult parsed =
        collabrag::decomp::parse_decomposition(raw);
    if (const auto* err =
            std::get_if<collabrag::decomp::ParseError>(&parsed)) {
      t_last_error = std::string(collabrag::decomp::to_string(err->code)) +
                     ": " + err->message;
      return CRAG_ERR_PARSE;
    }
    const auto& d = std::get<collabrag::decomp::Decomposition>(parsed);
    json steps = json::array();
    for (const auto& step : d.steps) {
      steps.push_back(
          json{{"index", step.index}, {"template", step.template_text}});
    }
    return set_out(out_json, json{{"steps", steps}}.dump());
  });
}

crag_status crag_check_format(const char* raw, int t_max, char** out_json) {
  if (crag_status rc = require(raw, "raw"); rc != CRAG_OK) return rc;
  return guarded([&] {
    int cap = t_max > 0 ? t_max : collabrag::decomp::kDefaultTMax;
    return set_out(out_json,
                   verdict_json(collabrag::decomp::check_format(
                                    std::string_view(raw), cap))
                       .dump());
  });
}

crag_status crag_resolve_step(const char* template_text,
                              const char* const* prior, size_t n_prior,
                              char** out_text) {
  if (crag_status rc = require(template_text, "template_text"); rc != CRAG_OK)
    return rc;
  if (n_prior > 0) {
    if (crag_status rc = require(prior, "prior"); rc != CRAG_OK) return rc;
  }
  return guarded([&] {
    std::vector<std::string> answers = to_vector(prior, n_prior);
    return set_out(out_text,
                   collabrag::decomp::resolve_template(template_text, answers));
  });
}

crag_status crag_serialize_decomposition(const char* decomposition_json,
                                         char** out_text) {
  if (crag_status rc = require(decomposition_json, "decomposition_json");
      rc != CRAG_OK)
    return rc;
  return guarded([&]() -> crag_status {
    json j = json::parse(decomposition_json);
    collabrag::decomp::Decomposition d;
    for (const auto& step : j.at("steps")) {
      d.steps.push_back(collabrag::decomp::SubQuestion{
          step.at("index").get<int>(),
          step.at("template").get<std::string>()});
    }
    return set_out(out_text, collabrag::decomp::serialize_decomposition(d));
  });
}

crag_status crag_normalize_answer(const char* s, char** out) {
  if (crag_status rc = require(s, "s"); rc != CRAG_OK) return rc;
  return guarded(
      [&] { return set_out(out, collabrag::metrics::normalize_answer(s)); });
}

crag_status crag_exact_match(const char* pred, const char* const* gold,
                             size_t n_gold, int* out) {
  if (crag_status rc = require(pred, "pred"); rc != CRAG_OK) return rc;
  if (crag_status rc = require(out, "out"); rc != CRAG_OK) return rc;
  return guarded([&]() -> crag_status {
    *out = collabrag::metrics::exact_match(pred, gold_from(gold, n_gold));
    return CRAG_OK;
  });
}

crag_status crag_accuracy(const char* pred, const char* const* gold,
                          size_t n_gold, int* out) {
  if (crag_status rc = require(pred, "pred"); rc != CRAG_OK) return rc;
  if (crag_status rc = require(out, "out"); rc != CRAG_OK) return rc;
  return guarded([&]() -> crag_status {
    *out = collabrag::metrics::accuracy(pred, gold_from(gold, n_gold));
    return CRAG_OK;
  });
}

crag_status crag_f1_score(const char* pred, const char* const* gold,
                          size_t n_gold, double* out) {
  if (crag_status rc = require(pred, "pred"); rc != CRAG_OK) return rc;
  if (crag_status rc = require(out, "out"); rc != CRAG_OK) return rc;
  return guarded([&]() -> crag_status {
    *out = collabrag::metrics::f1_score(pred, gold_from(gold, n_gold));
    return CRAG_OK;
  });
}

crag_status crag_score_episode(const char* final_answer,
                               const char* const* gold, size_t n_gold,
                               const char* raw_decomposition, int t_max,
                               char** out_json) {
  if (crag_status rc = require(final_answer, "final_answer"); rc != CRAG_OK)
    return rc;
  if (crag_status rc = require(raw_decomposition, "raw_decomposition");
      rc != CRAG_OK)
    return rc;
  return guarded([&] {
    int cap = t_max > 0 ? t_max : collabrag::decomp::kDefaultTMax;
    collabrag::decomp::FormatVerdict verdict =
        collabrag::decomp::check_format(std::string_view(raw_decomposition),
                                        cap);
    collabrag::metrics::RewardBreakdown r = collabrag::metrics::score_episode(
        final_answer, gold_from(gold, n_gold), verdict);
    return set_out(out_json, json{{"format_valid", r.format_valid},
                                  {"em", r.em},
                                  {"acc", r.acc},
                                  {"u", r.u}}
                                 .dump());
  });
}

crag_status crag_render_decompose_prompt(const char* question, char** out) {
  if (crag_status rc = require(question, "question"); rc != CRAG_OK) return rc;
  return guarded([&] {
    return set_out(out, collabrag::prompts::render_decompose_prompt(
                            collabrag::prompts::PromptBundle::defaults(),
                            question));
  });
}

crag_status crag_render_subanswer_prompt(const char* subquestion,
                                         const char* passages_json,
                                         char** out) {
  if (crag_status rc = require(subquestion, "subquestion"); rc != CRAG_OK)
    return rc;
  return guarded([&]() -> crag_status {
    std::vector<collabrag::retrieval::Passage> storage;
    if (passages_json != nullptr && passages_json[0] != '\0') {
      json j = json::parse(passages_json);
      for (const auto& p : j) {
        storage.push_back(collabrag::retrieval::Passage{
            p.value("id", std::string{}), p.value("title", std::string{}),
            p.value("text", std::string{})});
      }
    }
    std::vector<const collabrag::retrieval::Passage*> passages;
    for (const auto& p : storage) passages.push_back(&p);
    return set_out(out, collabrag::prompts::render_subanswer_prompt(
                            collabrag::prompts::PromptBundle::defaults(),
                            subquestion, passages));
  });
}

crag_status crag_render_final_prompt(const char* question, const char* qa_json,
                                     char** out) {
  if (crag_status rc = require(question, "question"); rc != CRAG_OK) return rc;
  if (crag_status rc = require(qa_json, "qa_json"); rc != CRAG_OK) return rc;
  return guarded([&]() -> crag_status {
    json j = json::parse(qa_json);
    std::vector<collabrag::prompts::QaPair> pairs;
    for (const auto& p : j) {
      pairs.push_back(collabrag::prompts::QaPair{
          p.value("question", std::string{}), p.value("answer", std::string{})});
    }
    return set_out(out, collabrag::prompts::render_final_prompt(
                            collabrag::prompts::PromptBundle::defaults(),
                            question, pairs));
  });
}

crag_status crag_prompt_digest(const char* prompt, char** out) {
  if (crag_status rc = require(prompt, "prompt"); rc != CRAG_OK) return rc;
  return guarded(
      [&] { return set_out(out, collabrag::gateway::prompt_digest(prompt)); });
}

crag_status crag_sft_loss(const double* logprobs, const size_t* lens,
                          size_t n_traces, double* out) {
  if (crag_status rc = require(out, "out"); rc != CRAG_OK) return rc;
  if (n_traces > 0) {
    if (crag_status rc = require(lens, "lens"); rc != CRAG_OK) return rc;
  }
  return guarded([&]() -> crag_status {
    std::vector<collabrag::objective::TokenLogProbTrace> traces;
    size_t offset = 0;
    for (size_t i = 0; i < n_traces; ++i) {
      collabrag::objective::TokenLogProbTrace trace;
      trace.logprobs.assign(logprobs + offset, logprobs + offset + lens[i]);
      offset += lens[i];
      traces.push_back(std::move(trace));
    }
    *out = collabrag::objective::sft_loss(traces);
    return CRAG_OK;
  });
}

crag_status crag_dpo_loss(const char* pairs_json, double beta,
                          char** out_json) {
  if (crag_status rc = require(pairs_json, "pairs_json"); rc != CRAG_OK)
    return rc;
  return guarded([&]() -> crag_status {
    json j = json::parse(pairs_json);
    std::vector<collabrag::objective::PairLogProbs> pairs;
    for (const auto& p : j) {
      collabrag::objective::PairLogProbs pair;
      pair.chosen_policy.logprobs =
          p.at("chosen_policy").get<std::vector<double>>();
      pair.chosen_reference.logprobs =
          p.at("chosen_reference").get<std::vector<double>>();
      pair.rejected_policy.logprobs =
          p.at("rejected_policy").get<std::vector<double>>();
      pair.rejected_reference.logprobs =
          p.at("rejected_reference").get<std::vector<double>>();
      pairs.push_back(std::move(pair));
    }
    double loss = collabrag::objective::dpo_loss(pairs, beta);
    std::vector<double> margins;
    for (const auto& pair : pairs) {
      margins.push_back(
          collabrag::objective::implicit_reward_margin(pair, beta));
    }
    double mean_margin = collabrag::objective::pairwise_sum(margins) /
                         static_cast<double>(margins.size());
    return set_out(out_json, json{{"pairs", pairs.size()},
                                  {"beta", beta},
                                  {"dpo_loss", loss},
                                  {"mean_margin", mean_margin}}
                                 .dump());
  });
}

crag_status crag_ingest(crag_engine* engine, const char* corpus_jsonl,
                        const char* index_dir, char** report_json) {
  if (crag_status rc = require(engine, "engine"); rc != CRAG_OK) return rc;
  if (crag_status rc = require(corpus_jsonl, "corpus_jsonl"); rc != CRAG_OK)
    return rc;
  if (crag_status rc = require(index_dir, "index_dir"); rc != CRAG_OK)
    return rc;
  return guarded([&] {
    return emit_command(engine->impl.ingest(corpus_jsonl, index_dir),
                        report_json);
  });
}

crag_status crag_run(crag_engine* engine, const char* dataset_path,
                     const char* format, const char* out_traces, int limit,
                     char** report_json) {
  if (crag_status rc = require(engine, "engine"); rc != CRAG_OK) return rc;
  if (crag_status rc = require(dataset_path, "dataset_path"); rc != CRAG_OK)
    return rc;
  if (crag_status rc = require(out_traces, "out_traces"); rc != CRAG_OK)
    return rc;
  return guarded([&] {
    return emit_command(
        engine->impl.run(dataset_path, format == nullptr ? "custom" : format,
                         out_traces, limit),
        report_json);
  });
}

crag_status crag_sample(crag_engine* engine, const char* dataset_path,
                        const char* format, const char* out_candidates,
                        int sft_only, int limit, char** report_json) {
  if (crag_status rc = require(engine, "engine"); rc != CRAG_OK) return rc;
  if (crag_status rc = require(dataset_path, "dataset_path"); rc != CRAG_OK)
    return rc;
  if (crag_status rc = require(out_candidates, "out_candidates");
      rc != CRAG_OK)
    return rc;
  return guarded([&] {
    return emit_command(
        engine->impl.sample(dataset_path,
                            format == nullptr ? "custom" : format,
                            out_candidates, sft_only != 0, limit),
        report_json);
  });
}

crag_status crag_build_sft(crag_engine* engine, const char* candidates_path,
                           const char* out_path, int include_all,
                           char** report_json) {
  if (crag_status rc = require(engine, "engine"); rc != CRAG_OK) return rc;
  if (crag_status rc = require(candidates_path, "candidates_path");
      rc != CRAG_OK)
    return rc;
  if (crag_status rc = require(out_path, "out_path"); rc != CRAG_OK) return rc;
  return guarded([&] {
    return emit_command(
        engine->impl.build_sft(candidates_path, out_path, include_all != 0),
        report_json);
  });
}

crag_status crag_build_prefs(crag_engine* engine, const char* candidates_path,
                             const char* out_path, int round,
                             char** report_json) {
  if (crag_status rc = require(engine, "engine"); rc != CRAG_OK) return rc;
  if (crag_status rc = require(candidates_path, "candidates_path");
      rc != CRAG_OK)
    return rc;
  if (crag_status rc = require(out_path, "out_path"); rc != CRAG_OK) return rc;
  return guarded([&] {
    return emit_command(
        engine->impl.build_prefs(candidates_path, out_path, round),
        report_json);
  });
}

crag_status crag_recall(crag_engine* engine, const char* traces_path,
                        const char* mode, const char* dataset_path,
                        const char* format, char** report_json) {
  if (crag_status rc = require(engine, "engine"); rc != CRAG_OK) return rc;
  if (crag_status rc = require(traces_path, "traces_path"); rc != CRAG_OK)
    return rc;
  if (crag_status rc = require(mode, "mode"); rc != CRAG_OK) return rc;
  return guarded([&] {
    return emit_command(
        engine->impl.recall(traces_path, mode,
                            dataset_path == nullptr ? "" : dataset_path,
                            format == nullptr ? "custom" : format),
        report_json);
  });
}

crag_status crag_loss_check(crag_engine* engine, const char* pairs_path,
                            const char* manifest_path, char** report_json) {
  if (crag_status rc = require(engine, "engine"); rc != CRAG_OK) return rc;
  if (crag_status rc = require(pairs_path, "pairs_path"); rc != CRAG_OK)
    return rc;
  return guarded([&] {
    return emit_command(
        engine->impl.loss_check(
            pairs_path, manifest_path == nullptr ? "" : manifest_path),
        report_json);
  });
}

crag_status crag_round(crag_engine* engine, int round, const char* dataset_path,
                       const char* format, const char* runs_dir, int limit,
                       char** report_json) {
  if (crag_status rc = require(engine, "engine"); rc != CRAG_OK) return rc;
  if (crag_status rc = require(dataset_path, "dataset_path"); rc != CRAG_OK)
    return rc;
  if (crag_status rc = require(runs_dir, "runs_dir"); rc != CRAG_OK) return rc;
  return guarded([&] {
    return emit_command(
        engine->impl.round(round, dataset_path,
                           format == nullptr ? "custom" : format, runs_dir,
                           limit),
        report_json);
  });
}

crag_status crag_verify(crag_engine* engine, const char* file_path,
                        char** report_json) {
  if (crag_status rc = require(engine, "engine"); rc != CRAG_OK) return rc;
  if (crag_status rc = require(file_path, "file_path"); rc != CRAG_OK)
    return rc;
  return guarded(
      [&] { return emit_command(engine->impl.verify(file_path), report_json); });
}

crag_status crag_cache_stats(crag_engine* engine, char** report_json) {
  if (crag_status rc = require(engine, "engine"); rc != CRAG_OK) return rc;
  return guarded(
      [&] { return emit_command(engine->impl.cache_stats(), report_json); });
}

crag_status crag_cache_clear(crag_engine* engine, char** report_json) {
  if (crag_status rc = require(engine, "engine"); rc != CRAG_OK) return rc;
  return guarded(
      [&] { return emit_command(engine->impl.cache_clear(), report_json); });
}

}  // extern "C"
