#include "environment.hpp"

#include <atomic>
#include <thread>

#include "error.hpp"

namespace collabrag::env {

namespace {

using nlohmann::json;

json verdict_to_json(const decomp::FormatVerdict& v) {
  json violations = json::array();
  for (decomp::Violation violation : v.violations) {
    violations.push_back(decomp::to_string(violation));
  }
  return json{{"valid", v.valid}, {"violations", violations}};
}

decomp::FormatVerdict verdict_from_json(const json& j) {
  decomp::FormatVerdict v;
  v.valid = j.value("valid", false);
  for (const auto& name : j.value("violations", json::array())) {
    std::string s = name.get<std::string>();
    using V = decomp::Violation;
    for (V candidate : {V::parse_fail, V::bad_label_sequence,
                        V::out_of_range_ref, V::textual_ref, V::empty_step,
                        V::too_many_steps}) {
      if (s == decomp::to_string(candidate)) {
        v.violations.push_back(candidate);
        break;
      }
    }
  }
  return v;
}

}  // namespace

void QuestionInstance::validate() const {
  if (question.empty()) {
    raise(ErrorCode::invalid_argument,
          "question must be non-empty (id \"" + id + "\")");
  }
}

json EpisodeTrace::to_json() const {
  json steps_json = json::array();
  for (const StepRecord& s : steps) {
    json hits = json::array();
    for (const retrieval::Hit& h : s.hits) {
      hits.push_back(json{{"id", h.passage_id}, {"score", h.score}});
    }
    steps_json.push_back(json{{"t", s.index},
                              {"template", s.template_text},
                              {"resolved", s.resolved},
                              {"hits", hits},
                              {"answer", s.answer}});
  }
  return json{
      {"schema_version", kTraceSchemaVersion},
      {"question_id", question_id},
      {"question", question},
      {"dataset", dataset},
      {"gold", gold_aliases},
      {"raw_decomposition", raw_decomposition},
      {"format", verdict_to_json(verdict)},
      {"steps", steps_json},
      {"final_answer", final_answer},
      {"reward",
       {{"format_valid", reward.format_valid},
        {"em", reward.em},
        {"acc", reward.acc},
        {"u", reward.u}}},
      {"provenance",
       {{"decomposer", provenance.decomposer_id},
        {"reader", provenance.reader_id},
        {"config_digest", provenance.config_digest},
        {"timestamps", provenance.timestamps}}},
      {"error", error},
  };
}

EpisodeTrace EpisodeTrace::from_json(const json& j) {
  if (!j.is_object() || j.value("schema_version", 0) != kTraceSchemaVersion) {
    raise(ErrorCode::parse, "unsupported episode trace schema");
  }
  EpisodeTrace t;
  t.question_id = j.value("question_id", std::string{});
  t.question = j.value("question", std::string{});
  t.dataset = j.value("dataset", std::string{});
  t.gold_aliases = j.value("gold", std::vector<std::string>{});
  t.raw_decomposition = j.value("raw_decomposition", std::string{});
  t.verdict = verdict_from_json(j.value("format", json::object()));
  for (const auto& s : j.value("steps", json::array())) {
    StepRecord record;
    record.index = s.value("t", 0);
    record.template_text = s.value("template", std::string{});
    record.resolved = s.value("resolved", std::string{});
    record.answer = s.value("answer", std::string{});
    for (const auto& h : s.value("hits", json::array())) {
      record.hits.push_back(retrieval::Hit{h.value("id", std::string{}),
                                           h.value("score", 0.0)});
    }
    t.steps.push_back(std::move(record));
  }
  t.final_answer = j.value("final_answer", std::string{});
  json reward = j.value("reward", json::object());
  t.reward.format_valid = reward.value("format_valid", false);
  t.reward.em = reward.value("em", 0);
  t.reward.acc = reward.value("acc", 0);
  t.reward.u = reward.value("u", 0.0);
  json prov = j.value("provenance", json::object());
  t.provenance.decomposer_id = prov.value("decomposer", std::string{});
  t.provenance.reader_id = prov.value("reader", std::string{});
  t.provenance.config_digest = prov.value("config_digest", std::string{});
  t.provenance.timestamps =
      prov.value("timestamps", std::vector<std::string>{});
  t.error = j.value("error", std::string{});
  return t;
}

retrieval::RecallEpisode EpisodeTrace::to_recall_episode() const {
  retrieval::RecallEpisode episode{
      question, {}, metrics::GoldAnswerSet::from(gold_aliases)};
  for (const StepRecord& s : steps) {
    for (const retrieval::Hit& h : s.hits) {
      bool seen = false;
      for (const std::string& id : episode.retrieved_ids) {
        if (id == h.passage_id) {
          seen = true;
          break;
        }
      }
      if (!seen) episode.retrieved_ids.push_back(h.passage_id);
    }
  }
  return episode;
}

EpisodeTrace run_episode(const QuestionInstance& q,
                         std::string_view raw_decomposition,
                         gateway::ModelGateway& gw,
                         const gateway::BackendSpec& reader,
                         const retrieval::CorpusIndex& corpus,
                         const EnvConfig& cfg,
                         const prompts::PromptBundle& bundle) {
  q.validate();
  EpisodeTrace trace;
  trace.question_id = q.id;
  trace.question = q.question;
  trace.dataset = q.dataset;
  trace.gold_aliases = q.gold.aliases;
  trace.raw_decomposition = std::string(raw_decomposition);
  trace.provenance.decomposer_id = cfg.decomposer_id;
  trace.provenance.reader_id = reader.id();
  trace.provenance.config_digest = cfg.config_digest;

  decomp::ParseResult parsed = decomp::parse_decomposition(raw_decomposition);
  trace.verdict = decomp::check_format(parsed, cfg.t_max);
  if (!trace.verdict.valid) {
    trace.reward = metrics::score_episode("", q.gold, trace.verdict);
    return trace;
  }

  const decomp::Decomposition& d = std::get<decomp::Decomposition>(parsed);
  gateway::DecodingParams greedy{0.0, cfg.max_tokens, 1};

  std::vector<std::string> prior_answers;
  std::vector<prompts::QaPair> qa_pairs;
  for (const decomp::SubQuestion& step : d.steps) {
    StepRecord record;
    record.index = step.index;
    record.template_text = step.template_text;
    record.resolved = decomp::resolve_step(step, prior_answers);

    std::vector<const retrieval::Passage*> passages;
    if (!retrieval::tokenize(record.resolved).empty()) {
      retrieval::RetrievalResult r = corpus.retrieve(record.resolved, cfg.k);
      record.hits = r.hits;
      for (const retrieval::Hit& h : record.hits) {
        passages.push_back(corpus.find(h.passage_id));
      }
    }

    std::string prompt =
        prompts::render_subanswer_prompt(bundle, record.resolved, passages);
    if (cfg.include_history && !qa_pairs.empty()) {
      prompt += "\n\nPrevious sub-questions and answers:\n";
      prompt += prompts::format_qa_block(qa_pairs);
    }
    gateway::Completion completion =
        gw.complete(reader, prompt, greedy).front();
    record.answer = completion.text;
    trace.provenance.timestamps.push_back(completion.created_at);

    prior_answers.push_back(record.answer);
    qa_pairs.push_back(prompts::QaPair{record.resolved, record.answer});
    trace.steps.push_back(std::move(record));
  }

  std::string final_prompt =
      prompts::render_final_prompt(bundle, q.question, qa_pairs);
  gateway::Completion final_completion =
      gw.complete(reader, final_prompt, greedy).front();
  trace.final_answer = final_completion.text;
  trace.provenance.timestamps.push_back(final_completion.created_at);

  trace.reward = metrics::score_episode(trace.final_answer, q.gold,
                                        trace.verdict);
  return trace;
}

BatchResult run_batch(std::span<const QuestionInstance> questions,
                      gateway::ModelGateway& gw,
                      const gateway::BackendSpec& decomposer,
                      const gateway::BackendSpec& reader,
                      const retrieval::CorpusIndex& corpus,
                      const EnvConfig& cfg, int concurrency,
                      const prompts::PromptBundle& bundle) {
  BatchResult result;
  result.traces.resize(questions.size());
  std::atomic<size_t> next{0};
  std::atomic<size_t> failures{0};

  auto worker = [&] {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= questions.size()) return;
      const QuestionInstance& q = questions[i];
      EpisodeTrace trace;
      try {
        std::string prompt =
            prompts::render_decompose_prompt(bundle, q.question);
        gateway::DecodingParams greedy{0.0, cfg.max_tokens, 1};
        std::string raw = gw.complete(decomposer, prompt, greedy).front().text;
        trace = run_episode(q, raw, gw, reader, corpus, cfg, bundle);
      } catch (const std::exception& e) {
        trace = EpisodeTrace{};
        trace.question_id = q.id;
        trace.question = q.question;
        trace.dataset = q.dataset;
        trace.gold_aliases = q.gold.aliases;
        trace.verdict.valid = false;
        trace.provenance.decomposer_id = cfg.decomposer_id;
        trace.provenance.reader_id = reader.id();
        trace.provenance.config_digest = cfg.config_digest;
        trace.error = e.what();
        failures.fetch_add(1);
      }
      result.traces[i] = std::move(trace);
    }
  };

  int threads = std::max(1, std::min<int>(concurrency,
                                          static_cast<int>(questions.size())));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(threads));
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  result.failures = failures.load();
  return result;
}

namespace {

struct Accumulator {
  size_t n = 0;
  double em = 0.0, acc = 0.0, f1 = 0.0, u = 0.0;

  DatasetMetrics finish() const {
    DatasetMetrics m;
    m.questions = n;
    if (n > 0) {
      m.em = em / static_cast<double>(n);
      m.acc = acc / static_cast<double>(n);
      m.f1 = f1 / static_cast<double>(n);
      m.mean_u = u / static_cast<double>(n);
    }
    return m;
  }
};

json dataset_metrics_json(const DatasetMetrics& m) {
  return json{{"questions", m.questions},
              {"em", m.em},
              {"acc", m.acc},
              {"f1", m.f1},
              {"mean_u", m.mean_u}};
}

}  // namespace

json MetricReport::to_json() const {
  json per_ds = json::object();
  for (const auto& [tag, m] : per_dataset) {
    per_ds[tag] = dataset_metrics_json(m);
  }
  json j{{"questions", questions},
         {"scored", scored},
         {"errors", errors},
         {"format_invalid", format_invalid},
         {"per_dataset", per_ds}};
  if (overall) {
    j["em"] = overall->em;
    j["acc"] = overall->acc;
    j["f1"] = overall->f1;
    j["mean_u"] = overall->mean_u;
  } else {
    j["em"] = nullptr;
    j["acc"] = nullptr;
    j["f1"] = nullptr;
    j["mean_u"] = nullptr;
  }
  return j;
}

MetricReport evaluate(
    std::span<const EpisodeTrace> traces,
    const std::map<std::string, metrics::GoldAnswerSet>& golds) {
  MetricReport report;
  report.questions = traces.size();
  Accumulator overall;
  std::map<std::string, Accumulator> per_dataset;

  for (const EpisodeTrace& trace : traces) {
    auto it = golds.find(trace.question_id);
    if (it == golds.end()) {
      raise(ErrorCode::missing_gold,
            "no gold answer for question id \"" + trace.question_id + "\"");
    }
    if (!trace.ok()) {
      ++report.errors;
      continue;
    }
    ++report.scored;
    if (!trace.verdict.valid) ++report.format_invalid;
    const metrics::GoldAnswerSet& gold = it->second;
    double em = metrics::exact_match(trace.final_answer, gold);
    double acc = metrics::accuracy(trace.final_answer, gold);
    double f1 = metrics::f1_score(trace.final_answer, gold);
    metrics::RewardBreakdown reward =
        metrics::score_episode(trace.final_answer, gold, trace.verdict);

    for (Accumulator* acc_ptr : {&overall, &per_dataset[trace.dataset]}) {
      acc_ptr->n += 1;
      acc_ptr->em += em;
      acc_ptr->acc += acc;
      acc_ptr->f1 += f1;
      acc_ptr->u += reward.u;
    }
  }

  if (overall.n > 0) report.overall = overall.finish();
  for (const auto& [tag, acc] : per_dataset) {
    report.per_dataset[tag] = acc.finish();
  }
  return report;
}

}  // namespace collabrag::env
