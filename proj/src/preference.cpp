#include "preference.hpp"

#include <cstdio>

#include "digest.hpp"
#include "error.hpp"

namespace collabrag::prefs {

namespace {

using nlohmann::json;

std::string reward_bucket(double u) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%g", u);
  return buf;
}

// Canonical serialization when the candidate parses; the raw sampled text
// otherwise (an unparseable rejected side is still a legitimate negative).
std::string serialized_text(const Candidate& c) {
  decomp::ParseResult parsed = decomp::parse_decomposition(c.raw_text);
  if (decomp::parse_ok(parsed)) {
    return decomp::serialize_decomposition(
        std::get<decomp::Decomposition>(parsed));
  }
  return c.raw_text;
}

}  // namespace

json CandidateSet::to_json(const std::string& config_digest) const {
  json cands = json::array();
  for (const Candidate& c : candidates) {
    cands.push_back(json{{"raw", c.raw_text}, {"trace", c.trace.to_json()}});
  }
  return json{
      {"schema_version", 1},
      {"config_digest", config_digest},
      {"question",
       {{"id", question.id},
        {"question", question.question},
        {"dataset", question.dataset},
        {"gold", question.gold.aliases}}},
      {"prompt", prompt},
      {"candidates", cands},
  };
}

CandidateSet CandidateSet::from_json(const json& j) {
  if (!j.is_object() || j.value("schema_version", 0) != 1) {
    raise(ErrorCode::parse, "unsupported candidate-set schema");
  }
  CandidateSet set;
  const json& q = j.at("question");
  set.question.id = q.value("id", std::string{});
  set.question.question = q.value("question", std::string{});
  set.question.dataset = q.value("dataset", std::string{});
  set.question.gold = metrics::GoldAnswerSet::from(
      q.value("gold", std::vector<std::string>{}));
  set.prompt = j.value("prompt", std::string{});
  for (const auto& c : j.value("candidates", json::array())) {
    set.candidates.push_back(Candidate{
        c.value("raw", std::string{}),
        env::EpisodeTrace::from_json(c.at("trace"))});
  }
  return set;
}

std::pair<std::vector<SFTExample>, SftStats> build_sft(
    std::span<const CandidateSet> sets, const SftOptions& options) {
  std::vector<SFTExample> examples;
  SftStats stats;
  for (const CandidateSet& set : sets) {
    if (set.candidates.empty()) {
      ++stats.dropped;
      continue;
    }
    for (const Candidate& c : set.candidates) {
      ++stats.reward_histogram[reward_bucket(c.reward())];
    }
    auto emit = [&](const Candidate& c) {
      decomp::ParseResult parsed = decomp::parse_decomposition(c.raw_text);
      if (!decomp::parse_ok(parsed) ||
          !decomp::check_format(parsed, options.t_max).valid) {
        // u >= 0.5 implies a valid format; reaching here means the stored
        // reward disagrees with the candidate text.
        raise(ErrorCode::internal,
              "candidate with reward >= threshold fails the format check "
              "(question \"" + set.question.id + "\")");
      }
      examples.push_back(SFTExample{
          set.prompt,
          decomp::serialize_decomposition(
              std::get<decomp::Decomposition>(parsed)),
          c.reward(), set.question.id});
    };

    if (options.include_all) {
      bool any = false;
      for (const Candidate& c : set.candidates) {
        if (c.reward() >= options.min_reward) {
          emit(c);
          any = true;
        }
      }
      any ? ++stats.kept : ++stats.dropped;
      continue;
    }

    const Candidate* best = &set.candidates.front();
    for (const Candidate& c : set.candidates) {
      if (c.reward() > best->reward()) best = &c;
    }
    if (best->reward() >= options.min_reward) {
      emit(*best);
      ++stats.kept;
    } else {
      ++stats.dropped;
    }
  }
  return {std::move(examples), stats};
}

std::pair<std::vector<PreferencePair>, PrefStats> build_preferences(
    std::span<const CandidateSet> sets, int round) {
  std::vector<PreferencePair> pairs;
  PrefStats stats;
  for (const CandidateSet& set : sets) {
    if (set.candidates.size() < 2) {
      raise(ErrorCode::invalid_argument,
            "preference building needs N >= 2 candidates (question \"" +
                set.question.id + "\" has " +
                std::to_string(set.candidates.size()) + ")");
    }
    const Candidate* best = &set.candidates.front();
    const Candidate* worst = &set.candidates.front();
    for (const Candidate& c : set.candidates) {
      if (c.reward() > best->reward()) best = &c;
      if (c.reward() < worst->reward()) worst = &c;
    }
    if (best->reward() == worst->reward()) {
      ++stats.discards;
      continue;
    }
    pairs.push_back(PreferencePair{
        set.prompt, serialized_text(*best), serialized_text(*worst),
        best->reward() - worst->reward(), round, set.question.id});
    ++stats.pairs;
  }
  return {std::move(pairs), stats};
}

json RoundManifest::to_json() const {
  return json{
      {"schema_version", 1},
      {"round", round},
      {"n_samples", n_samples},
      {"temperature", temperature},
      {"beta", beta},
      {"k", k},
      {"dataset_digest", dataset_digest},
      {"config_digest", config_digest},
      {"decomposer", decomposer_id},
      {"policy_id", policy_id},
      {"reference_id", reference_id},
  };
}

RoundManifest RoundManifest::from_json(const json& j) {
  if (!j.is_object() || j.value("schema_version", 0) != 1) {
    raise(ErrorCode::parse, "unsupported round manifest schema");
  }
  RoundManifest m;
  m.round = j.value("round", 0);
  m.n_samples = j.value("n_samples", 0);
  m.temperature = j.value("temperature", 0.0);
  m.beta = j.value("beta", 0.0);
  m.k = j.value("k", 0);
  m.dataset_digest = j.value("dataset_digest", std::string{});
  m.config_digest = j.value("config_digest", std::string{});
  m.decomposer_id = j.value("decomposer", std::string{});
  m.policy_id = j.value("policy_id", std::string{});
  m.reference_id = j.value("reference_id", std::string{});
  return m;
}

std::string RoundManifest::digest() const { return sha256_hex(to_json().dump()); }

RoundManifest plan_round(int round, const RoundInputs& inputs,
                         const std::optional<RoundManifest>& predecessor) {
  if (round < 0) {
    raise(ErrorCode::invalid_argument, "round must be >= 0");
  }
  if (round > 0) {
    if (!predecessor) {
      raise(ErrorCode::missing_predecessor,
            "round " + std::to_string(round) + " needs the round " +
                std::to_string(round - 1) + " manifest");
    }
    if (predecessor->round != round - 1) {
      raise(ErrorCode::missing_predecessor,
            "predecessor manifest is for round " +
                std::to_string(predecessor->round) + ", expected " +
                std::to_string(round - 1));
    }
  }
  RoundManifest m;
  m.round = round;
  m.n_samples = inputs.n_samples;
  m.temperature = inputs.temperature;
  m.beta = inputs.beta;
  m.k = inputs.k;
  m.dataset_digest = inputs.dataset_digest;
  m.config_digest = inputs.config_digest;
  m.decomposer_id = inputs.decomposer_id;
  m.policy_id = "round-" + std::to_string(round) + "/policy";
  m.reference_id = round == 0 ? inputs.sft_checkpoint_id
                              : predecessor->policy_id;
  return m;
}

}  // namespace collabrag::prefs
