#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "config.hpp"
#include "environment.hpp"

namespace collabrag::datasets {

// Supported input shapes. hotpotqa/2wikimqa: JSON array of
// {_id, question, answer}; musique: JSONL {id, question, answer,
// answer_aliases}; strategyqa: JSON array of {qid, question, answer: bool};
// bamboogle: CSV with Question,Answer columns; custom: JSONL
// {id, question, answers[, dataset]}.
bool known_format(std::string_view format);

struct LoadResult {
  std::vector<env::QuestionInstance> questions;
  std::vector<std::string> dropped;  // itemized "line N: reason"
  std::string file_digest;
  size_t records_seen = 0;
};

// Counts are preserved exactly: records_seen == questions + dropped, before
// the slice/quota caps are applied.
LoadResult load(const std::filesystem::path& path, std::string_view format,
                const config::DatasetOptions& options, int limit_override = -1);

}  // namespace collabrag::datasets
