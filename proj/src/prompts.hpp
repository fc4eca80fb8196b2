#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "retrieval.hpp"

namespace collabrag::prompts {

struct QaPair {
  std::string question;
  std::string answer;
};

// The three prompt templates. Slots are {question}, {context},
// {subquestion}, {qa_block}; the decompose template carries its two fixed
// worked demonstrations so every caller (and every baseline) sees the same
// few-shot context.
struct PromptBundle {
  std::string decompose_template;
  std::string subanswer_template;
  std::string final_template;

  static const PromptBundle& defaults();
  void validate() const;
};

// "Q<t>: ...\nA<t>: ..." lines in step order.
std::string format_qa_block(std::span<const QaPair> pairs);

std::string render_decompose_prompt(const PromptBundle& bundle,
                                    std::string_view question);

// Passages are concatenated title-then-body in rank order, separated by
// blank lines; zero passages leaves the context block empty (the reader is
// told to fall back to its own knowledge).
std::string render_subanswer_prompt(
    const PromptBundle& bundle, std::string_view subquestion,
    const std::vector<const retrieval::Passage*>& passages);

std::string render_final_prompt(const PromptBundle& bundle,
                                std::string_view question,
                                std::span<const QaPair> qa_pairs);

}  // namespace collabrag::prompts
