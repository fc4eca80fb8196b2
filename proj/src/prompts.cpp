#include "prompts.hpp"

#include <cctype>

#include "error.hpp"

namespace collabrag::prompts {

namespace {

// Trailing spaces below are deliberate: the templates reproduce the exact
// prompt bytes, including line-end spaces.
const std::string kDecomposeTemplate =
    "Please break down the given question into multiple specific "
    "sub-questions that address individual components of the original "
    "question.\n"
    "Please generate the decomposed sub-questions for the below question. "
    "The sub-question should be labeled with a reference to previous answers "
    "(e.g., #1) when needed. For example, #1 means the answer for decomposed "
    "question 1. \n"
    "\n"
    "Here are two examples:\n"
    "[[Begin of the Example 1]]\n"
    "## Question: \n"
    "What is the average winter daytime temperature in the region containing "
    "Richmond, in the state where WXBX is located?\n"
    "\n"
    "## Decomposed Question:\n"
    "### Q1: Which state is WXBX located?\n"
    "### Q2: In which of #1 's regions is Richmond?\n"
    "### Q3: What is the average winter daytime temperature in #2?\n"
    "[[End of the Example 1]]\n"
    "\n"
    "[[Begin of the Example 2]]\n"
    "## Question: \n"
    "How long was the place where the Yongle Emperor greeted the person to "
    "whom the edict was addressed the capitol of the area where Guangling "
    "District was located?\n"
    "\n"
    "## Decomposed Question:\n"
    "### Q1: Who was the edict addressed to?\n"
    "### Q2: Where did the Yongle Emperor greet #1 ?  \n"
    "### Q3: Where does Guangling District locate?\n"
    "### Q4: How long had #2 been the capital city of #3 ?\n"
    "[[End of the Example 2]]\n"
    "Now, decompose the following question:\n"
    "## Question: \n"
    "{question}\n"
    "\n"
    "## Decomposed Question:";

const std::string kSubanswerTemplate =
    "You have the following context passages:\n"
    "{context}\n"
    "\n"
    "Please answer the question '{subquestion}' with a short span using the "
    "context as reference. \n"
    "If no answer is found in the context, use your own knowledge.\n"
    "Do not give any explanation. Your answer needs to be as short as "
    "possible.";

const std::string kFinalTemplate =
    "For the question: {question}\n"
    "\n"
    "We have the following decomposed sub-questions and sub-answers:\n"
    "{qa_block}\n"
    "\n"
    "Based on these, provide the final concise answer to the original "
    "question. Do not give an explanation.";

std::string replace_slot(std::string text, std::string_view slot,
                         std::string_view value) {
  size_t pos = text.find(slot);
  if (pos == std::string::npos) {
    raise(ErrorCode::internal,
          "prompt template is missing slot " + std::string(slot));
  }
  text.replace(pos, slot.size(), value);
  return text;
}

bool is_blank(std::string_view s) {
  for (char c : s) {
    if (!std::isspace(static_cast<unsigned char>(c))) return false;
  }
  return true;
}

void require_slot(const std::string& tmpl, std::string_view slot,
                  const char* which) {
  if (tmpl.find(slot) == std::string::npos) {
    raise(ErrorCode::invalid_argument,
          std::string(which) + " template is missing slot " +
              std::string(slot));
  }
}

}  // namespace

const PromptBundle& PromptBundle::defaults() {
  static const PromptBundle bundle{kDecomposeTemplate, kSubanswerTemplate,
                                   kFinalTemplate};
  return bundle;
}

void PromptBundle::validate() const {
  require_slot(decompose_template, "{question}", "decompose");
  require_slot(subanswer_template, "{context}", "subanswer");
  require_slot(subanswer_template, "{subquestion}", "subanswer");
  require_slot(final_template, "{question}", "final");
  require_slot(final_template, "{qa_block}", "final");
}

std::string format_qa_block(std::span<const QaPair> pairs) {
  std::string block;
  for (size_t i = 0; i < pairs.size(); ++i) {
    if (i > 0) block.push_back('\n');
    const std::string label = std::to_string(i + 1);
    block += "Q" + label + ": " + pairs[i].question + "\n";
    block += "A" + label + ": " + pairs[i].answer;
  }
  return block;
}

std::string render_decompose_prompt(const PromptBundle& bundle,
                                    std::string_view question) {
  if (is_blank(question)) {
    raise(ErrorCode::invalid_argument, "question must be non-empty");
  }
  return replace_slot(bundle.decompose_template, "{question}", question);
}

std::string render_subanswer_prompt(
    const PromptBundle& bundle, std::string_view subquestion,
    const std::vector<const retrieval::Passage*>& passages) {
  std::string context;
  for (size_t i = 0; i < passages.size(); ++i) {
    if (i > 0) context += "\n\n";
    context += passages[i]->title;
    context.push_back('\n');
    context += passages[i]->body;
  }
  std::string text =
      replace_slot(bundle.subanswer_template, "{context}", context);
  return replace_slot(std::move(text), "{subquestion}", subquestion);
}

std::string render_final_prompt(const PromptBundle& bundle,
                                std::string_view question,
                                std::span<const QaPair> qa_pairs) {
  if (qa_pairs.empty()) {
    raise(ErrorCode::invalid_argument,
          "final-answer prompt needs at least one sub-question/answer pair");
  }
  std::string text = replace_slot(bundle.final_template, "{question}", question);
  return replace_slot(std::move(text), "{qa_block}", format_qa_block(qa_pairs));
}

}  // namespace collabrag::prompts
