#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include "icalign/corpus.hpp"
#include "icalign/packer.hpp"

namespace icalign {

// The demonstration wrapper. answer_prefix carries a U+2019 right single
// quotation mark; renders are byte-exact and nothing here is ever
// normalized. Alternative wrappers can be configured, but the defaults are
// the product.
struct PromptTemplate {
  std::string question_prefix = "Question: ";
  std::string answer_prefix = "Here\xE2\x80\x99s an example answer:";
  std::string separator = "\n\n";
};

const PromptTemplate& default_template();

// "Question: {prompt}\n\nHere's an example answer: {response}"
std::string render_demo_block(const DemoPair& demo,
                              const PromptTemplate& tmpl = default_template());

// Block plus trailing separator: exactly the bytes one selected demo
// contributes to the assembled prompt. Budget accounting measures this.
std::string rendered_demo_unit(const DemoPair& demo,
                               const PromptTemplate& tmpl = default_template());

struct PromptString {
  std::string text;
  std::size_t token_count = 0;  // under the run's TokenCounter
};

// Assemble the final prompt: demo blocks in packed order (least relevant
// first), then the test prompt block left open after the answer prefix.
// With zero demos the output is exactly
// "Question: {test prompt}\n\nHere's an example answer:".
// Throws ContextOverflowError, naming the sizes, when token_count plus the
// generation reservation exceeds the model context.
PromptString render(const PackedContext& packed, std::string_view test_prompt,
                    const TokenCounter& counter, const BudgetConfig& budget,
                    const PromptTemplate& tmpl = default_template());

// "\nQuestion:" for the default template: a newline plus the question
// prefix without its trailing space. Generated text is cut at its first
// occurrence; the prompt itself is never touched, however many times the
// sequence appears inside it.
std::string stop_sequence(const PromptTemplate& tmpl = default_template());

}  // namespace icalign
