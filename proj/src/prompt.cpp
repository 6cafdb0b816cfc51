#include "icalign/prompt.hpp"

#include <sstream>

#include "icalign/error.hpp"

namespace icalign {

const PromptTemplate& default_template() {
  static const PromptTemplate tmpl;
  return tmpl;
}

std::string render_demo_block(const DemoPair& demo,
                              const PromptTemplate& tmpl) {
  std::string out;
  out.reserve(tmpl.question_prefix.size() + demo.prompt.size() +
              tmpl.separator.size() + tmpl.answer_prefix.size() +
              demo.response.size() + 1);
  out += tmpl.question_prefix;
  out += demo.prompt;
  out += tmpl.separator;
  out += tmpl.answer_prefix;
  out += ' ';
  out += demo.response;
  return out;
}

std::string rendered_demo_unit(const DemoPair& demo,
                               const PromptTemplate& tmpl) {
  return render_demo_block(demo, tmpl) + tmpl.separator;
}

PromptString render(const PackedContext& packed, std::string_view test_prompt,
                    const TokenCounter& counter, const BudgetConfig& budget,
                    const PromptTemplate& tmpl) {
  if (test_prompt.empty()) throw InputError("render: empty test prompt");

  std::string text;
  for (const auto& demo : packed.selected) {
    text += render_demo_block(demo, tmpl);
    text += tmpl.separator;
  }
  text += tmpl.question_prefix;
  text += test_prompt;
  text += tmpl.separator;
  text += tmpl.answer_prefix;

  PromptString prompt;
  prompt.token_count = counter.count(text);
  prompt.text = std::move(text);

  if (prompt.token_count + budget.reserved_generation_tokens >
      budget.model_context_tokens) {
    std::ostringstream msg;
    msg << "assembled prompt of " << prompt.token_count << " tokens plus "
        << budget.reserved_generation_tokens
        << " reserved for generation exceeds the model context of "
        << budget.model_context_tokens << " tokens";
    throw ContextOverflowError(msg.str());
  }
  return prompt;
}

std::string stop_sequence(const PromptTemplate& tmpl) {
  std::string prefix = tmpl.question_prefix;
  while (!prefix.empty() && (prefix.back() == ' ' || prefix.back() == '\t')) {
    prefix.pop_back();
  }
  return "\n" + prefix;
}

}  // namespace icalign
