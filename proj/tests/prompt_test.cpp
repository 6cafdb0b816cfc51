#include "icalign/prompt.hpp"

#include <random>

#include "doctest.h"
#include "icalign/error.hpp"
#include "icalign/generation.hpp"
#include "icalign/rng.hpp"
#include "testutil.hpp"

using icalign::BudgetConfig;
using icalign::DemoPair;
using icalign::PackedContext;
using icalign::PromptString;
using icalign::WhitespaceCounter;

namespace {

PackedContext packed_with(std::vector<DemoPair> demos) {
  PackedContext packed;
  packed.selected = std::move(demos);
  return packed;
}

std::size_t count_occurrences(const std::string& haystack,
                              const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t pos = haystack.find(needle); pos != std::string::npos;
       pos = haystack.find(needle, pos + 1)) {
    ++n;
  }
  return n;
}

// Test-only parser: recovers (demo prompt, demo response) pairs and the
// test prompt from a rendered string, assuming no text contains the
// delimiters.
struct ParsedPrompt {
  std::vector<std::pair<std::string, std::string>> demos;
  std::string test_prompt;
};

ParsedPrompt parse_rendered(const std::string& text) {
  const std::string q = "Question: ";
  const std::string a = "\n\nHere\xE2\x80\x99s an example answer:";
  ParsedPrompt out;
  std::size_t pos = 0;
  for (;;) {
    REQUIRE(text.compare(pos, q.size(), q) == 0);
    pos += q.size();
    const std::size_t answer_at = text.find(a, pos);
    REQUIRE(answer_at != std::string::npos);
    const std::string prompt = text.substr(pos, answer_at - pos);
    pos = answer_at + a.size();
    if (pos == text.size()) {
      out.test_prompt = prompt;
      return out;
    }
    REQUIRE(text[pos] == ' ');
    ++pos;
    const std::size_t next_q = text.find("\n\n" + q, pos);
    REQUIRE(next_q != std::string::npos);
    out.demos.emplace_back(prompt, text.substr(pos, next_q - pos));
    pos = next_q + 2;
  }
}

std::string random_word_text(std::mt19937_64& rng, std::size_t max_words) {
  static const std::vector<std::string> pool{
      "alpha", "beta", "gamma;", "delta,", "epsilon", "zeta.", "eta?",
      "theta!", "iota's", "kappa-case"};
  const std::size_t n = 1 + icalign::bounded_rand(rng, max_words);
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0) s += ' ';
    s += pool[icalign::bounded_rand(rng, pool.size())];
  }
  return s;
}

}  // namespace

TEST_CASE("zero-demo render is exactly the final block") {
  WhitespaceCounter counter;
  const PromptString prompt =
      icalign::render(packed_with({}), "Hi", counter, BudgetConfig{});
  CHECK(prompt.text == "Question: Hi\n\nHere\xE2\x80\x99s an example answer:");
  CHECK(prompt.token_count == counter.count(prompt.text));
}

TEST_CASE("two-demo render puts the less relevant demo first") {
  WhitespaceCounter counter;
  // packed order is final prompt order: least relevant (P2) first
  const PackedContext packed = packed_with(
      {{"demo2", "P2", "R2"}, {"demo1", "P1", "R1"}});
  const PromptString prompt =
      icalign::render(packed, "T", counter, BudgetConfig{});
  CHECK(prompt.text ==
        "Question: P2\n\nHere\xE2\x80\x99s an example answer: R2\n\n"
        "Question: P1\n\nHere\xE2\x80\x99s an example answer: R1\n\n"
        "Question: T\n\nHere\xE2\x80\x99s an example answer:");
}

TEST_CASE("golden renders are byte-identical") {
  WhitespaceCounter counter;

  SUBCASE("0 demos") {
    const auto golden =
        testutil::read_file(testutil::fixture_path("golden/prompt_0demo.txt"));
    CHECK(icalign::render(packed_with({}), "Hi", counter, BudgetConfig{})
              .text == golden);
  }

  SUBCASE("1 demo") {
    const auto golden =
        testutil::read_file(testutil::fixture_path("golden/prompt_1demo.txt"));
    const PackedContext packed = packed_with(
        {{"d1", "What is a haiku?",
          "A three-line poem with a 5-7-5 syllable pattern."}});
    CHECK(icalign::render(packed, "Write a haiku about rain.", counter,
                          BudgetConfig{})
              .text == golden);
  }

  SUBCASE("2 demos, listing order") {
    const auto golden =
        testutil::read_file(testutil::fixture_path("golden/prompt_2demo.txt"));
    const PackedContext packed = packed_with(
        {{"d2", "Name three primary colors.", "Red, yellow, and blue."},
         {"d1", "What rhymes with cat?",
          "Hat, bat, and mat all rhyme with cat."}});
    const std::string got =
        icalign::render(packed, "Write a short poem about a cat.", counter,
                        BudgetConfig{})
            .text;
    CHECK(got == golden);
    // the more relevant demo's block is the last one before the test prompt
    CHECK(got.find("What rhymes with cat?") >
          got.find("Name three primary colors."));
  }
}

TEST_CASE("the apostrophe is U+2019, never ASCII") {
  const auto& tmpl = icalign::default_template();
  CHECK(tmpl.answer_prefix.find("\xE2\x80\x99") != std::string::npos);
  CHECK(tmpl.answer_prefix.find('\'') == std::string::npos);
  WhitespaceCounter counter;
  const auto prompt =
      icalign::render(packed_with({}), "x", counter, BudgetConfig{});
  CHECK(prompt.text.find("\xE2\x80\x99") != std::string::npos);
}

TEST_CASE("prompt string invariants hold for every selected count") {
  WhitespaceCounter counter;
  const std::string answer_prefix = "Here\xE2\x80\x99s an example answer:";
  for (std::size_t n_demos = 0; n_demos <= 5; ++n_demos) {
    std::vector<DemoPair> demos;
    for (std::size_t i = 0; i < n_demos; ++i) {
      demos.push_back({"d" + std::to_string(i), "prompt " + std::to_string(i),
                       "response " + std::to_string(i)});
    }
    const auto prompt = icalign::render(packed_with(std::move(demos)),
                                        "the test prompt", counter,
                                        BudgetConfig{});
    const std::string suffix =
        "Question: the test prompt\n\n" + answer_prefix;
    REQUIRE(prompt.text.size() >= suffix.size());
    CHECK(prompt.text.substr(prompt.text.size() - suffix.size()) == suffix);
    CHECK(count_occurrences(prompt.text, answer_prefix) == n_demos + 1);
  }
}

TEST_CASE("render rejects prompts that cannot fit the context") {
  WhitespaceCounter counter;
  BudgetConfig budget;
  budget.model_context_tokens = 1010;
  budget.reserved_generation_tokens = 1000;
  // the rendered zero-demo prompt has 5 template tokens + test tokens, so a
  // 6-word test prompt (11 tokens) overflows 1010 - 1000 = 10
  const std::string long_prompt = "one two three four five six";
  try {
    icalign::render(packed_with({}), long_prompt, counter, budget);
    FAIL("expected ContextOverflowError");
  } catch (const icalign::ContextOverflowError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("11") != std::string::npos);    // prompt tokens
    CHECK(msg.find("1000") != std::string::npos);  // reservation
    CHECK(msg.find("1010") != std::string::npos);  // context
  }

  CHECK_THROWS_AS(
      icalign::render(packed_with({}), "", counter, BudgetConfig{}),
      icalign::InputError);
}

TEST_CASE("stop sequence is the newline-prefixed question marker") {
  const std::string stop = icalign::stop_sequence();
  CHECK(stop == "\nQuestion:");
  CHECK(stop.size() == 10);
  CHECK(stop[0] == '\n');
  CHECK(icalign::stop_sequence() == stop);  // constant across calls
  // matches the generation default so client-side cutting uses one source
  CHECK(icalign::GenerationConfig{}.stop_sequences ==
        std::vector<std::string>{stop});
}

TEST_CASE("prompts may contain the stop sequence verbatim") {
  WhitespaceCounter counter;
  const PackedContext packed = packed_with(
      {{"d", "line one\nQuestion: embedded", "resp\nQuestion: also"}});
  const auto prompt =
      icalign::render(packed, "test", counter, BudgetConfig{});
  // rendering never escapes or strips; the stop rule applies to generated
  // text only
  CHECK(prompt.text.find("line one\nQuestion: embedded") !=
        std::string::npos);
  CHECK(count_occurrences(prompt.text, "\nQuestion:") >= 2);
}

TEST_CASE("parse round-trip recovers demos and test prompt") {
  WhitespaceCounter counter;
  std::mt19937_64 rng(5150);
  for (int iteration = 0; iteration < 200; ++iteration) {
    const std::size_t n_demos = icalign::bounded_rand(rng, 6);
    std::vector<DemoPair> demos;
    for (std::size_t i = 0; i < n_demos; ++i) {
      demos.push_back({"d" + std::to_string(i), random_word_text(rng, 8),
                       random_word_text(rng, 15)});
    }
    const std::string test_prompt = random_word_text(rng, 10);
    const std::vector<DemoPair> demos_copy = demos;
    const auto prompt = icalign::render(packed_with(std::move(demos)),
                                        test_prompt, counter, BudgetConfig{});
    const ParsedPrompt parsed = parse_rendered(prompt.text);
    CHECK(parsed.test_prompt == test_prompt);
    REQUIRE(parsed.demos.size() == demos_copy.size());
    for (std::size_t i = 0; i < demos_copy.size(); ++i) {
      CHECK(parsed.demos[i].first == demos_copy[i].prompt);
      CHECK(parsed.demos[i].second == demos_copy[i].response);
    }
  }
}

TEST_CASE("known ambiguity: delimiter-bearing texts confuse any splitter") {
  // Documented limitation, not a rendering bug: texts are rendered
  // verbatim, so a response containing the block delimiter reads exactly
  // like a block boundary and a splitter cannot tell them apart.
  WhitespaceCounter counter;
  const std::string tricky =
      "fake\n\nQuestion: injected\n\nHere\xE2\x80\x99s an example answer: x";
  const PackedContext packed = packed_with({{"d", "real prompt", tricky}});
  const auto prompt =
      icalign::render(packed, "test", counter, BudgetConfig{});
  CHECK(prompt.text.find(tricky) != std::string::npos);
  CHECK(count_occurrences(prompt.text,
                          "Here\xE2\x80\x99s an example answer:") == 3);
}
