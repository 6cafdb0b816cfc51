#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "icalign/token_counter.hpp"

namespace icalign {

// One alignment example: a prompt paired with a demonstration response.
struct DemoPair {
  std::string id;
  std::string prompt;
  std::string response;
};

// Alignment dataset. Iteration order is load order; ids are unique.
// Immutable after construction, safe for concurrent readers.
class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<DemoPair> demos, std::string source_path = {});

  const std::vector<DemoPair>& demos() const { return demos_; }
  std::size_t size() const { return demos_.size(); }
  bool empty() const { return demos_.empty(); }
  const std::string& source_path() const { return source_path_; }

  const DemoPair& at(std::size_t i) const { return demos_[i]; }
  const DemoPair* find(std::string_view id) const;
  // Like find() but throws InputError when the id is unknown.
  const DemoPair& require(std::string_view id) const;

 private:
  std::vector<DemoPair> demos_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::string source_path_;
};

struct TestPrompt {
  std::string id;
  std::string text;
};

struct TestPromptSet {
  std::vector<TestPrompt> prompts;
  std::string source_path;
};

struct LoadOptions {
  // Strict by default: any bad record fails the load. When set, record
  // errors are downgraded to warnings and the record is dropped.
  bool skip_bad_records = false;
};

// Corpus file: UTF-8 JSONL, one object per line with string fields
// "id", "prompt", "response" (see schema/corpus.schema.json). Blank lines
// are ignored. Errors name the offending line.
Corpus load_corpus(const std::string& path, const LoadOptions& opts = {},
                   std::vector<std::string>* warnings = nullptr);

// Test prompt file: same shape minus "response".
TestPromptSet load_test_prompts(const std::string& path,
                                const LoadOptions& opts = {},
                                std::vector<std::string>* warnings = nullptr);

// Canonical one-line serialization of a record; load-then-save round-trips
// canonical files byte-identically.
std::string demo_record_line(const DemoPair& demo);
void save_corpus(const Corpus& corpus, const std::string& path);

// Content hash over the canonical serialization of every record, in order.
// Independent of the bytes the corpus was originally loaded from.
std::uint64_t corpus_hash(const Corpus& corpus);

// Token length of the demo's rendered block -- the bytes this demo would
// occupy in an assembled prompt, connective template text included. All
// cap and budget decisions measure this, not the raw texts.
std::size_t demo_token_length(const TokenCounter& counter,
                              const DemoPair& demo);

}  // namespace icalign
