#include "icalign/corpus.hpp"

#include <fstream>
#include <unordered_set>
#include <utility>

#include "nlohmann/json.hpp"

#include "icalign/error.hpp"
#include "icalign/hash.hpp"
#include "icalign/prompt.hpp"

namespace icalign {

namespace {

using nlohmann::json;

// Parses one JSONL record; `need_response` distinguishes corpus records
// from test prompts. Throws InputError with the line number on anything
// malformed.
json parse_record(const std::string& line, std::size_t line_no,
                  const std::string& path) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw InputError(path + ":" + std::to_string(line_no) +
                     ": malformed record: " + e.what());
  }
  if (!j.is_object()) {
    throw InputError(path + ":" + std::to_string(line_no) +
                     ": record is not an object");
  }
  return j;
}

std::string require_string_field(const json& j, const char* field,
                                 std::size_t line_no, const std::string& path,
                                 bool allow_empty = false) {
  if (!j.contains(field) || !j[field].is_string()) {
    throw InputError(path + ":" + std::to_string(line_no) +
                     ": missing string field \"" + field + "\"");
  }
  std::string value = j[field].get<std::string>();
  if (!allow_empty && value.empty()) {
    throw InputError(path + ":" + std::to_string(line_no) + ": empty \"" +
                     field + "\"");
  }
  return value;
}

}  // namespace

Corpus::Corpus(std::vector<DemoPair> demos, std::string source_path)
    : demos_(std::move(demos)), source_path_(std::move(source_path)) {
  by_id_.reserve(demos_.size());
  for (std::size_t i = 0; i < demos_.size(); ++i) {
    const auto [_, inserted] = by_id_.emplace(demos_[i].id, i);
    if (!inserted) {
      throw InputError("duplicate demo id \"" + demos_[i].id + "\"");
    }
  }
}

const DemoPair* Corpus::find(std::string_view id) const {
  const auto it = by_id_.find(std::string(id));
  return it == by_id_.end() ? nullptr : &demos_[it->second];
}

const DemoPair& Corpus::require(std::string_view id) const {
  const DemoPair* demo = find(id);
  if (demo == nullptr) {
    throw InputError("demo id \"" + std::string(id) +
                     "\" not found in corpus" +
                     (source_path_.empty() ? "" : " " + source_path_));
  }
  return *demo;
}

Corpus load_corpus(const std::string& path, const LoadOptions& opts,
                   std::vector<std::string>* warnings) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read corpus file: " + path);

  std::vector<DemoPair> demos;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = parse_record(line, line_no, path);
      DemoPair demo;
      demo.id = require_string_field(j, "id", line_no, path);
      demo.prompt = require_string_field(j, "prompt", line_no, path);
      demo.response = require_string_field(j, "response", line_no, path);
      if (!seen.insert(demo.id).second) {
        throw InputError(path + ":" + std::to_string(line_no) +
                         ": duplicate id \"" + demo.id + "\"");
      }
      demos.push_back(std::move(demo));
    } catch (const InputError& e) {
      if (!opts.skip_bad_records) throw;
      if (warnings != nullptr) warnings->emplace_back(e.what());
    }
  }
  return Corpus(std::move(demos), path);
}

TestPromptSet load_test_prompts(const std::string& path,
                                const LoadOptions& opts,
                                std::vector<std::string>* warnings) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read test prompt file: " + path);

  TestPromptSet set;
  set.source_path = path;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = parse_record(line, line_no, path);
      TestPrompt p;
      p.id = require_string_field(j, "id", line_no, path);
      p.text = require_string_field(j, "prompt", line_no, path);
      if (!seen.insert(p.id).second) {
        throw InputError(path + ":" + std::to_string(line_no) +
                         ": duplicate id \"" + p.id + "\"");
      }
      set.prompts.push_back(std::move(p));
    } catch (const InputError& e) {
      if (!opts.skip_bad_records) throw;
      if (warnings != nullptr) warnings->emplace_back(e.what());
    }
  }
  return set;
}

std::string demo_record_line(const DemoPair& demo) {
  const json j{{"id", demo.id}, {"prompt", demo.prompt},
               {"response", demo.response}};
  return j.dump();
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write corpus file: " + path);
  for (const auto& demo : corpus.demos()) {
    out << demo_record_line(demo) << '\n';
  }
  if (!out) throw InputError("failed writing corpus file: " + path);
}

std::uint64_t corpus_hash(const Corpus& corpus) {
  std::uint64_t h = kFnvOffsetBasis;
  for (const auto& demo : corpus.demos()) {
    const std::string line = demo_record_line(demo) + "\n";
    for (unsigned char c : line) {
      h ^= static_cast<std::uint64_t>(c);
      h *= kFnvPrime;
    }
  }
  return h;
}

std::size_t demo_token_length(const TokenCounter& counter,
                              const DemoPair& demo) {
  return counter.count(rendered_demo_unit(demo));
}

}  // namespace icalign
