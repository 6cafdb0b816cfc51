#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nlohmann/json_fwd.hpp"

#include "icalign/corpus.hpp"
#include "icalign/evaluation.hpp"
#include "icalign/generation.hpp"
#include "icalign/packer.hpp"
#include "icalign/retrieval.hpp"

namespace icalign {

struct EmbedderSpec {
  std::string type = "hash";  // "hash" | "http"
  std::size_t dim = 64;
  std::uint64_t seed = 0;
  std::string endpoint;
  std::string auth_env;
  std::size_t batch_size = 64;
  std::size_t max_in_flight = 1;
};

struct GeneratorSpec {
  std::string type = "stub";  // "stub" | "http"
  std::string endpoint;
  std::string model;
  std::string auth_env;
  bool stream = true;
  StubBackend::Options stub;
};

struct JudgeSpec {
  std::string type = "length";  // "length" | "lex" | "scripted" | "http"
  std::string endpoint;
  std::string model;
  std::string auth_env;
  std::string script_path;
  std::size_t max_in_flight = 1;
  double min_request_interval_s = 0.0;
};

enum class RetrievalStrategy { kRelevance, kRandom, kNone };

const char* to_string(RetrievalStrategy strategy);
RetrievalStrategy strategy_from_string(std::string_view name);

// Everything a run needs. Defaults reproduce the reference configuration:
// 3K-token demo budget, 500-token per-demo cap, 1K generation reserve in a
// 4,096-token context, temperature 0.7, 5 samples per prompt.
struct RunConfig {
  std::string corpus_path;
  std::string test_prompts_path;
  std::string output_dir = "out";
  std::string index_path;  // default: <output_dir>/index.bin
  std::string counter = "whitespace";  // "whitespace" | "bpe:<merges.json>"

  RetrievalStrategy strategy = RetrievalStrategy::kRelevance;
  std::uint64_t strategy_seed = 0;  // random strategy only

  EmbedderSpec embedder;
  GeneratorSpec generator;
  JudgeSpec judge;
  BudgetConfig budget;
  GenerationConfig generation;

  OrderPolicy order_policy = OrderPolicy::kCandidateFirst;
  // One reference response per prompt reused across candidate sets unless
  // set, in which case reference sample_index must match the set index.
  bool reference_per_set = false;

  bool skip_bad_records = false;
  // Pins manifest timestamps to the epoch so reruns with deterministic
  // backends are byte-identical end to end.
  bool deterministic = false;

  std::string resolved_index_path() const;
};

RunConfig load_run_config(const std::string& path);
void to_json(nlohmann::json& j, const RunConfig& config);
void from_json(const nlohmann::json& j, RunConfig& config);

std::unique_ptr<TokenCounter> make_counter(const RunConfig& config);
std::unique_ptr<Embedder> make_embedder(const EmbedderSpec& spec);
std::unique_ptr<GenerationBackend> make_generator(const GeneratorSpec& spec);
std::unique_ptr<JudgeBackend> make_judge(const JudgeSpec& spec);

// ---- Commands --------------------------------------------------------------
// Thin orchestration over the modules above; the CLI maps their exceptions
// to exit codes (0 ok, 2 input error, 3 safety refusal, 4 backend failure).

// Builds the vector index and writes the cache. Refuses to overwrite an
// existing cache unless `force`. Returns the cache path.
std::string cmd_index(const RunConfig& config, bool force);

// Rank + pack one query and print a human-readable listing of selected
// demos with scores and token lengths, skipped over-length demos, and the
// stop reason.
void cmd_retrieve(const RunConfig& config, const std::string& query_text,
                  std::ostream& out);

struct AssembleStats {
  std::size_t rendered = 0;
  std::size_t overflowed = 0;
};

// Render the full prompt for every test prompt. dry_run prints prompts to
// `out`; otherwise they are written to <output_dir>/prompts.jsonl.
// Context overflows are reported and skipped, never fatal.
AssembleStats cmd_assemble(const RunConfig& config, bool dry_run,
                           std::ostream& out);

struct GenerateOutputs {
  std::string responses_path;
  std::string contexts_path;
  std::string manifest_path;
  std::size_t n_results = 0;
  std::size_t n_failures = 0;
  MeanStd effective_data_size;
};

// Full assemble-and-generate pass over the test set: retrieval per
// strategy, packing, rendering, sampling. Per-prompt overflows and backend
// failures are recorded in the manifest; the run continues.
GenerateOutputs cmd_generate(const RunConfig& config);

struct EvaluateOutputs {
  std::string report_json_path;
  std::string report_text_path;
  std::string transcripts_path;
  std::string manifest_path;
  EvalReport report;
};

// Pairwise judging of a candidate responses file against a reference
// responses file. Candidate sample_index selects the response set; the
// prompt_id sets of both files must coincide. `contexts_path` (optional,
// may be empty) attaches effective-data-size statistics from a
// contexts.jsonl written by cmd_generate.
EvaluateOutputs cmd_evaluate(const RunConfig& config,
                             const std::string& candidate_path,
                             const std::string& reference_path,
                             const std::string& contexts_path = {});

// Re-render a saved report as the human-readable table.
void cmd_report(const std::string& report_json_path, std::ostream& out);

// Exact-text overlap between corpus prompts and test prompts; prints any
// hits and returns their count. Inspection only, nothing is filtered.
std::size_t cmd_check_overlap(const RunConfig& config, std::ostream& out);

}  // namespace icalign
