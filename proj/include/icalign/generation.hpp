#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "icalign/prompt.hpp"
#include "icalign/token_counter.hpp"

namespace icalign {

struct GenerationConfig {
  double temperature = 0.7;
  std::size_t max_new_tokens = 1000;
  // Backend end-of-sequence always terminates as well; these are matched on
  // decoded text, never on token ids.
  std::vector<std::string> stop_sequences = {"\nQuestion:"};
  std::size_t samples_per_prompt = 5;
  std::optional<std::uint64_t> seed;

  // Off by default: plain temperature sampling. Backends that support them
  // may honor these when set.
  double top_p = 1.0;
  std::size_t top_k = 0;

  int max_retries = 2;             // extra attempts on retryable failures
  std::size_t max_in_flight = 1;   // concurrent backend calls in a batch
  double min_request_interval_s = 0.0;  // per-backend rate limit; 0 = off
};

// Throws InputError when a field violates its contract.
void validate(const GenerationConfig& config);

enum class FinishReason { kStopSequence, kEndOfSequence, kLength };

const char* to_string(FinishReason reason);
FinishReason finish_reason_from_string(std::string_view name);

struct GenerationResult {
  std::string prompt_id;
  std::size_t sample_index = 0;  // 0-based
  std::string text;              // stop sequence already removed
  FinishReason finish_reason = FinishReason::kEndOfSequence;
  std::size_t new_token_count = 0;
};

struct CompletionRequest {
  std::string prompt;
  double temperature = 0.7;
  std::size_t max_new_tokens = 1000;
  std::vector<std::string> stop;  // advisory; the client enforces its own
  std::uint64_t seed = 0;
  double top_p = 1.0;
  std::size_t top_k = 0;
};

enum class BackendFinish { kEndOfSequence, kLength, kCancelled };

// Minimal completion interface: prompt plus sampling params in, streamed
// text chunks out. Implementations must be safe for concurrent complete()
// calls.
class GenerationBackend {
 public:
  virtual ~GenerationBackend() = default;

  virtual std::string name() const = 0;

  // Streams chunks to on_chunk until the completion ends or on_chunk
  // returns false. Throws BackendError on failure.
  virtual BackendFinish complete(
      const CompletionRequest& request,
      const std::function<bool(std::string_view)>& on_chunk) = 0;
};

// Incremental scanner for the earliest occurrence of any stop sequence in
// a chunked stream. Holds back up to max(stop length) - 1 bytes so a stop
// split across chunk boundaries is still caught.
class StopScanner {
 public:
  explicit StopScanner(std::vector<std::string> stops);

  // Returns true once a stop has been found; further chunks are ignored.
  bool feed(std::string_view chunk);
  // Flush the held-back tail when the stream ends without a stop.
  void finish();

  bool stop_found() const { return found_; }
  // Committed text: everything before the stop once found, otherwise all
  // text that can no longer be part of one.
  const std::string& text() const { return text_; }

 private:
  std::vector<std::string> stops_;
  std::size_t tail_keep_ = 0;
  std::string text_;
  std::string tail_;
  bool found_ = false;
};

// Runs one completion and applies the client-side stop contract:
//   1. cut at the first stop sequence occurrence in generated text,
//   2. truncate to max_new_tokens under `counter` (even if the backend
//      over-produced), reporting kLength when this shortens the text,
//   3. strip at most one leading space (the template ends at a colon).
// Equivalent to concatenating the whole stream and truncating after the
// fact; streaming changes nothing but memory and latency.
// Retryable backend failures are retried up to config.max_retries; the
// final error carries the attempt count and prompt token accounting.
GenerationResult generate(GenerationBackend& backend,
                          const PromptString& prompt,
                          const GenerationConfig& config,
                          const TokenCounter& counter,
                          std::string prompt_id = {},
                          std::size_t sample_index = 0);

struct GenerationFailure {
  std::string prompt_id;
  std::size_t sample_index = 0;
  std::string error;
};

struct BatchResult {
  // Ordered by (input prompt position, sample_index) regardless of
  // completion order; failed items are absent here and listed below.
  std::vector<GenerationResult> results;
  std::vector<GenerationFailure> failures;
};

// samples_per_prompt completions per prompt, up to max_in_flight at a
// time. Per-item failures are recorded, never abort the batch. Sampling is
// seeded per (prompt text, sample index), so output is independent of
// scheduling for deterministic backends.
BatchResult generate_batch(
    GenerationBackend& backend,
    const std::vector<std::pair<std::string, PromptString>>& prompts,
    const GenerationConfig& config, const TokenCounter& counter);

// Line-delimited persistence:
// {"prompt_id", "sample_index", "text", "finish_reason", "new_token_count"}
void save_results(const std::vector<GenerationResult>& results,
                  const std::string& path);
std::vector<GenerationResult> load_results(const std::string& path);

// Deterministic seeded stub: a word-bigram chain over a small bundled text,
// emitted in ragged byte chunks so chunk-boundary handling gets exercised.
// About half of all completions (seed-dependent) end by wandering into a
// "\nQuestion:" continuation instead of a clean stop.
class StubBackend final : public GenerationBackend {
 public:
  struct Options {
    std::size_t min_words = 30;
    std::size_t max_words = 180;
    double stop_emit_prob = 0.5;
    std::size_t max_chunk_bytes = 24;
  };

  StubBackend();
  explicit StubBackend(Options options);

  std::string name() const override { return "stub"; }
  BackendFinish complete(
      const CompletionRequest& request,
      const std::function<bool(std::string_view)>& on_chunk) override;

 private:
  Options options_;
  std::vector<std::string> words_;
  std::vector<std::vector<std::size_t>> next_;  // bigram successors
};

struct HttpGenerationOptions {
  std::string endpoint;  // http://host:port
  std::string path = "/v1/completions";
  std::string model;
  std::string auth_env;
  bool stream = true;
  int timeout_s = 300;
};

// Client for any completion-style HTTP API. Non-streaming mode expects a
// JSON body with "text" (or OpenAI-style "choices[0].text") plus an
// optional "finish_reason"; streaming mode consumes the raw chunked body as
// text and reports end-of-sequence at stream end. Connection errors, 429
// and 5xx are retryable; other statuses are hard failures.
class HttpGenerationBackend final : public GenerationBackend {
 public:
  explicit HttpGenerationBackend(HttpGenerationOptions options);

  std::string name() const override;
  BackendFinish complete(
      const CompletionRequest& request,
      const std::function<bool(std::string_view)>& on_chunk) override;

 private:
  HttpGenerationOptions options_;
};

// Serializes calls so consecutive acquisitions sit at least the configured
// interval apart. Shared by every worker driving one backend.
class RateLimiter {
 public:
  explicit RateLimiter(double min_interval_s);
  void acquire();

 private:
  std::mutex mu_;
  std::chrono::steady_clock::time_point next_;
  std::chrono::nanoseconds interval_;
};

}  // namespace icalign
