#include "icalign/generation.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "httplib.h"
#include "nlohmann/json.hpp"

#include "icalign/error.hpp"
#include "icalign/hash.hpp"
#include "icalign/rng.hpp"

namespace icalign {

void validate(const GenerationConfig& config) {
  if (config.temperature < 0.0) {
    throw InputError("generation config: temperature must be >= 0");
  }
  if (config.max_new_tokens == 0) {
    throw InputError("generation config: max_new_tokens must be >= 1");
  }
  if (config.samples_per_prompt == 0) {
    throw InputError("generation config: samples_per_prompt must be >= 1");
  }
  for (const auto& stop : config.stop_sequences) {
    if (stop.empty()) {
      throw InputError("generation config: empty stop sequence");
    }
  }
}

const char* to_string(FinishReason reason) {
  switch (reason) {
    case FinishReason::kStopSequence:
      return "stop_sequence";
    case FinishReason::kEndOfSequence:
      return "end_of_sequence";
    case FinishReason::kLength:
      return "length";
  }
  return "unknown";
}

FinishReason finish_reason_from_string(std::string_view name) {
  if (name == "stop_sequence") return FinishReason::kStopSequence;
  if (name == "end_of_sequence") return FinishReason::kEndOfSequence;
  if (name == "length") return FinishReason::kLength;
  throw InputError("unknown finish reason \"" + std::string(name) + "\"");
}

StopScanner::StopScanner(std::vector<std::string> stops)
    : stops_(std::move(stops)) {
  for (const auto& stop : stops_) {
    if (stop.empty()) throw InputError("stop scanner: empty stop sequence");
    tail_keep_ = std::max(tail_keep_, stop.size() - 1);
  }
}

bool StopScanner::feed(std::string_view chunk) {
  if (found_) return true;
  std::string buf = std::move(tail_);
  buf.append(chunk);

  // Earliest occurrence across all stops wins; on a positional tie the text
  // is identical either way.
  std::size_t pos = std::string::npos;
  for (const auto& stop : stops_) {
    const std::size_t p = buf.find(stop);
    if (p != std::string::npos && (pos == std::string::npos || p < pos)) {
      pos = p;
    }
  }
  if (pos != std::string::npos) {
    text_.append(buf, 0, pos);
    tail_.clear();
    found_ = true;
    return true;
  }

  // Everything but the last tail_keep_ bytes can no longer be part of a
  // stop that started in this buffer.
  const std::size_t keep = std::min(tail_keep_, buf.size());
  text_.append(buf, 0, buf.size() - keep);
  tail_ = buf.substr(buf.size() - keep);
  return false;
}

void StopScanner::finish() {
  if (found_) return;
  text_ += tail_;
  tail_.clear();
}

namespace {

std::uint64_t sample_seed(const GenerationConfig& config,
                          std::string_view prompt_text,
                          std::size_t sample_index) {
  const std::uint64_t base = config.seed.value_or(0);
  return fnv1a64(prompt_text,
                 base + 0x9e3779b97f4a7c15ULL * (sample_index + 1));
}

struct StreamOutcome {
  std::string text;
  bool stop_found = false;
  BackendFinish backend_finish = BackendFinish::kEndOfSequence;
};

StreamOutcome run_stream(GenerationBackend& backend,
                         const CompletionRequest& request,
                         const GenerationConfig& config,
                         const TokenCounter& counter) {
  StopScanner scanner(config.stop_sequences);
  bool cap_closed = false;
  const auto on_chunk = [&](std::string_view chunk) -> bool {
    if (scanner.feed(chunk)) return false;
    // Once the max_new_tokens prefix of the committed text is final, the
    // result cannot change; stop pulling from an over-producing backend.
    if (counter.stable_prefix_bytes(scanner.text(), config.max_new_tokens)
            .has_value()) {
      cap_closed = true;
      return false;
    }
    return true;
  };

  StreamOutcome outcome;
  outcome.backend_finish = backend.complete(request, on_chunk);
  scanner.finish();
  outcome.text = scanner.text();
  outcome.stop_found = scanner.stop_found();
  if (cap_closed) outcome.backend_finish = BackendFinish::kLength;
  return outcome;
}

}  // namespace

GenerationResult generate(GenerationBackend& backend,
                          const PromptString& prompt,
                          const GenerationConfig& config,
                          const TokenCounter& counter, std::string prompt_id,
                          std::size_t sample_index) {
  validate(config);

  CompletionRequest request;
  request.prompt = prompt.text;
  request.temperature = config.temperature;
  request.max_new_tokens = config.max_new_tokens;
  request.stop = config.stop_sequences;
  request.seed = sample_seed(config, prompt.text, sample_index);
  request.top_p = config.top_p;
  request.top_k = config.top_k;

  StreamOutcome outcome;
  int attempt = 0;
  for (;;) {
    ++attempt;
    try {
      outcome = run_stream(backend, request, config, counter);
      break;
    } catch (const BackendError& e) {
      if (e.retryable() && attempt <= config.max_retries) continue;
      std::ostringstream msg;
      msg << e.what() << " (prompt \"" << prompt_id << "\", sample "
          << sample_index << ", " << attempt << " attempt"
          << (attempt == 1 ? "" : "s") << "; prompt tokens "
          << prompt.token_count << ", max new tokens "
          << config.max_new_tokens << ")";
      throw BackendError(msg.str(), e.retryable(), attempt);
    }
  }

  GenerationResult result;
  result.prompt_id = std::move(prompt_id);
  result.sample_index = sample_index;

  std::string text = std::move(outcome.text);
  FinishReason reason;
  if (counter.count(text) > config.max_new_tokens) {
    text.resize(counter.prefix_bytes(text, config.max_new_tokens));
    reason = FinishReason::kLength;
  } else if (outcome.stop_found) {
    reason = FinishReason::kStopSequence;
  } else if (outcome.backend_finish == BackendFinish::kEndOfSequence) {
    reason = FinishReason::kEndOfSequence;
  } else {
    reason = FinishReason::kLength;
  }
  // The prompt ends at a colon; backends typically lead with one space.
  if (!text.empty() && text.front() == ' ') text.erase(0, 1);

  result.text = std::move(text);
  result.finish_reason = reason;
  result.new_token_count = counter.count(result.text);
  return result;
}

BatchResult generate_batch(
    GenerationBackend& backend,
    const std::vector<std::pair<std::string, PromptString>>& prompts,
    const GenerationConfig& config, const TokenCounter& counter) {
  validate(config);

  struct Task {
    std::size_t prompt_pos;
    std::size_t sample_index;
  };
  std::vector<Task> tasks;
  tasks.reserve(prompts.size() * config.samples_per_prompt);
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    for (std::size_t s = 0; s < config.samples_per_prompt; ++s) {
      tasks.push_back({p, s});
    }
  }

  std::vector<std::optional<GenerationResult>> slots(tasks.size());
  std::vector<std::optional<GenerationFailure>> failed(tasks.size());
  RateLimiter limiter(config.min_request_interval_s);

  auto run_task = [&](std::size_t t) {
    const auto& [prompt_id, prompt] = prompts[tasks[t].prompt_pos];
    limiter.acquire();
    try {
      slots[t] = generate(backend, prompt, config, counter, prompt_id,
                          tasks[t].sample_index);
    } catch (const std::exception& e) {
      failed[t] = GenerationFailure{prompt_id, tasks[t].sample_index,
                                    e.what()};
    }
  };

  const std::size_t workers =
      std::min(std::max<std::size_t>(1, config.max_in_flight), tasks.size());
  if (workers <= 1) {
    for (std::size_t t = 0; t < tasks.size(); ++t) run_task(t);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          const std::size_t t = next.fetch_add(1);
          if (t >= tasks.size()) return;
          run_task(t);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  BatchResult batch;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    if (slots[t].has_value()) {
      batch.results.push_back(std::move(*slots[t]));
    } else if (failed[t].has_value()) {
      batch.failures.push_back(std::move(*failed[t]));
    }
  }
  return batch;
}

void save_results(const std::vector<GenerationResult>& results,
                  const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write responses file: " + path);
  for (const auto& r : results) {
    const nlohmann::json j{{"prompt_id", r.prompt_id},
                           {"sample_index", r.sample_index},
                           {"text", r.text},
                           {"finish_reason", to_string(r.finish_reason)},
                           {"new_token_count", r.new_token_count}};
    out << j.dump() << '\n';
  }
  if (!out) throw InputError("failed writing responses file: " + path);
}

std::vector<GenerationResult> load_results(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read responses file: " + path);
  std::vector<GenerationResult> results;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path + ":" + std::to_string(line_no) +
                       ": malformed record: " + e.what());
    }
    GenerationResult r;
    try {
      r.prompt_id = j.at("prompt_id").get<std::string>();
      r.sample_index = j.at("sample_index").get<std::size_t>();
      r.text = j.at("text").get<std::string>();
      r.finish_reason =
          finish_reason_from_string(j.at("finish_reason").get<std::string>());
      r.new_token_count = j.at("new_token_count").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path + ":" + std::to_string(line_no) +
                       ": bad record fields: " + e.what());
    }
    results.push_back(std::move(r));
  }
  return results;
}

// ---- StubBackend -----------------------------------------------------------

namespace {

// Original filler prose for the stub's bigram chain; nothing model-like
// about it, it just produces text that varies with the seed.
constexpr std::string_view kStubText =
    "a good answer starts by reading the question twice and deciding what "
    "the asker actually needs before typing anything at all . a short reply "
    "that lands on the point beats a long reply that wanders around it . "
    "when the question is broad sketch the shape of the territory first and "
    "then pick one path through it . when the question is narrow give the "
    "direct result and one line of reasoning so the reader can check it . "
    "examples carry more weight than adjectives so show one small concrete "
    "case whenever the idea allows it . if a request cannot be met say so "
    "plainly and offer the nearest thing that can . numbers should come "
    "with units and claims should come with their limits . end before the "
    "reader gets tired and leave the door open for a follow up question .";

}  // namespace

StubBackend::StubBackend() : StubBackend(Options{}) {}

StubBackend::StubBackend(Options options) : options_(options) {
  if (options_.min_words == 0 || options_.max_words < options_.min_words) {
    throw InputError("stub backend: need 1 <= min_words <= max_words");
  }
  std::unordered_map<std::string, std::size_t> word_pos;
  std::istringstream in{std::string(kStubText)};
  std::string word;
  std::vector<std::size_t> sequence;
  while (in >> word) {
    auto [it, inserted] = word_pos.emplace(word, words_.size());
    if (inserted) words_.push_back(word);
    sequence.push_back(it->second);
  }
  next_.resize(words_.size());
  for (std::size_t i = 0; i + 1 < sequence.size(); ++i) {
    next_[sequence[i]].push_back(sequence[i + 1]);
  }
}

BackendFinish StubBackend::complete(
    const CompletionRequest& request,
    const std::function<bool(std::string_view)>& on_chunk) {
  std::mt19937_64 rng(request.seed);
  const std::size_t n_words =
      options_.min_words +
      bounded_rand(rng, options_.max_words - options_.min_words + 1);

  std::string text = " ";  // completion APIs usually lead with a space
  std::size_t w = bounded_rand(rng, words_.size());
  for (std::size_t i = 0; i < n_words; ++i) {
    if (i > 0) text += ' ';
    text += words_[w];
    const auto& successors = next_[w];
    w = successors.empty()
            ? bounded_rand(rng, words_.size())
            : successors[bounded_rand(rng, successors.size())];
  }
  const bool wanders_on = uniform_real(rng, 0.0, 1.0) < options_.stop_emit_prob;
  if (wanders_on) {
    // Imitate a base model that keeps completing the pattern.
    text += "\nQuestion: ";
    for (std::size_t i = 0; i < 3; ++i) {
      text += words_[bounded_rand(rng, words_.size())];
      text += ' ';
    }
  }

  std::size_t offset = 0;
  while (offset < text.size()) {
    const std::size_t len =
        1 + bounded_rand(rng, std::max<std::size_t>(1, options_.max_chunk_bytes));
    const std::size_t take = std::min(len, text.size() - offset);
    if (!on_chunk(std::string_view(text).substr(offset, take))) {
      return BackendFinish::kCancelled;
    }
    offset += take;
  }
  return BackendFinish::kEndOfSequence;
}

// ---- HttpGenerationBackend -------------------------------------------------

HttpGenerationBackend::HttpGenerationBackend(HttpGenerationOptions options)
    : options_(std::move(options)) {
  if (options_.endpoint.empty()) {
    throw InputError("http generation backend: endpoint required");
  }
}

std::string HttpGenerationBackend::name() const {
  return "http:" + options_.endpoint;
}

BackendFinish HttpGenerationBackend::complete(
    const CompletionRequest& request,
    const std::function<bool(std::string_view)>& on_chunk) {
  httplib::Client client(options_.endpoint);
  client.set_connection_timeout(options_.timeout_s);
  client.set_read_timeout(options_.timeout_s);

  httplib::Headers headers;
  if (!options_.auth_env.empty()) {
    if (const char* token = std::getenv(options_.auth_env.c_str())) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }

  nlohmann::json body{{"prompt", request.prompt},
                      {"temperature", request.temperature},
                      {"max_tokens", request.max_new_tokens},
                      {"stop", request.stop},
                      {"seed", request.seed},
                      {"stream", options_.stream}};
  if (!options_.model.empty()) body["model"] = options_.model;
  if (request.top_p < 1.0) body["top_p"] = request.top_p;
  if (request.top_k > 0) body["top_k"] = request.top_k;

  const auto raise_status = [&](int status, const std::string& response_body) {
    const bool retryable = status == 429 || status >= 500;
    throw BackendError("generation service returned HTTP " +
                           std::to_string(status) + ": " +
                           response_body.substr(0, 200),
                       retryable);
  };

  if (options_.stream) {
    bool cancelled = false;
    httplib::Request req;
    req.method = "POST";
    req.path = options_.path;
    req.headers = headers;
    req.body = body.dump();
    req.set_header("Content-Type", "application/json");
    int status = 0;
    req.response_handler = [&](const httplib::Response& res) {
      status = res.status;
      return true;
    };
    req.content_receiver = [&](const char* data, std::size_t len, std::uint64_t,
                               std::uint64_t) {
      if (status != 200) return true;  // collect nothing; error raised below
      if (!on_chunk(std::string_view(data, len))) {
        cancelled = true;
        return false;
      }
      return true;
    };
    auto res = client.send(req);
    if (cancelled) return BackendFinish::kCancelled;
    if (!res) {
      throw BackendError("generation request to " + options_.endpoint +
                             " failed: " + httplib::to_string(res.error()),
                         /*retryable=*/true);
    }
    if (res->status != 200) raise_status(res->status, res->body);
    // Raw-stream mode carries no finish metadata; the client's own stop and
    // length rules decide the reported reason.
    return BackendFinish::kEndOfSequence;
  }

  auto res = client.Post(options_.path, headers, body.dump(),
                         "application/json");
  if (!res) {
    throw BackendError("generation request to " + options_.endpoint +
                           " failed: " + httplib::to_string(res.error()),
                       /*retryable=*/true);
  }
  if (res->status != 200) raise_status(res->status, res->body);

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("bad generation response: ") + e.what());
  }
  std::string text;
  std::string finish = "end_of_sequence";
  if (j.contains("text")) {
    text = j["text"].get<std::string>();
    finish = j.value("finish_reason", finish);
  } else if (j.contains("choices") && j["choices"].is_array() &&
             !j["choices"].empty()) {
    const auto& choice = j["choices"][0];
    text = choice.value("text", std::string{});
    finish = choice.value("finish_reason", finish);
  } else {
    throw BackendError("generation response carries neither \"text\" nor "
                       "\"choices\"");
  }
  if (!on_chunk(text)) return BackendFinish::kCancelled;
  return finish == "length" ? BackendFinish::kLength
                            : BackendFinish::kEndOfSequence;
}

RateLimiter::RateLimiter(double min_interval_s)
    : next_(std::chrono::steady_clock::now()),
      interval_(std::chrono::nanoseconds(
          static_cast<long long>(min_interval_s * 1e9))) {}

void RateLimiter::acquire() {
  if (interval_.count() <= 0) return;
  std::unique_lock<std::mutex> lock(mu_);
  const auto slot = std::max(next_, std::chrono::steady_clock::now());
  next_ = slot + interval_;
  lock.unlock();
  std::this_thread::sleep_until(slot);
}

}  // namespace icalign
