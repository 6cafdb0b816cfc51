#include "icalign/run.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "nlohmann/json.hpp"

#include "icalign/error.hpp"
#include "icalign/hash.hpp"
#include "icalign/prompt.hpp"
#include "icalign/version.hpp"

namespace icalign {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(RetrievalStrategy strategy) {
  switch (strategy) {
    case RetrievalStrategy::kRelevance:
      return "relevance";
    case RetrievalStrategy::kRandom:
      return "random";
    case RetrievalStrategy::kNone:
      return "none";
  }
  return "unknown";
}

RetrievalStrategy strategy_from_string(std::string_view name) {
  if (name == "relevance") return RetrievalStrategy::kRelevance;
  if (name == "random") return RetrievalStrategy::kRandom;
  if (name == "none") return RetrievalStrategy::kNone;
  throw InputError("unknown retrieval strategy \"" + std::string(name) +
                   "\" (expected relevance, random, or none)");
}

namespace {

const char* to_string(OrderPolicy policy) {
  return policy == OrderPolicy::kSwapAndAverage ? "swap_and_average"
                                                : "candidate_first";
}

OrderPolicy order_policy_from_string(std::string_view name) {
  if (name == "candidate_first") return OrderPolicy::kCandidateFirst;
  if (name == "swap_and_average") return OrderPolicy::kSwapAndAverage;
  throw InputError("unknown order policy \"" + std::string(name) +
                   "\" (expected candidate_first or swap_and_average)");
}

std::string rfc3339_now(bool deterministic) {
  if (deterministic) return "1970-01-01T00:00:00Z";
  const std::time_t t =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write file: " + path);
  out << text;
  if (!out) throw InputError("failed writing file: " + path);
}

void write_json_file(const std::string& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace

std::string RunConfig::resolved_index_path() const {
  if (!index_path.empty()) return index_path;
  return (fs::path(output_dir) / "index.bin").string();
}

void to_json(json& j, const RunConfig& c) {
  j = json{
      {"corpus", c.corpus_path},
      {"test_prompts", c.test_prompts_path},
      {"output_dir", c.output_dir},
      {"index", c.index_path},
      {"counter", c.counter},
      {"strategy", to_string(c.strategy)},
      {"strategy_seed", c.strategy_seed},
      {"embedder",
       {{"type", c.embedder.type},
        {"dim", c.embedder.dim},
        {"seed", c.embedder.seed},
        {"endpoint", c.embedder.endpoint},
        {"auth_env", c.embedder.auth_env},
        {"batch_size", c.embedder.batch_size},
        {"max_in_flight", c.embedder.max_in_flight}}},
      {"generator",
       {{"type", c.generator.type},
        {"endpoint", c.generator.endpoint},
        {"model", c.generator.model},
        {"auth_env", c.generator.auth_env},
        {"stream", c.generator.stream},
        {"stub",
         {{"min_words", c.generator.stub.min_words},
          {"max_words", c.generator.stub.max_words},
          {"stop_emit_prob", c.generator.stub.stop_emit_prob},
          {"max_chunk_bytes", c.generator.stub.max_chunk_bytes}}}}},
      {"judge",
       {{"type", c.judge.type},
        {"endpoint", c.judge.endpoint},
        {"model", c.judge.model},
        {"auth_env", c.judge.auth_env},
        {"script_path", c.judge.script_path},
        {"max_in_flight", c.judge.max_in_flight},
        {"min_request_interval_s", c.judge.min_request_interval_s}}},
      {"budget",
       {{"demo_budget_tokens", c.budget.demo_budget_tokens},
        {"per_demo_cap_tokens", c.budget.per_demo_cap_tokens},
        {"reserved_generation_tokens", c.budget.reserved_generation_tokens},
        {"model_context_tokens", c.budget.model_context_tokens}}},
      {"generation",
       {{"temperature", c.generation.temperature},
        {"max_new_tokens", c.generation.max_new_tokens},
        {"stop_sequences", c.generation.stop_sequences},
        {"samples_per_prompt", c.generation.samples_per_prompt},
        {"seed", c.generation.seed.has_value() ? json(*c.generation.seed)
                                               : json(nullptr)},
        {"top_p", c.generation.top_p},
        {"top_k", c.generation.top_k},
        {"max_retries", c.generation.max_retries},
        {"max_in_flight", c.generation.max_in_flight},
        {"min_request_interval_s", c.generation.min_request_interval_s}}},
      {"order_policy", to_string(c.order_policy)},
      {"reference_per_set", c.reference_per_set},
      {"skip_bad_records", c.skip_bad_records},
      {"deterministic", c.deterministic}};
}

void from_json(const json& j, RunConfig& c) {
  c.corpus_path = j.value("corpus", c.corpus_path);
  c.test_prompts_path = j.value("test_prompts", c.test_prompts_path);
  c.output_dir = j.value("output_dir", c.output_dir);
  c.index_path = j.value("index", c.index_path);
  c.counter = j.value("counter", c.counter);
  if (j.contains("strategy")) {
    c.strategy = strategy_from_string(j["strategy"].get<std::string>());
  }
  c.strategy_seed = j.value("strategy_seed", c.strategy_seed);
  if (j.contains("embedder")) {
    const auto& e = j["embedder"];
    c.embedder.type = e.value("type", c.embedder.type);
    c.embedder.dim = e.value("dim", c.embedder.dim);
    c.embedder.seed = e.value("seed", c.embedder.seed);
    c.embedder.endpoint = e.value("endpoint", c.embedder.endpoint);
    c.embedder.auth_env = e.value("auth_env", c.embedder.auth_env);
    c.embedder.batch_size = e.value("batch_size", c.embedder.batch_size);
    c.embedder.max_in_flight =
        e.value("max_in_flight", c.embedder.max_in_flight);
  }
  if (j.contains("generator")) {
    const auto& g = j["generator"];
    c.generator.type = g.value("type", c.generator.type);
    c.generator.endpoint = g.value("endpoint", c.generator.endpoint);
    c.generator.model = g.value("model", c.generator.model);
    c.generator.auth_env = g.value("auth_env", c.generator.auth_env);
    c.generator.stream = g.value("stream", c.generator.stream);
    if (g.contains("stub")) {
      const auto& s = g["stub"];
      c.generator.stub.min_words =
          s.value("min_words", c.generator.stub.min_words);
      c.generator.stub.max_words =
          s.value("max_words", c.generator.stub.max_words);
      c.generator.stub.stop_emit_prob =
          s.value("stop_emit_prob", c.generator.stub.stop_emit_prob);
      c.generator.stub.max_chunk_bytes =
          s.value("max_chunk_bytes", c.generator.stub.max_chunk_bytes);
    }
  }
  if (j.contains("judge")) {
    const auto& jd = j["judge"];
    c.judge.type = jd.value("type", c.judge.type);
    c.judge.endpoint = jd.value("endpoint", c.judge.endpoint);
    c.judge.model = jd.value("model", c.judge.model);
    c.judge.auth_env = jd.value("auth_env", c.judge.auth_env);
    c.judge.script_path = jd.value("script_path", c.judge.script_path);
    c.judge.max_in_flight = jd.value("max_in_flight", c.judge.max_in_flight);
    c.judge.min_request_interval_s =
        jd.value("min_request_interval_s", c.judge.min_request_interval_s);
  }
  if (j.contains("budget")) {
    const auto& b = j["budget"];
    c.budget.demo_budget_tokens =
        b.value("demo_budget_tokens", c.budget.demo_budget_tokens);
    c.budget.per_demo_cap_tokens =
        b.value("per_demo_cap_tokens", c.budget.per_demo_cap_tokens);
    c.budget.reserved_generation_tokens = b.value(
        "reserved_generation_tokens", c.budget.reserved_generation_tokens);
    c.budget.model_context_tokens =
        b.value("model_context_tokens", c.budget.model_context_tokens);
  }
  if (j.contains("generation")) {
    const auto& g = j["generation"];
    c.generation.temperature = g.value("temperature", c.generation.temperature);
    c.generation.max_new_tokens =
        g.value("max_new_tokens", c.generation.max_new_tokens);
    c.generation.stop_sequences =
        g.value("stop_sequences", c.generation.stop_sequences);
    c.generation.samples_per_prompt =
        g.value("samples_per_prompt", c.generation.samples_per_prompt);
    if (g.contains("seed") && !g["seed"].is_null()) {
      c.generation.seed = g["seed"].get<std::uint64_t>();
    }
    c.generation.top_p = g.value("top_p", c.generation.top_p);
    c.generation.top_k = g.value("top_k", c.generation.top_k);
    c.generation.max_retries = g.value("max_retries", c.generation.max_retries);
    c.generation.max_in_flight =
        g.value("max_in_flight", c.generation.max_in_flight);
    c.generation.min_request_interval_s = g.value(
        "min_request_interval_s", c.generation.min_request_interval_s);
  }
  if (j.contains("order_policy")) {
    c.order_policy =
        order_policy_from_string(j["order_policy"].get<std::string>());
  }
  c.reference_per_set = j.value("reference_per_set", c.reference_per_set);
  c.skip_bad_records = j.value("skip_bad_records", c.skip_bad_records);
  c.deterministic = j.value("deterministic", c.deterministic);
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InputError("bad config " + path + ": " + e.what());
  }
  RunConfig config;
  try {
    from_json(j, config);
  } catch (const json::exception& e) {
    throw InputError("bad config " + path + ": " + e.what());
  }
  return config;
}

std::unique_ptr<TokenCounter> make_counter(const RunConfig& config) {
  if (config.counter == "whitespace") {
    return std::make_unique<WhitespaceCounter>();
  }
  if (config.counter.rfind("bpe:", 0) == 0) {
    return std::make_unique<BpeCounter>(
        BpeCounter::load(config.counter.substr(4)));
  }
  throw InputError("unknown token counter \"" + config.counter +
                   "\" (expected \"whitespace\" or \"bpe:<merges.json>\")");
}

std::unique_ptr<Embedder> make_embedder(const EmbedderSpec& spec) {
  if (spec.type == "hash") {
    return std::make_unique<HashingEmbedder>(spec.dim, spec.seed);
  }
  if (spec.type == "http") {
    HttpEmbedderOptions options;
    options.endpoint = spec.endpoint;
    options.auth_env = spec.auth_env;
    options.dim = spec.dim;
    return std::make_unique<HttpEmbedder>(std::move(options));
  }
  throw InputError("unknown embedder type \"" + spec.type + "\"");
}

std::unique_ptr<GenerationBackend> make_generator(const GeneratorSpec& spec) {
  if (spec.type == "stub") {
    return std::make_unique<StubBackend>(spec.stub);
  }
  if (spec.type == "http") {
    HttpGenerationOptions options;
    options.endpoint = spec.endpoint;
    options.model = spec.model;
    options.auth_env = spec.auth_env;
    options.stream = spec.stream;
    return std::make_unique<HttpGenerationBackend>(std::move(options));
  }
  throw InputError("unknown generator type \"" + spec.type + "\"");
}

std::unique_ptr<JudgeBackend> make_judge(const JudgeSpec& spec) {
  if (spec.type == "length") return std::make_unique<LengthJudge>();
  if (spec.type == "lex") return std::make_unique<LexicographicJudge>();
  if (spec.type == "scripted") {
    if (spec.script_path.empty()) {
      throw InputError("scripted judge needs judge.script_path");
    }
    return std::make_unique<ScriptedJudge>(ScriptedJudge::load(spec.script_path));
  }
  if (spec.type == "http") {
    HttpJudgeOptions options;
    options.endpoint = spec.endpoint;
    options.model = spec.model;
    options.auth_env = spec.auth_env;
    return std::make_unique<HttpJudge>(std::move(options));
  }
  throw InputError("unknown judge type \"" + spec.type + "\"");
}

namespace {

Corpus load_corpus_checked(const RunConfig& config) {
  if (config.corpus_path.empty()) throw InputError("no corpus path configured");
  std::vector<std::string> warnings;
  LoadOptions opts;
  opts.skip_bad_records = config.skip_bad_records;
  Corpus corpus = load_corpus(config.corpus_path, opts, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  return corpus;
}

TestPromptSet load_prompts_checked(const RunConfig& config) {
  if (config.test_prompts_path.empty()) {
    throw InputError("no test prompt path configured");
  }
  std::vector<std::string> warnings;
  LoadOptions opts;
  opts.skip_bad_records = config.skip_bad_records;
  TestPromptSet set = load_test_prompts(config.test_prompts_path, opts,
                                        &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  return set;
}

// Embed many texts under the spec's batch/in-flight settings, preserving
// input order.
std::vector<EmbeddingVector> embed_batched(Embedder& embedder,
                                           const std::vector<std::string>& texts,
                                           const EmbedderSpec& spec) {
  const std::size_t batch = std::max<std::size_t>(1, spec.batch_size);
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (std::size_t begin = 0; begin < texts.size(); begin += batch) {
    const std::size_t end = std::min(texts.size(), begin + batch);
    auto vecs = embedder.embed(
        std::vector<std::string>(texts.begin() + begin, texts.begin() + end));
    for (auto& v : vecs) out.push_back(std::move(v));
  }
  return out;
}

VectorIndex load_or_build_index(const RunConfig& config, const Corpus& corpus,
                                Embedder& embedder) {
  const std::string path = config.resolved_index_path();
  if (fs::exists(path)) return VectorIndex::load_for_corpus(path, corpus);
  std::cerr << "note: no index cache at " << path
            << "; building in memory (run `index` to persist one)\n";
  IndexBuildOptions options;
  options.batch_size = config.embedder.batch_size;
  options.max_in_flight = config.embedder.max_in_flight;
  return VectorIndex::build(corpus, embedder, options);
}

RetrievalRanking ranking_for_prompt(const RunConfig& config,
                                    const Corpus& corpus,
                                    const VectorIndex* index,
                                    const EmbeddingVector* query,
                                    const TestPrompt& prompt) {
  switch (config.strategy) {
    case RetrievalStrategy::kRelevance:
      return rank_by_relevance(*index, *query, prompt.id);
    case RetrievalStrategy::kRandom:
      // Seed mixed per prompt id: deterministic, but a different permutation
      // for every prompt.
      return rank_randomly(corpus, fnv1a64(prompt.id, config.strategy_seed),
                           prompt.id);
    case RetrievalStrategy::kNone:
      return RetrievalRanking{prompt.id, {}};
  }
  throw Error("unreachable strategy");
}

json context_record(const std::string& prompt_id, const PackedContext& packed) {
  json selected = json::array();
  for (const auto& demo : packed.selected) selected.push_back(demo.id);
  return json{{"prompt_id", prompt_id},
              {"selected_ids", selected},
              {"selected_count", packed.selected_count()},
              {"total_demo_tokens", packed.total_demo_tokens},
              {"skipped_overlength_ids", packed.skipped_overlength_ids},
              {"stop_reason", to_string(packed.stop_reason)}};
}

struct ManifestWriter {
  std::string path;
  json doc;

  ManifestWriter(const RunConfig& config, const std::string& command,
                 const std::string& out_path)
      : path(out_path) {
    doc["tool"] = "icalign";
    doc["tool_version"] = kVersion;
    doc["command"] = command;
    doc["status"] = "running";
    doc["created_at"] = rfc3339_now(config.deterministic);
    doc["finalized_at"] = "";
    json snapshot;
    to_json(snapshot, config);
    doc["config"] = snapshot;
    write_json_file(path, doc);
  }

  void finalize(const RunConfig& config) {
    doc["status"] = "complete";
    doc["finalized_at"] = rfc3339_now(config.deterministic);
    write_json_file(path, doc);
  }
};

}  // namespace

std::string cmd_index(const RunConfig& config, bool force) {
  const Corpus corpus = load_corpus_checked(config);
  const std::string path = config.resolved_index_path();
  if (fs::exists(path) && !force) {
    throw SafetyRefusal("index cache " + path +
                        " already exists; pass --force to overwrite");
  }
  auto embedder = make_embedder(config.embedder);
  IndexBuildOptions options;
  options.batch_size = config.embedder.batch_size;
  options.max_in_flight = config.embedder.max_in_flight;
  const VectorIndex index = VectorIndex::build(corpus, *embedder, options);
  if (!index.zero_vector_ids().empty()) {
    std::cerr << "warning: " << index.zero_vector_ids().size()
              << " demo prompt(s) embedded to the zero vector and will rank "
                 "last; first: "
              << index.zero_vector_ids().front() << '\n';
  }
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  index.save(path);
  return path;
}

void cmd_retrieve(const RunConfig& config, const std::string& query_text,
                  std::ostream& out) {
  if (query_text.empty()) throw InputError("retrieve: empty query text");
  const Corpus corpus = load_corpus_checked(config);
  const auto counter = make_counter(config);

  RetrievalRanking ranking;
  switch (config.strategy) {
    case RetrievalStrategy::kRelevance: {
      auto embedder = make_embedder(config.embedder);
      const VectorIndex index = load_or_build_index(config, corpus, *embedder);
      const auto query = embedder->embed({query_text}).front();
      ranking = rank_by_relevance(index, query, "query");
      break;
    }
    case RetrievalStrategy::kRandom:
      ranking = rank_randomly(corpus, config.strategy_seed, "query");
      break;
    case RetrievalStrategy::kNone:
      ranking = RetrievalRanking{"query", {}};
      break;
  }

  const PackedContext packed = pack(ranking, corpus, *counter, config.budget);

  std::unordered_map<std::string, double> score_by_id;
  for (const auto& entry : ranking.ranked) score_by_id[entry.id] = entry.score;

  out << "query: " << query_text << '\n';
  out << "strategy: " << to_string(config.strategy) << '\n';
  out << "corpus: " << config.corpus_path << " (" << corpus.size()
      << " demos)\n";
  out << "selected " << packed.selected_count() << " demo(s), "
      << packed.total_demo_tokens << " / " << config.budget.demo_budget_tokens
      << " demo tokens, stop reason: " << to_string(packed.stop_reason)
      << '\n';
  out << "final prompt order (most relevant last):\n";
  char line[160];
  for (std::size_t i = 0; i < packed.selected.size(); ++i) {
    const auto& demo = packed.selected[i];
    std::snprintf(line, sizeof(line), "  %2zu. id=%s  score=%.6f  tokens=%zu",
                  i + 1, demo.id.c_str(), score_by_id[demo.id],
                  demo_token_length(*counter, demo));
    out << line << '\n';
  }
  if (!packed.skipped_overlength_ids.empty()) {
    out << "skipped (rendered length > " << config.budget.per_demo_cap_tokens
        << " tokens):\n";
    for (const auto& id : packed.skipped_overlength_ids) {
      out << "  " << id << " (" << demo_token_length(*counter, corpus.require(id))
          << " tokens)\n";
    }
  }
}

AssembleStats cmd_assemble(const RunConfig& config, bool dry_run,
                           std::ostream& out) {
  const Corpus corpus = load_corpus_checked(config);
  const TestPromptSet prompts = load_prompts_checked(config);
  const auto counter = make_counter(config);

  std::unique_ptr<Embedder> embedder;
  std::optional<VectorIndex> index;
  std::vector<EmbeddingVector> queries;
  if (config.strategy == RetrievalStrategy::kRelevance) {
    embedder = make_embedder(config.embedder);
    index = load_or_build_index(config, corpus, *embedder);
    std::vector<std::string> texts;
    texts.reserve(prompts.prompts.size());
    for (const auto& p : prompts.prompts) texts.push_back(p.text);
    queries = embed_batched(*embedder, texts, config.embedder);
  }

  std::optional<std::ofstream> file;
  std::string out_path;
  if (!dry_run) {
    fs::create_directories(config.output_dir);
    out_path = (fs::path(config.output_dir) / "prompts.jsonl").string();
    file.emplace(out_path, std::ios::binary | std::ios::trunc);
    if (!*file) throw InputError("cannot write prompts file: " + out_path);
  }

  AssembleStats stats;
  for (std::size_t i = 0; i < prompts.prompts.size(); ++i) {
    const auto& prompt = prompts.prompts[i];
    const RetrievalRanking ranking = ranking_for_prompt(
        config, corpus, index ? &*index : nullptr,
        queries.empty() ? nullptr : &queries[i], prompt);
    const PackedContext packed = pack(ranking, corpus, *counter, config.budget);
    try {
      const PromptString rendered =
          render(packed, prompt.text, *counter, config.budget);
      ++stats.rendered;
      if (dry_run) {
        out << "--- prompt " << prompt.id << " (" << rendered.token_count
            << " tokens, " << packed.selected_count() << " demos) ---\n"
            << rendered.text << '\n';
      } else {
        const json record{{"id", prompt.id},
                          {"text", rendered.text},
                          {"token_count", rendered.token_count},
                          {"selected_count", packed.selected_count()}};
        *file << record.dump() << '\n';
      }
    } catch (const ContextOverflowError& e) {
      ++stats.overflowed;
      std::cerr << "warning: prompt " << prompt.id << ": " << e.what() << '\n';
    }
  }
  if (file && !*file) throw InputError("failed writing prompts file: " + out_path);
  return stats;
}

GenerateOutputs cmd_generate(const RunConfig& config) {
  validate(config.generation);
  const Corpus corpus = load_corpus_checked(config);
  const TestPromptSet prompts = load_prompts_checked(config);
  const auto counter = make_counter(config);

  fs::create_directories(config.output_dir);
  GenerateOutputs outputs;
  outputs.responses_path =
      (fs::path(config.output_dir) / "responses.jsonl").string();
  outputs.contexts_path =
      (fs::path(config.output_dir) / "contexts.jsonl").string();
  outputs.manifest_path =
      (fs::path(config.output_dir) / "manifest.json").string();

  ManifestWriter manifest(config, "generate", outputs.manifest_path);
  manifest.doc["corpus_hash"] = to_hex(corpus_hash(corpus));

  std::unique_ptr<Embedder> embedder;
  std::optional<VectorIndex> index;
  std::vector<EmbeddingVector> queries;
  if (config.strategy == RetrievalStrategy::kRelevance) {
    embedder = make_embedder(config.embedder);
    index = load_or_build_index(config, corpus, *embedder);
    if (fs::exists(config.resolved_index_path())) {
      manifest.doc["index_hash"] =
          to_hex(hash_file(config.resolved_index_path()));
    }
    std::vector<std::string> texts;
    texts.reserve(prompts.prompts.size());
    for (const auto& p : prompts.prompts) texts.push_back(p.text);
    queries = embed_batched(*embedder, texts, config.embedder);
  }

  std::vector<PackedContext> contexts;
  contexts.reserve(prompts.prompts.size());
  std::vector<std::pair<std::string, PromptString>> rendered;
  rendered.reserve(prompts.prompts.size());
  std::vector<GenerationFailure> render_failures;

  std::ofstream contexts_file(outputs.contexts_path,
                              std::ios::binary | std::ios::trunc);
  if (!contexts_file) {
    throw InputError("cannot write contexts file: " + outputs.contexts_path);
  }
  for (std::size_t i = 0; i < prompts.prompts.size(); ++i) {
    const auto& prompt = prompts.prompts[i];
    const RetrievalRanking ranking = ranking_for_prompt(
        config, corpus, index ? &*index : nullptr,
        queries.empty() ? nullptr : &queries[i], prompt);
    PackedContext packed = pack(ranking, corpus, *counter, config.budget);
    contexts_file << context_record(prompt.id, packed).dump() << '\n';
    try {
      PromptString p = render(packed, prompt.text, *counter, config.budget);
      rendered.emplace_back(prompt.id, std::move(p));
    } catch (const ContextOverflowError& e) {
      render_failures.push_back(
          {prompt.id, 0, std::string("render: ") + e.what()});
      std::cerr << "warning: prompt " << prompt.id << ": " << e.what() << '\n';
    }
    contexts.push_back(std::move(packed));
  }
  if (!contexts_file) {
    throw InputError("failed writing contexts file: " + outputs.contexts_path);
  }

  auto backend = make_generator(config.generator);
  BatchResult batch =
      generate_batch(*backend, rendered, config.generation, *counter);
  save_results(batch.results, outputs.responses_path);

  outputs.n_results = batch.results.size();
  outputs.n_failures = batch.failures.size() + render_failures.size();
  outputs.effective_data_size =
      contexts.empty() ? MeanStd{} : demo_count_stats(contexts);

  json failures = json::array();
  for (const auto& f : render_failures) {
    failures.push_back({{"prompt_id", f.prompt_id},
                        {"sample_index", f.sample_index},
                        {"error", f.error}});
  }
  for (const auto& f : batch.failures) {
    failures.push_back({{"prompt_id", f.prompt_id},
                        {"sample_index", f.sample_index},
                        {"error", f.error}});
  }
  manifest.doc["failures"] = failures;
  manifest.doc["effective_data_size"] = {
      {"mean", outputs.effective_data_size.mean},
      {"stddev", outputs.effective_data_size.stddev}};
  manifest.doc["stage_records"] = {
      {"corpus", corpus.size()},
      {"test_prompts", prompts.prompts.size()},
      {"contexts", contexts.size()},
      {"prompts_rendered", rendered.size()},
      {"responses", batch.results.size()},
      {"failures", outputs.n_failures}};
  manifest.finalize(config);
  return outputs;
}

namespace {

std::string join_ids(const std::set<std::string>& ids, std::size_t limit) {
  std::string out;
  std::size_t n = 0;
  for (const auto& id : ids) {
    if (n++ == limit) {
      out += ", ...";
      break;
    }
    if (!out.empty()) out += ", ";
    out += id;
  }
  return out;
}

}  // namespace

EvaluateOutputs cmd_evaluate(const RunConfig& config,
                             const std::string& candidate_path,
                             const std::string& reference_path,
                             const std::string& contexts_path) {
  const TestPromptSet prompts = load_prompts_checked(config);
  std::unordered_map<std::string, std::string> prompt_text;
  for (const auto& p : prompts.prompts) prompt_text[p.id] = p.text;

  const auto candidates = load_results(candidate_path);
  const auto references = load_results(reference_path);
  if (candidates.empty()) {
    throw InputError("candidate file has no records: " + candidate_path);
  }
  if (references.empty()) {
    throw InputError("reference file has no records: " + reference_path);
  }

  std::set<std::string> candidate_ids;
  std::set<std::string> reference_ids;
  for (const auto& r : candidates) candidate_ids.insert(r.prompt_id);
  for (const auto& r : references) reference_ids.insert(r.prompt_id);
  if (candidate_ids != reference_ids) {
    std::set<std::string> only_candidate;
    std::set<std::string> only_reference;
    std::set_difference(candidate_ids.begin(), candidate_ids.end(),
                        reference_ids.begin(), reference_ids.end(),
                        std::inserter(only_candidate, only_candidate.end()));
    std::set_difference(reference_ids.begin(), reference_ids.end(),
                        candidate_ids.begin(), candidate_ids.end(),
                        std::inserter(only_reference, only_reference.end()));
    throw InputError(
        "candidate and reference files cover different prompt ids; only in "
        "candidate: {" +
        join_ids(only_candidate, 10) + "}, only in reference: {" +
        join_ids(only_reference, 10) + "}");
  }
  for (const auto& id : candidate_ids) {
    if (prompt_text.find(id) == prompt_text.end()) {
      throw InputError("prompt id \"" + id +
                       "\" from the responses files is not in the test "
                       "prompt set " +
                       config.test_prompts_path);
    }
  }

  // Reference lookup: one response per prompt reused across sets, or a
  // per-set response when reference_per_set is on.
  std::map<std::pair<std::string, std::size_t>, const GenerationResult*>
      reference_by_key;
  std::unordered_map<std::string, const GenerationResult*> reference_first;
  for (const auto& r : references) {
    reference_by_key.emplace(std::make_pair(r.prompt_id, r.sample_index), &r);
    const auto it = reference_first.find(r.prompt_id);
    if (it == reference_first.end() ||
        r.sample_index < it->second->sample_index) {
      reference_first[r.prompt_id] = &r;
    }
  }

  std::set<std::size_t> set_indices;
  for (const auto& r : candidates) set_indices.insert(r.sample_index);

  std::vector<ResponsePair> pairs;
  std::vector<std::size_t> pair_set;  // parallel: which set each pair is in
  pairs.reserve(candidates.size());
  for (const auto& r : candidates) {
    const GenerationResult* ref = nullptr;
    if (config.reference_per_set) {
      const auto it =
          reference_by_key.find(std::make_pair(r.prompt_id, r.sample_index));
      if (it == reference_by_key.end()) {
        throw InputError("reference file has no sample " +
                         std::to_string(r.sample_index) + " for prompt \"" +
                         r.prompt_id + "\" (reference_per_set is on)");
      }
      ref = it->second;
    } else {
      ref = reference_first.at(r.prompt_id);
    }
    ResponsePair pair;
    pair.prompt_id = r.prompt_id;
    pair.prompt_text = prompt_text.at(r.prompt_id);
    pair.candidate_text = r.text;
    pair.reference_text = ref->text;
    pair.set_index = r.sample_index;
    pair_set.push_back(r.sample_index);
    pairs.push_back(std::move(pair));
  }

  auto judge = make_judge(config.judge);
  JudgeRunOptions judge_options;
  judge_options.policy = config.order_policy;
  judge_options.max_in_flight = config.judge.max_in_flight;
  judge_options.min_request_interval_s = config.judge.min_request_interval_s;

  // Pairs with an empty side cannot be judged; record them as judge errors
  // instead of failing the run.
  std::vector<JudgeVerdict> verdicts(pairs.size());
  std::vector<ResponsePair> judgeable;
  std::vector<std::size_t> judgeable_pos;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].candidate_text.empty() || pairs[i].reference_text.empty()) {
      verdicts[i] = JudgeVerdict{Outcome::kJudgeError, "empty response text"};
    } else {
      judgeable.push_back(pairs[i]);
      judgeable_pos.push_back(i);
    }
  }
  const auto judged = judge_all(*judge, judgeable, judge_options);
  for (std::size_t k = 0; k < judged.size(); ++k) {
    verdicts[judgeable_pos[k]] = judged[k];
  }

  std::vector<SetRates> per_set;
  for (const std::size_t s : set_indices) {
    std::vector<JudgeVerdict> set_verdicts;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      if (pair_set[i] == s) set_verdicts.push_back(verdicts[i]);
    }
    per_set.push_back(aggregate_set(set_verdicts, s));
  }

  std::optional<MeanStd> effective;
  if (!contexts_path.empty()) {
    std::ifstream in(contexts_path, std::ios::binary);
    if (!in) throw InputError("cannot read contexts file: " + contexts_path);
    std::vector<double> counts;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        counts.push_back(
            json::parse(line).at("selected_count").get<double>());
      } catch (const json::exception& e) {
        throw InputError("bad contexts file " + contexts_path + ": " +
                         e.what());
      }
    }
    if (counts.empty()) {
      throw InputError("contexts file has no records: " + contexts_path);
    }
    effective = mean_sample_std(counts);
  }

  const EvalReport report = aggregate_runs(per_set, effective);

  fs::create_directories(config.output_dir);
  EvaluateOutputs outputs;
  outputs.report = report;
  outputs.report_json_path =
      (fs::path(config.output_dir) / "report.json").string();
  outputs.report_text_path =
      (fs::path(config.output_dir) / "report.txt").string();
  outputs.transcripts_path =
      (fs::path(config.output_dir) / "transcripts.jsonl").string();
  outputs.manifest_path =
      (fs::path(config.output_dir) / "eval_manifest.json").string();

  ManifestWriter manifest(config, "evaluate", outputs.manifest_path);
  save_report(report, outputs.report_json_path);
  write_text_file(outputs.report_text_path, render_report(report));

  std::ofstream transcripts(outputs.transcripts_path,
                            std::ios::binary | std::ios::trunc);
  if (!transcripts) {
    throw InputError("cannot write transcripts: " + outputs.transcripts_path);
  }
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const json t{{"prompt_id", pairs[i].prompt_id},
                 {"set_index", pairs[i].set_index},
                 {"outcome", to_string(verdicts[i].outcome)},
                 {"raw_judgment", verdicts[i].raw_judgment}};
    transcripts << t.dump() << '\n';
  }
  if (!transcripts) {
    throw InputError("failed writing transcripts: " + outputs.transcripts_path);
  }

  manifest.doc["stage_records"] = {{"candidate_records", candidates.size()},
                                   {"reference_records", references.size()},
                                   {"pairs", pairs.size()},
                                   {"sets", per_set.size()}};
  manifest.finalize(config);
  return outputs;
}

void cmd_report(const std::string& report_json_path, std::ostream& out) {
  out << render_report(load_report(report_json_path));
}

std::size_t cmd_check_overlap(const RunConfig& config, std::ostream& out) {
  const Corpus corpus = load_corpus_checked(config);
  const TestPromptSet prompts = load_prompts_checked(config);

  std::unordered_map<std::string, std::vector<const DemoPair*>> by_text;
  for (const auto& demo : corpus.demos()) {
    by_text[demo.prompt].push_back(&demo);
  }
  std::size_t overlaps = 0;
  for (const auto& p : prompts.prompts) {
    const auto it = by_text.find(p.text);
    if (it == by_text.end()) continue;
    for (const DemoPair* demo : it->second) {
      out << "overlap: demo " << demo->id << " and test prompt " << p.id
          << " share the same text\n";
      ++overlaps;
    }
  }
  out << overlaps << " overlapping instance(s) among " << corpus.size()
      << " demos and " << prompts.prompts.size() << " test prompts\n";
  return overlaps;
}

}  // namespace icalign
