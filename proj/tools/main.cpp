// Command-line surface for the in-context alignment pipeline:
// index -> retrieve/assemble -> generate -> evaluate -> report.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"

#include "icalign/error.hpp"
#include "icalign/run.hpp"
#include "icalign/version.hpp"

namespace {

// Exit codes: 0 success, 2 input error, 3 safety refusal, 4 backend failure.
constexpr int kOk = 0;
constexpr int kUnexpected = 1;
constexpr int kInputError = 2;
constexpr int kSafetyRefusal = 3;
constexpr int kBackendFailure = 4;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw icalign::InputError("cannot read file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

int main(int argc, char** argv) {
  using namespace icalign;

  CLI::App app{"retrieval-based in-context alignment pipeline"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "JSON config file; flags override");

  // Common overrides. CLI11 only applies these when the flag was passed.
  std::string corpus_path;
  std::string prompts_path;
  std::string output_dir;
  std::string index_path;
  std::string counter;
  std::string strategy;
  std::uint64_t strategy_seed = 0;
  bool strategy_seed_set = false;
  app.add_option("--corpus", corpus_path, "alignment data JSONL");
  app.add_option("--prompts", prompts_path, "test prompt JSONL");
  app.add_option("--out", output_dir, "output directory");
  app.add_option("--index", index_path, "index cache path");
  app.add_option("--counter", counter,
                 "token counter: whitespace | bpe:<merges.json>");
  app.add_option("--strategy", strategy,
                 "retrieval strategy: relevance | random | none");
  app.add_option("--strategy-seed", strategy_seed, "seed for random strategy")
      ->each([&](const std::string&) { strategy_seed_set = true; });

  std::size_t demo_budget = 0, demo_cap = 0, gen_reserve = 0, model_ctx = 0;
  app.add_option("--demo-budget", demo_budget, "demo token budget");
  app.add_option("--demo-cap", demo_cap, "per-demo token cap");
  app.add_option("--gen-reserve", gen_reserve, "tokens reserved for generation");
  app.add_option("--model-ctx", model_ctx, "model context tokens");

  double temperature = -1.0;
  std::size_t max_new_tokens = 0, samples = 0;
  std::uint64_t gen_seed = 0;
  bool gen_seed_set = false;
  app.add_option("--temperature", temperature, "sampling temperature");
  app.add_option("--max-new-tokens", max_new_tokens, "generation length cap");
  app.add_option("--samples", samples, "samples per prompt");
  app.add_option("--seed", gen_seed, "generation seed")
      ->each([&](const std::string&) { gen_seed_set = true; });

  bool deterministic = false;
  bool skip_bad_records = false;
  app.add_flag("--deterministic", deterministic,
               "pin manifest timestamps for byte-identical reruns");
  app.add_flag("--skip-bad-records", skip_bad_records,
               "downgrade bad corpus records to warnings");

  std::string embedder_type, embedder_endpoint;
  std::size_t embedder_dim = 0;
  std::uint64_t embedder_seed = 0;
  bool embedder_seed_set = false;
  app.add_option("--embedder", embedder_type, "embedder type: hash | http");
  app.add_option("--embedder-dim", embedder_dim, "hash embedder dimension");
  app.add_option("--embedder-seed", embedder_seed, "hash embedder seed")
      ->each([&](const std::string&) { embedder_seed_set = true; });
  app.add_option("--embedder-endpoint", embedder_endpoint,
                 "embedding service URL");

  std::string generator_type, generator_endpoint, generator_model;
  app.add_option("--generator", generator_type, "generator type: stub | http");
  app.add_option("--generator-endpoint", generator_endpoint,
                 "completion service URL");
  app.add_option("--generator-model", generator_model, "model name");

  std::string judge_type, judge_endpoint, judge_model, judge_script;
  app.add_option("--judge", judge_type,
                 "judge type: length | lex | scripted | http");
  app.add_option("--judge-endpoint", judge_endpoint, "judge service URL");
  app.add_option("--judge-model", judge_model, "judge model name");
  app.add_option("--judge-script", judge_script, "scripted judge replies file");

  auto* cmd_index_app = app.add_subcommand("index", "build the vector index cache");
  bool force = false;
  cmd_index_app->add_flag("--force", force, "overwrite an existing cache");

  auto* cmd_retrieve_app = app.add_subcommand(
      "retrieve", "show which demos one query selects and why");
  std::string query_text, query_file;
  cmd_retrieve_app->add_option("--prompt", query_text, "query text");
  cmd_retrieve_app->add_option("--prompt-file", query_file,
                               "file holding the query text");

  auto* cmd_assemble_app = app.add_subcommand(
      "assemble", "render full prompts for the test set");
  bool dry_run = false;
  cmd_assemble_app->add_flag("--dry-run", dry_run, "print prompts to stdout");

  auto* cmd_generate_app =
      app.add_subcommand("generate", "sample responses for the test set");

  auto* cmd_evaluate_app = app.add_subcommand(
      "evaluate", "judge candidate responses against a reference");
  std::string candidate_path, reference_path, contexts_path;
  std::string order_policy;
  bool reference_per_set = false;
  cmd_evaluate_app->add_option("--candidate", candidate_path,
                               "candidate responses JSONL")
      ->required();
  cmd_evaluate_app->add_option("--reference", reference_path,
                               "reference responses JSONL")
      ->required();
  cmd_evaluate_app->add_option("--contexts", contexts_path,
                               "contexts.jsonl for effective-data-size stats");
  cmd_evaluate_app->add_option(
      "--order-policy", order_policy,
      "judging order: candidate_first | swap_and_average");
  cmd_evaluate_app->add_flag("--reference-per-set", reference_per_set,
                             "match reference sample_index to each set");

  auto* cmd_report_app =
      app.add_subcommand("report", "re-render a saved report");
  std::string report_path;
  cmd_report_app->add_option("file", report_path, "report.json")->required();

  auto* cmd_overlap_app = app.add_subcommand(
      "check-overlap", "list corpus prompts identical to test prompts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    // CLI11 returns 0 for --help/--version; anything else is bad input.
    return code == 0 ? kOk : kInputError;
  }

  try {
    RunConfig config;
    if (!config_path.empty()) config = load_run_config(config_path);

    if (!corpus_path.empty()) config.corpus_path = corpus_path;
    if (!prompts_path.empty()) config.test_prompts_path = prompts_path;
    if (!output_dir.empty()) config.output_dir = output_dir;
    if (!index_path.empty()) config.index_path = index_path;
    if (!counter.empty()) config.counter = counter;
    if (!strategy.empty()) config.strategy = strategy_from_string(strategy);
    if (strategy_seed_set) config.strategy_seed = strategy_seed;
    if (demo_budget > 0) config.budget.demo_budget_tokens = demo_budget;
    if (demo_cap > 0) config.budget.per_demo_cap_tokens = demo_cap;
    if (gen_reserve > 0) config.budget.reserved_generation_tokens = gen_reserve;
    if (model_ctx > 0) config.budget.model_context_tokens = model_ctx;
    if (temperature >= 0.0) config.generation.temperature = temperature;
    if (max_new_tokens > 0) config.generation.max_new_tokens = max_new_tokens;
    if (samples > 0) config.generation.samples_per_prompt = samples;
    if (gen_seed_set) config.generation.seed = gen_seed;
    if (deterministic) config.deterministic = true;
    if (skip_bad_records) config.skip_bad_records = true;
    if (!embedder_type.empty()) config.embedder.type = embedder_type;
    if (embedder_dim > 0) config.embedder.dim = embedder_dim;
    if (embedder_seed_set) config.embedder.seed = embedder_seed;
    if (!embedder_endpoint.empty()) config.embedder.endpoint = embedder_endpoint;
    if (!generator_type.empty()) config.generator.type = generator_type;
    if (!generator_endpoint.empty())
      config.generator.endpoint = generator_endpoint;
    if (!generator_model.empty()) config.generator.model = generator_model;
    if (!judge_type.empty()) config.judge.type = judge_type;
    if (!judge_endpoint.empty()) config.judge.endpoint = judge_endpoint;
    if (!judge_model.empty()) config.judge.model = judge_model;
    if (!judge_script.empty()) config.judge.script_path = judge_script;

    if (cmd_index_app->parsed()) {
      const std::string path = cmd_index(config, force);
      std::cout << "index cache written to " << path << '\n';
    } else if (cmd_retrieve_app->parsed()) {
      if (query_text.empty() && query_file.empty()) {
        throw InputError("retrieve: pass --prompt or --prompt-file");
      }
      if (!query_text.empty() && !query_file.empty()) {
        throw InputError("retrieve: --prompt and --prompt-file are exclusive");
      }
      std::string query = query_text;
      if (!query_file.empty()) {
        query = read_file(query_file);
        while (!query.empty() && (query.back() == '\n' || query.back() == '\r')) {
          query.pop_back();
        }
      }
      cmd_retrieve(config, query, std::cout);
    } else if (cmd_assemble_app->parsed()) {
      const AssembleStats stats = cmd_assemble(config, dry_run, std::cout);
      if (!dry_run) {
        std::cout << "rendered " << stats.rendered << " prompt(s)";
        if (stats.overflowed > 0) {
          std::cout << ", " << stats.overflowed << " overflowed";
        }
        std::cout << '\n';
      }
    } else if (cmd_generate_app->parsed()) {
      const GenerateOutputs outputs = cmd_generate(config);
      std::cout << "wrote " << outputs.n_results << " response(s) to "
                << outputs.responses_path << '\n';
      if (outputs.n_failures > 0) {
        std::cout << outputs.n_failures
                  << " failure(s); see manifest: " << outputs.manifest_path
                  << '\n';
      }
    } else if (cmd_evaluate_app->parsed()) {
      if (!order_policy.empty()) {
        if (order_policy == "candidate_first") {
          config.order_policy = OrderPolicy::kCandidateFirst;
        } else if (order_policy == "swap_and_average") {
          config.order_policy = OrderPolicy::kSwapAndAverage;
        } else {
          throw InputError("unknown order policy \"" + order_policy + "\"");
        }
      }
      if (reference_per_set) config.reference_per_set = true;
      const EvaluateOutputs outputs =
          cmd_evaluate(config, candidate_path, reference_path, contexts_path);
      std::cout << render_report(outputs.report);
      std::cout << "report written to " << outputs.report_json_path << '\n';
    } else if (cmd_report_app->parsed()) {
      cmd_report(report_path, std::cout);
    } else if (cmd_overlap_app->parsed()) {
      cmd_check_overlap(config, std::cout);
    }
    return kOk;
  } catch (const SafetyRefusal& e) {
    std::cerr << "refused: " << e.what() << '\n';
    return kSafetyRefusal;
  } catch (const BackendError& e) {
    std::cerr << "backend error: " << e.what() << '\n';
    return kBackendFailure;
  } catch (const ContextOverflowError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInputError;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << '\n';
    return kUnexpected;
  }
}
