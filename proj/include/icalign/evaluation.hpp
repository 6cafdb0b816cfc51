#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "icalign/generation.hpp"
#include "icalign/packer.hpp"
#include "icalign/stats.hpp"

namespace icalign {

// Candidate-vs-reference responses to one prompt within one response set.
struct ResponsePair {
  std::string prompt_id;
  std::string prompt_text;
  std::string candidate_text;  // system under test
  std::string reference_text;
  std::size_t set_index = 0;
};

enum class Outcome { kWin, kDraw, kLoss, kJudgeError };

const char* to_string(Outcome outcome);

struct JudgeVerdict {
  Outcome outcome = Outcome::kJudgeError;
  std::string raw_judgment;  // opaque payload kept for audit
};

// Pairwise judge. Returns the raw reply comparing answer 1 against
// answer 2 for `question`; parsing happens in judge_pair so every backend
// flows through one parser. `strict` requests a machine-parseable reply
// and is set on the retry after an unparseable one.
class JudgeBackend {
 public:
  virtual ~JudgeBackend() = default;

  virtual std::string name() const = 0;
  virtual std::string judge(const std::string& question,
                            const std::string& answer_1,
                            const std::string& answer_2, bool strict) = 0;
};

// Parsed relation between assistant 1 and assistant 2. Recognized, in
// priority order:
//   1. a line holding exactly two numbers (scores for assistants 1 and 2),
//   2. bracketed verdicts [[A]] / [[B]] / [[C]],
//   3. phrases "assistant 1/2 is better", "tie", "equally good/matched".
enum class Preference { kFirst, kSecond, kTie, kUnparseable };

Preference parse_judge_reply(std::string_view reply);

enum class OrderPolicy {
  // Candidate shown as assistant 1, judged once.
  kCandidateFirst,
  // Judge both orders; win only when both agree the candidate is better,
  // loss only when both agree it is worse, draw otherwise. More robust to
  // position bias at twice the judging cost.
  kSwapAndAverage,
};

// Formats the pair per the order policy, queries the judge, parses the
// reply. An unparseable reply is retried once in strict mode; a second
// failure yields Outcome::kJudgeError, which aggregation excludes from
// rates but counts.
JudgeVerdict judge_pair(JudgeBackend& judge, const ResponsePair& pair,
                        OrderPolicy policy = OrderPolicy::kCandidateFirst);

struct JudgeRunOptions {
  OrderPolicy policy = OrderPolicy::kCandidateFirst;
  std::size_t max_in_flight = 1;
  double min_request_interval_s = 0.0;
};

// Judges every pair, up to max_in_flight concurrently; output order always
// matches input order.
std::vector<JudgeVerdict> judge_all(JudgeBackend& judge,
                                    const std::vector<ResponsePair>& pairs,
                                    const JudgeRunOptions& options = {});

struct SetRates {
  std::size_t set_index = 0;
  std::size_t wins = 0;
  std::size_t draws = 0;
  std::size_t losses = 0;
  std::size_t judge_errors = 0;
  // Full precision; rounding to one decimal happens only at display time.
  double win_pct = 0.0;
  double draw_pct = 0.0;
  double loss_pct = 0.0;
};

// Percentages over the non-error verdicts of one set. Throws InputError
// when every verdict errored.
SetRates aggregate_set(std::span<const JudgeVerdict> verdicts,
                       std::size_t set_index = 0);

struct EvalReport {
  std::vector<SetRates> per_set;
  double win_rate_mean = 0.0;
  double win_rate_std = 0.0;  // sample std across sets; 0 for a single set
  double draw_rate_mean = 0.0;
  double loss_rate_mean = 0.0;
  double win_or_draw_rate_mean = 0.0;
  std::size_t n_prompts = 0;
  std::size_t n_sets = 0;
  std::optional<MeanStd> effective_data_size;

  // Single-set evaluations are marked rather than printing "± 0.0" as if
  // spread had been measured.
  bool single_set() const { return n_sets == 1; }
};

EvalReport aggregate_runs(const std::vector<SetRates>& per_set,
                          std::optional<MeanStd> effective_data_size =
                              std::nullopt);
EvalReport aggregate_runs(const std::vector<SetRates>& per_set,
                          const std::vector<PackedContext>& contexts);

// Human-readable table, one "mean ± std (W / D / L)" summary row plus the
// per-set breakdown; values rounded to one decimal.
std::string render_report(const EvalReport& report);

void save_report(const EvalReport& report, const std::string& path);
EvalReport load_report(const std::string& path);

// ---- Judge backends ------------------------------------------------------

// Prefers the longer answer; equal lengths tie. Replies with a score line
// so it exercises the standard parse path.
class LengthJudge final : public JudgeBackend {
 public:
  std::string name() const override { return "length"; }
  std::string judge(const std::string& question, const std::string& answer_1,
                    const std::string& answer_2, bool strict) override;
};

// Prefers the lexicographically smaller answer; equal answers tie.
class LexicographicJudge final : public JudgeBackend {
 public:
  std::string name() const override { return "lex"; }
  std::string judge(const std::string& question, const std::string& answer_1,
                    const std::string& answer_2, bool strict) override;
};

// Replays canned replies keyed by the exact (question, answer 1, answer 2)
// triple, for golden tests. A missing key yields fallback_reply when set,
// otherwise InputError.
class ScriptedJudge final : public JudgeBackend {
 public:
  // The lookup key: question and both answers joined by U+001F. Fixture
  // generators build the same key.
  static std::string key(const std::string& question,
                         const std::string& answer_1,
                         const std::string& answer_2);

  // File shape: {"replies": {"<key>": "<raw reply>"},
  //              "fallback_reply": "..."} (fallback optional).
  static ScriptedJudge load(const std::string& path);
  explicit ScriptedJudge(
      std::unordered_map<std::string, std::string> replies,
      std::optional<std::string> fallback_reply = std::nullopt);

  std::string name() const override { return "scripted"; }
  std::string judge(const std::string& question, const std::string& answer_1,
                    const std::string& answer_2, bool strict) override;

 private:
  std::unordered_map<std::string, std::string> replies_;
  std::optional<std::string> fallback_reply_;
};

struct HttpJudgeOptions {
  std::string endpoint;
  std::string path = "/v1/chat/completions";
  std::string model;
  std::string auth_env;
  int timeout_s = 300;
};

// Chat-completion judge client. Sends the pairwise review template as a
// single user message at temperature 0 and returns the assistant reply
// ("choices[0].message.content" or a bare "reply" field).
class HttpJudge final : public JudgeBackend {
 public:
  explicit HttpJudge(HttpJudgeOptions options);

  std::string name() const override;
  std::string judge(const std::string& question, const std::string& answer_1,
                    const std::string& answer_2, bool strict) override;

 private:
  HttpJudgeOptions options_;
};

// The pairwise review template the HTTP judge sends; exposed so transcripts
// can be reproduced and audited.
std::string pairwise_judge_prompt(const std::string& question,
                                  const std::string& answer_1,
                                  const std::string& answer_2, bool strict);

}  // namespace icalign
