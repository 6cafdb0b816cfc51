#include "icalign/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "nlohmann/json.hpp"

#include "icalign/error.hpp"

namespace icalign {

const char* to_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::kWin:
      return "win";
    case Outcome::kDraw:
      return "draw";
    case Outcome::kLoss:
      return "loss";
    case Outcome::kJudgeError:
      return "judge_error";
  }
  return "unknown";
}

namespace {

// A line consisting of exactly two numbers (optionally comma-separated):
// the scores for assistant 1 and assistant 2.
const std::regex kScoreLine(
    R"(^\s*(-?\d+(?:\.\d+)?)\s*,?\s+(-?\d+(?:\.\d+)?)\s*$)");

const std::regex kFirstBetter(
    R"(assistant\s*1(?:'s\s+\w+)?\s+(?:is|was)\s+(?:slightly\s+|clearly\s+|much\s+)?better)",
    std::regex::icase);
const std::regex kSecondBetter(
    R"(assistant\s*2(?:'s\s+\w+)?\s+(?:is|was)\s+(?:slightly\s+|clearly\s+|much\s+)?better)",
    std::regex::icase);
const std::regex kTiePhrase(
    R"((\btie\b)|(\bdraw\b)|(\bequally\s+(?:good|strong|helpful|detailed|matched)\b)|(\bboth\s+(?:answers|responses)\s+are\s+(?:equally\s+)?(?:good|equal|comparable|similar)\b))",
    std::regex::icase);

std::optional<std::size_t> match_position(const std::string& text,
                                          const std::regex& re) {
  std::smatch m;
  if (!std::regex_search(text, m, re)) return std::nullopt;
  return static_cast<std::size_t>(m.position(0));
}

}  // namespace

Preference parse_judge_reply(std::string_view reply) {
  const std::string text(reply);

  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    std::smatch m;
    if (std::regex_match(line, m, kScoreLine)) {
      const double a = std::strtod(m[1].str().c_str(), nullptr);
      const double b = std::strtod(m[2].str().c_str(), nullptr);
      if (a > b) return Preference::kFirst;
      if (b > a) return Preference::kSecond;
      return Preference::kTie;
    }
  }

  const std::size_t pos_a = text.find("[[A]]");
  const std::size_t pos_b = text.find("[[B]]");
  const std::size_t pos_c = std::min(text.find("[[C]]"), text.find("[[tie]]"));
  if (pos_a != std::string::npos || pos_b != std::string::npos ||
      pos_c != std::string::npos) {
    const std::size_t best = std::min({pos_a, pos_b, pos_c});
    if (best == pos_a) return Preference::kFirst;
    if (best == pos_b) return Preference::kSecond;
    return Preference::kTie;
  }

  const auto first = match_position(text, kFirstBetter);
  const auto second = match_position(text, kSecondBetter);
  const auto tie = match_position(text, kTiePhrase);
  const std::size_t npos = std::string::npos;
  const std::size_t pf = first.value_or(npos);
  const std::size_t ps = second.value_or(npos);
  const std::size_t pt = tie.value_or(npos);
  const std::size_t best = std::min({pf, ps, pt});
  if (best == npos) return Preference::kUnparseable;
  if (best == pf) return Preference::kFirst;
  if (best == ps) return Preference::kSecond;
  return Preference::kTie;
}

namespace {

Preference judged_preference(JudgeBackend& judge, const std::string& question,
                             const std::string& answer_1,
                             const std::string& answer_2, std::string& raw) {
  raw = judge.judge(question, answer_1, answer_2, /*strict=*/false);
  Preference pref = parse_judge_reply(raw);
  if (pref == Preference::kUnparseable) {
    const std::string retry =
        judge.judge(question, answer_1, answer_2, /*strict=*/true);
    raw += "\n----- strict retry -----\n";
    raw += retry;
    pref = parse_judge_reply(retry);
  }
  return pref;
}

Outcome outcome_for_candidate(Preference pref, bool candidate_is_first) {
  switch (pref) {
    case Preference::kFirst:
      return candidate_is_first ? Outcome::kWin : Outcome::kLoss;
    case Preference::kSecond:
      return candidate_is_first ? Outcome::kLoss : Outcome::kWin;
    case Preference::kTie:
      return Outcome::kDraw;
    case Preference::kUnparseable:
      return Outcome::kJudgeError;
  }
  return Outcome::kJudgeError;
}

}  // namespace

JudgeVerdict judge_pair(JudgeBackend& judge, const ResponsePair& pair,
                        OrderPolicy policy) {
  if (pair.candidate_text.empty() || pair.reference_text.empty()) {
    throw InputError("judge_pair: empty response text for prompt \"" +
                     pair.prompt_id + "\"");
  }

  JudgeVerdict verdict;
  if (policy == OrderPolicy::kCandidateFirst) {
    std::string raw;
    const Preference pref = judged_preference(
        judge, pair.prompt_text, pair.candidate_text, pair.reference_text,
        raw);
    verdict.outcome = outcome_for_candidate(pref, /*candidate_is_first=*/true);
    verdict.raw_judgment = std::move(raw);
    return verdict;
  }

  std::string raw_fwd;
  std::string raw_rev;
  const Preference fwd = judged_preference(
      judge, pair.prompt_text, pair.candidate_text, pair.reference_text,
      raw_fwd);
  const Preference rev = judged_preference(
      judge, pair.prompt_text, pair.reference_text, pair.candidate_text,
      raw_rev);
  verdict.raw_judgment = raw_fwd + "\n----- swapped order -----\n" + raw_rev;
  if (fwd == Preference::kUnparseable || rev == Preference::kUnparseable) {
    verdict.outcome = Outcome::kJudgeError;
    return verdict;
  }
  const Outcome fwd_outcome = outcome_for_candidate(fwd, true);
  const Outcome rev_outcome = outcome_for_candidate(rev, false);
  if (fwd_outcome == Outcome::kWin && rev_outcome == Outcome::kWin) {
    verdict.outcome = Outcome::kWin;
  } else if (fwd_outcome == Outcome::kLoss && rev_outcome == Outcome::kLoss) {
    verdict.outcome = Outcome::kLoss;
  } else {
    verdict.outcome = Outcome::kDraw;
  }
  return verdict;
}

std::vector<JudgeVerdict> judge_all(JudgeBackend& judge,
                                    const std::vector<ResponsePair>& pairs,
                                    const JudgeRunOptions& options) {
  std::vector<JudgeVerdict> verdicts(pairs.size());
  RateLimiter limiter(options.min_request_interval_s);

  auto run_one = [&](std::size_t i) {
    limiter.acquire();
    try {
      verdicts[i] = judge_pair(judge, pairs[i], options.policy);
    } catch (const std::exception& e) {
      verdicts[i] = JudgeVerdict{Outcome::kJudgeError,
                                 std::string("judge failure: ") + e.what()};
    }
  };

  const std::size_t workers =
      std::min(std::max<std::size_t>(1, options.max_in_flight), pairs.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < pairs.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= pairs.size()) return;
          run_one(i);
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  return verdicts;
}

SetRates aggregate_set(std::span<const JudgeVerdict> verdicts,
                       std::size_t set_index) {
  if (verdicts.empty()) throw InputError("aggregate_set: empty verdict list");
  SetRates rates;
  rates.set_index = set_index;
  for (const auto& v : verdicts) {
    switch (v.outcome) {
      case Outcome::kWin:
        ++rates.wins;
        break;
      case Outcome::kDraw:
        ++rates.draws;
        break;
      case Outcome::kLoss:
        ++rates.losses;
        break;
      case Outcome::kJudgeError:
        ++rates.judge_errors;
        break;
    }
  }
  const std::size_t included = rates.wins + rates.draws + rates.losses;
  if (included == 0) {
    throw InputError("aggregate_set: all " +
                     std::to_string(rates.judge_errors) +
                     " verdicts are judge errors");
  }
  const double denom = static_cast<double>(included);
  rates.win_pct = 100.0 * static_cast<double>(rates.wins) / denom;
  rates.draw_pct = 100.0 * static_cast<double>(rates.draws) / denom;
  rates.loss_pct = 100.0 * static_cast<double>(rates.losses) / denom;
  return rates;
}

EvalReport aggregate_runs(const std::vector<SetRates>& per_set,
                          std::optional<MeanStd> effective_data_size) {
  if (per_set.empty()) throw InputError("aggregate_runs: no sets");

  std::vector<double> wins;
  std::vector<double> draws;
  std::vector<double> losses;
  std::vector<double> win_or_draw;
  wins.reserve(per_set.size());
  for (const auto& s : per_set) {
    wins.push_back(s.win_pct);
    draws.push_back(s.draw_pct);
    losses.push_back(s.loss_pct);
    win_or_draw.push_back(s.win_pct + s.draw_pct);
  }

  EvalReport report;
  report.per_set = per_set;
  const MeanStd win_stats = mean_sample_std(wins);
  report.win_rate_mean = win_stats.mean;
  report.win_rate_std = win_stats.stddev;
  report.draw_rate_mean = mean_sample_std(draws).mean;
  report.loss_rate_mean = mean_sample_std(losses).mean;
  report.win_or_draw_rate_mean = mean_sample_std(win_or_draw).mean;
  report.n_sets = per_set.size();
  for (const auto& s : per_set) {
    report.n_prompts = std::max(
        report.n_prompts, s.wins + s.draws + s.losses + s.judge_errors);
  }
  report.effective_data_size = effective_data_size;
  return report;
}

EvalReport aggregate_runs(const std::vector<SetRates>& per_set,
                          const std::vector<PackedContext>& contexts) {
  return aggregate_runs(per_set,
                        std::optional<MeanStd>(demo_count_stats(contexts)));
}

namespace {

std::string fmt1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", v);
  return buf;
}

}  // namespace

std::string render_report(const EvalReport& report) {
  std::ostringstream out;
  out << "pairwise evaluation: " << report.n_prompts << " prompts x "
      << report.n_sets << " set" << (report.n_sets == 1 ? "" : "s") << "\n";
  for (const auto& s : report.per_set) {
    out << "  set " << s.set_index << ": " << fmt1(s.win_pct) << " W / "
        << fmt1(s.draw_pct) << " D / " << fmt1(s.loss_pct) << " L   ("
        << s.wins << " W, " << s.draws << " D, " << s.losses << " L, "
        << s.judge_errors << " judge errors)\n";
  }
  out << "win rate         : " << fmt1(report.win_rate_mean);
  if (report.single_set()) {
    out << " (single set)";
  } else {
    out << " \xC2\xB1 " << fmt1(report.win_rate_std);
  }
  out << "  (" << fmt1(report.win_rate_mean) << " W / "
      << fmt1(report.draw_rate_mean) << " D / "
      << fmt1(report.loss_rate_mean) << " L)\n";
  out << "win-or-draw rate : " << fmt1(report.win_or_draw_rate_mean) << "\n";
  if (report.effective_data_size.has_value()) {
    out << "effective data size: " << fmt1(report.effective_data_size->mean)
        << " \xC2\xB1 " << fmt1(report.effective_data_size->stddev) << "\n";
  }
  return out.str();
}

void save_report(const EvalReport& report, const std::string& path) {
  nlohmann::json sets = nlohmann::json::array();
  for (const auto& s : report.per_set) {
    sets.push_back({{"set_index", s.set_index},
                    {"wins", s.wins},
                    {"draws", s.draws},
                    {"losses", s.losses},
                    {"judge_errors", s.judge_errors},
                    {"win_pct", s.win_pct},
                    {"draw_pct", s.draw_pct},
                    {"loss_pct", s.loss_pct}});
  }
  nlohmann::json j{{"n_prompts", report.n_prompts},
                   {"n_sets", report.n_sets},
                   {"per_set", sets},
                   {"win_rate_mean", report.win_rate_mean},
                   {"win_rate_std", report.win_rate_std},
                   {"draw_rate_mean", report.draw_rate_mean},
                   {"loss_rate_mean", report.loss_rate_mean},
                   {"win_or_draw_rate_mean", report.win_or_draw_rate_mean}};
  if (report.effective_data_size.has_value()) {
    j["effective_data_size"] = {{"mean", report.effective_data_size->mean},
                                {"stddev", report.effective_data_size->stddev}};
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write report: " + path);
  out << j.dump(2) << '\n';
  if (!out) throw InputError("failed writing report: " + path);
}

EvalReport load_report(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read report: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("bad report " + path + ": " + e.what());
  }
  EvalReport report;
  try {
    report.n_prompts = j.at("n_prompts").get<std::size_t>();
    report.n_sets = j.at("n_sets").get<std::size_t>();
    for (const auto& s : j.at("per_set")) {
      SetRates rates;
      rates.set_index = s.at("set_index").get<std::size_t>();
      rates.wins = s.at("wins").get<std::size_t>();
      rates.draws = s.at("draws").get<std::size_t>();
      rates.losses = s.at("losses").get<std::size_t>();
      rates.judge_errors = s.at("judge_errors").get<std::size_t>();
      rates.win_pct = s.at("win_pct").get<double>();
      rates.draw_pct = s.at("draw_pct").get<double>();
      rates.loss_pct = s.at("loss_pct").get<double>();
      report.per_set.push_back(rates);
    }
    report.win_rate_mean = j.at("win_rate_mean").get<double>();
    report.win_rate_std = j.at("win_rate_std").get<double>();
    report.draw_rate_mean = j.at("draw_rate_mean").get<double>();
    report.loss_rate_mean = j.at("loss_rate_mean").get<double>();
    report.win_or_draw_rate_mean =
        j.at("win_or_draw_rate_mean").get<double>();
    if (j.contains("effective_data_size")) {
      report.effective_data_size =
          MeanStd{j["effective_data_size"].at("mean").get<double>(),
                  j["effective_data_size"].at("stddev").get<double>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError("bad report " + path + ": " + e.what());
  }
  return report;
}

// ---- Judge backends --------------------------------------------------------

std::string LengthJudge::judge(const std::string& question,
                               const std::string& answer_1,
                               const std::string& answer_2, bool strict) {
  (void)question;
  (void)strict;
  if (answer_1.size() > answer_2.size()) {
    return "8 6\nAssistant 1 gives the longer, more detailed answer.";
  }
  if (answer_2.size() > answer_1.size()) {
    return "6 8\nAssistant 2 gives the longer, more detailed answer.";
  }
  return "7 7\nBoth answers are equally detailed.";
}

std::string LexicographicJudge::judge(const std::string& question,
                                      const std::string& answer_1,
                                      const std::string& answer_2,
                                      bool strict) {
  (void)question;
  (void)strict;
  if (answer_1 < answer_2) {
    return "Having compared both responses, Assistant 1 is better.";
  }
  if (answer_2 < answer_1) {
    return "Having compared both responses, Assistant 2 is better.";
  }
  return "The responses are identical; this is a tie.";
}

ScriptedJudge ScriptedJudge::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read judge script: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("bad judge script " + path + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("replies") || !j["replies"].is_object()) {
    throw InputError("bad judge script " + path +
                     ": expected {\"replies\": {question: reply}}");
  }
  std::unordered_map<std::string, std::string> replies;
  for (const auto& [question, reply] : j["replies"].items()) {
    replies[question] = reply.get<std::string>();
  }
  std::optional<std::string> fallback;
  if (j.contains("fallback_reply")) {
    fallback = j["fallback_reply"].get<std::string>();
  }
  return ScriptedJudge(std::move(replies), std::move(fallback));
}

ScriptedJudge::ScriptedJudge(
    std::unordered_map<std::string, std::string> replies,
    std::optional<std::string> fallback_reply)
    : replies_(std::move(replies)), fallback_reply_(std::move(fallback_reply)) {}

std::string ScriptedJudge::key(const std::string& question,
                               const std::string& answer_1,
                               const std::string& answer_2) {
  return question + '\x1f' + answer_1 + '\x1f' + answer_2;
}

std::string ScriptedJudge::judge(const std::string& question,
                                 const std::string& answer_1,
                                 const std::string& answer_2, bool strict) {
  (void)strict;
  const auto it = replies_.find(key(question, answer_1, answer_2));
  if (it != replies_.end()) return it->second;
  if (fallback_reply_.has_value()) return *fallback_reply_;
  throw InputError("scripted judge has no reply for question \"" + question +
                   "\"");
}

std::string pairwise_judge_prompt(const std::string& question,
                                  const std::string& answer_1,
                                  const std::string& answer_2, bool strict) {
  std::ostringstream out;
  out << "You are reviewing two AI assistant responses to the same user "
         "question.\n\n[Question]\n"
      << question << "\n\n[The Start of Assistant 1's Answer]\n"
      << answer_1 << "\n[The End of Assistant 1's Answer]\n\n"
      << "[The Start of Assistant 2's Answer]\n"
      << answer_2 << "\n[The End of Assistant 2's Answer]\n\n"
      << "Compare the helpfulness, relevance, accuracy, and level of detail "
         "of the two answers. First output one line containing exactly two "
         "numbers separated by a space: an overall score from 1 to 10 for "
         "Assistant 1, then for Assistant 2. Equal scores mean a tie. Then "
         "briefly explain your reasoning.";
  if (strict) {
    out << "\n\nOutput the two numbers only, nothing else.";
  }
  return out.str();
}

HttpJudge::HttpJudge(HttpJudgeOptions options) : options_(std::move(options)) {
  if (options_.endpoint.empty()) {
    throw InputError("http judge: endpoint required");
  }
}

std::string HttpJudge::name() const { return "http:" + options_.endpoint; }

std::string HttpJudge::judge(const std::string& question,
                             const std::string& answer_1,
                             const std::string& answer_2, bool strict) {
  httplib::Client client(options_.endpoint);
  client.set_connection_timeout(options_.timeout_s);
  client.set_read_timeout(options_.timeout_s);

  httplib::Headers headers;
  if (!options_.auth_env.empty()) {
    if (const char* token = std::getenv(options_.auth_env.c_str())) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }

  nlohmann::json body{
      {"temperature", 0.0},
      {"messages",
       nlohmann::json::array(
           {{{"role", "user"},
             {"content",
              pairwise_judge_prompt(question, answer_1, answer_2, strict)}}})}};
  if (!options_.model.empty()) body["model"] = options_.model;

  auto res = client.Post(options_.path, headers, body.dump(),
                         "application/json");
  if (!res) {
    throw BackendError("judge request to " + options_.endpoint +
                           " failed: " + httplib::to_string(res.error()),
                       /*retryable=*/true);
  }
  if (res->status == 429 || res->status >= 500) {
    throw BackendError(
        "judge service returned HTTP " + std::to_string(res->status),
        /*retryable=*/true);
  }
  if (res->status != 200) {
    throw BackendError("judge service returned HTTP " +
                           std::to_string(res->status) + ": " +
                           res->body.substr(0, 200),
                       /*retryable=*/false);
  }

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("bad judge response: ") + e.what());
  }
  if (j.contains("reply")) return j["reply"].get<std::string>();
  if (j.contains("choices") && j["choices"].is_array() &&
      !j["choices"].empty()) {
    const auto& choice = j["choices"][0];
    if (choice.contains("message")) {
      return choice["message"].value("content", std::string{});
    }
    return choice.value("text", std::string{});
  }
  throw BackendError("judge response carries neither \"reply\" nor "
                     "\"choices\"");
}

}  // namespace icalign
