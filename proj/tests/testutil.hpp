#pragma once

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "icalign/corpus.hpp"
#include "icalign/packer.hpp"
#include "icalign/retrieval.hpp"
#include "icalign/rng.hpp"

namespace testutil {

inline std::string fixture_path(const std::string& rel) {
  return std::string(ICALIGN_TEST_DIR) + "/fixtures/" + rel;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("testutil: cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

// Unique scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("icalign_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const {
    return (path_ / name).string();
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// ---- independent oracles ---------------------------------------------------
// Deliberately written against the documented rules, not against the
// implementation: naive loops, separate sort, separate walk.

struct OracleScored {
  std::string id;
  double score;
};

// Brute-force cosine ranking: plain loops, stable_sort, id tie-break.
inline std::vector<OracleScored> brute_force_cosine_rank(
    const std::vector<std::string>& ids,
    const std::vector<std::vector<float>>& vectors,
    const std::vector<float>& query) {
  std::vector<OracleScored> scored;
  double qn = 0.0;
  for (float x : query) qn += static_cast<double>(x) * x;
  qn = std::sqrt(qn);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    double vn = 0.0;
    for (float x : vectors[i]) vn += static_cast<double>(x) * x;
    vn = std::sqrt(vn);
    double score;
    if (qn == 0.0 || vn == 0.0) {
      score = -std::numeric_limits<double>::infinity();
    } else {
      double dot = 0.0;
      for (std::size_t d = 0; d < query.size(); ++d) {
        dot += static_cast<double>(query[d]) * vectors[i][d];
      }
      score = dot / (qn * vn);
    }
    scored.push_back({ids[i], score});
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const OracleScored& a, const OracleScored& b) {
                     if (a.score != b.score) return a.score > b.score;
                     return a.id < b.id;
                   });
  return scored;
}

struct OraclePack {
  std::vector<std::string> selected_ids;  // final prompt order
  std::vector<std::string> skipped_ids;
  std::size_t total = 0;
  bool budget_overflow = false;
};

// Re-simulates the packing walk from (ranked ids, per-id token lengths):
// stop at the first demo that would overflow the budget (even an over-cap
// one), skip over-cap demos that fit, reverse at the end.
inline OraclePack oracle_pack(
    const std::vector<std::pair<std::string, std::size_t>>& ranked_lengths,
    std::size_t budget, std::size_t cap) {
  OraclePack out;
  for (const auto& [id, len] : ranked_lengths) {
    if (out.total + len > budget) {
      out.budget_overflow = true;
      break;
    }
    if (len > cap) {
      out.skipped_ids.push_back(id);
      continue;
    }
    out.selected_ids.push_back(id);
    out.total += len;
  }
  std::reverse(out.selected_ids.begin(), out.selected_ids.end());
  return out;
}

// Non-streaming generation oracle: concatenate every chunk, cut at the first
// stop occurrence, truncate to the token cap by whitespace tokens, strip one
// leading space.
struct OracleGen {
  std::string text;
  bool stopped = false;
  bool truncated = false;
};

inline OracleGen oracle_generate(const std::vector<std::string>& chunks,
                                 const std::vector<std::string>& stops,
                                 std::size_t max_tokens) {
  std::string full;
  for (const auto& c : chunks) full += c;
  OracleGen out;
  std::size_t pos = std::string::npos;
  for (const auto& stop : stops) {
    const std::size_t p = full.find(stop);
    if (p != std::string::npos && (pos == std::string::npos || p < pos)) {
      pos = p;
    }
  }
  if (pos != std::string::npos) {
    full.resize(pos);
    out.stopped = true;
  }
  // whitespace tokenization, written out longhand
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  std::size_t i = 0;
  while (i < full.size()) {
    if (std::isspace(static_cast<unsigned char>(full[i])) != 0) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < full.size() &&
           std::isspace(static_cast<unsigned char>(full[j])) == 0) {
      ++j;
    }
    spans.emplace_back(i, j);
    i = j;
  }
  if (spans.size() > max_tokens) {
    full.resize(spans[max_tokens - 1].second);
    out.truncated = true;
  }
  if (!full.empty() && full.front() == ' ') full.erase(0, 1);
  out.text = std::move(full);
  return out;
}

// Synthetic demos with exact rendered whitespace lengths. A demo block
// renders as "Question: {p}\n\nHere's an example answer: {r}\n\n", which is
// 5 template tokens + prompt tokens + response tokens; with a 1-word prompt
// the rendered unit length is 6 + response words.
inline icalign::DemoPair demo_with_rendered_length(const std::string& id,
                                                   std::size_t length) {
  if (length < 7) throw std::runtime_error("min rendered length is 7");
  icalign::DemoPair demo;
  demo.id = id;
  demo.prompt = "p";
  std::string response = "w";
  for (std::size_t i = 1; i < length - 6; ++i) response += " w";
  demo.response = std::move(response);
  return demo;
}

inline icalign::RetrievalRanking ranking_of(
    const std::vector<std::string>& ids) {
  icalign::RetrievalRanking ranking;
  ranking.query_id = "q";
  double score = static_cast<double>(ids.size());
  for (const auto& id : ids) ranking.ranked.push_back({id, score--});
  return ranking;
}

}  // namespace testutil
