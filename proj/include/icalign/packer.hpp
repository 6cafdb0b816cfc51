#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "icalign/corpus.hpp"
#include "icalign/retrieval.hpp"
#include "icalign/stats.hpp"

namespace icalign {

// Token allowances for one assembled prompt. The demo budget covers
// demonstration blocks only; the test prompt and template suffix live in
// whatever remains once the generation reservation is set aside. That grand
// total is validated at render time, not here.
struct BudgetConfig {
  std::size_t demo_budget_tokens = 3000;
  std::size_t per_demo_cap_tokens = 500;
  std::size_t reserved_generation_tokens = 1000;
  std::size_t model_context_tokens = 4096;
};

enum class PackStop {
  kBudgetOverflow,    // the next demo would not fit the budget
  kRankingExhausted,  // walked the whole ranking
};

const char* to_string(PackStop reason);

struct PackedContext {
  // Final prompt order: least relevant first, most relevant last, next to
  // the test prompt. Reversed, this is a contiguous prefix of the
  // cap-filtered ranking.
  std::vector<DemoPair> selected;
  std::size_t total_demo_tokens = 0;
  std::vector<std::string> skipped_overlength_ids;
  PackStop stop_reason = PackStop::kRankingExhausted;

  std::size_t selected_count() const { return selected.size(); }
};

// Walk the ranking in relevance order. The first demo that would overflow
// the budget stops the walk entirely (no searching for a smaller one
// further down); a demo that fits but whose rendered block exceeds the
// per-demo cap is skipped and the walk continues. Zero selected demos is a
// legal result. Throws InputError when a ranked id is missing from the
// corpus.
PackedContext pack(const RetrievalRanking& ranking, const Corpus& corpus,
                   const TokenCounter& counter, const BudgetConfig& budget);

// Mean and sample std of selected demo counts: the effective data size.
MeanStd demo_count_stats(const std::vector<PackedContext>& contexts);

}  // namespace icalign
