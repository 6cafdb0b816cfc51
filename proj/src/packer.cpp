#include "icalign/packer.hpp"

#include <algorithm>

#include "icalign/error.hpp"
#include "icalign/prompt.hpp"

namespace icalign {

const char* to_string(PackStop reason) {
  switch (reason) {
    case PackStop::kBudgetOverflow:
      return "budget_overflow";
    case PackStop::kRankingExhausted:
      return "ranking_exhausted";
  }
  return "unknown";
}

PackedContext pack(const RetrievalRanking& ranking, const Corpus& corpus,
                   const TokenCounter& counter, const BudgetConfig& budget) {
  PackedContext packed;
  for (const auto& entry : ranking.ranked) {
    const DemoPair& demo = corpus.require(entry.id);
    const std::size_t length = demo_token_length(counter, demo);
    // The overflow check comes first: any new demo that would overflow ends
    // the walk, even one the cap would have skipped anyway.
    if (packed.total_demo_tokens + length > budget.demo_budget_tokens) {
      packed.stop_reason = PackStop::kBudgetOverflow;
      break;
    }
    if (length > budget.per_demo_cap_tokens) {
      packed.skipped_overlength_ids.push_back(demo.id);
      continue;
    }
    packed.selected.push_back(demo);
    packed.total_demo_tokens += length;
  }
  // Collected most-relevant-first; the prompt wants the most relevant demo
  // last, next to the test prompt.
  std::reverse(packed.selected.begin(), packed.selected.end());
  return packed;
}

MeanStd demo_count_stats(const std::vector<PackedContext>& contexts) {
  if (contexts.empty()) throw InputError("demo_count_stats: empty input");
  std::vector<double> counts;
  counts.reserve(contexts.size());
  for (const auto& c : contexts) {
    counts.push_back(static_cast<double>(c.selected_count()));
  }
  return mean_sample_std(counts);
}

}  // namespace icalign
