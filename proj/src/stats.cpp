#include "icalign/stats.hpp"

#include <cmath>

#include "icalign/error.hpp"

namespace icalign {

MeanStd mean_sample_std(std::span<const double> values) {
  if (values.empty()) throw InputError("mean_sample_std: empty input");
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  if (values.size() == 1) return {mean, 0.0};
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  const double var = sq / static_cast<double>(values.size() - 1);
  return {mean, std::sqrt(var)};
}

}  // namespace icalign
