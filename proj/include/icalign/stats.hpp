#pragma once

#include <span>

namespace icalign {

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;
};

// Arithmetic mean and sample standard deviation (n-1 denominator; a single
// value yields stddev 0). Throws InputError on empty input.
MeanStd mean_sample_std(std::span<const double> values);

}  // namespace icalign
