#pragma once

#include <cstdint>
#include <vector>

#include "xdistill/config.hpp"

namespace xdistill {

struct BenchRow {
  int64_t seq = 0;
  double attention_ms = 0.0;
  double stack_ms = 0.0;
};

struct BenchResult {
  std::vector<BenchRow> rows;
  double attention_slope = 0.0;  // log-log runtime fit exponent
  double stack_slope = 0.0;
};

// Times one attention layer and the student stack on single-sequence forward
// passes across the given lengths and fits log-log slopes.
BenchResult run_scaling_benchmark(const RunConfig& config,
                                  const std::vector<int64_t>& seq_lens);

}  // namespace xdistill
