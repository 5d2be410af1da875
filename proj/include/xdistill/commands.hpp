#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "xdistill/config.hpp"
#include "xdistill/gradcheck.hpp"

namespace xdistill {

// Command bodies behind the CLI, callable directly from tests. Each writes
// its artifacts under out_dir (created if missing) alongside a config echo,
// and throws Error/NumericError on failure.

void cmd_pretrain_teacher(const RunConfig& config, const std::string& out_dir);

// Reads teacher_path, distills, writes student.ckpt and metrics.jsonl. On a
// numeric abort the current student is saved as student.abort.ckpt together
// with the metrics so far, then the error is rethrown.
void cmd_distill(const RunConfig& config, const std::string& teacher_path,
                 const std::string& out_dir);

void cmd_schedule(const RunConfig& config, std::ostream& out, const std::string& out_dir);

struct GradcheckOutcome {
  std::vector<FdParamReport> components;
  bool pass = true;
};

// Finite-difference oracle over the five gradient paths (vanilla LSTM, sLSTM,
// mLSTM, attention layer, combined loss) at fixed tiny dimensions.
GradcheckOutcome cmd_gradcheck(const RunConfig& config, std::ostream& out, double tol = 1e-4);

void cmd_benchmark(const RunConfig& config, const std::vector<int64_t>& seq_lens,
                   std::ostream& out, const std::string& out_dir);

void cmd_eval(const RunConfig& config, const std::string& teacher_path,
              const std::string& student_path, std::ostream& out,
              const std::string& out_dir);

}  // namespace xdistill
