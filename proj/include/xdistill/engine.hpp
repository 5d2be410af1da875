#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "xdistill/config.hpp"
#include "xdistill/data.hpp"
#include "xdistill/distill.hpp"
#include "xdistill/metrics.hpp"
#include "xdistill/teacher.hpp"

namespace xdistill {

GateKind gate_kind_from(const std::string& name);
CaptureMode capture_mode_from(const std::string& name);

struct CorpusBundle {
  std::string text;
  Vocab vocab;
  std::vector<int64_t> train_tokens;
  std::vector<int64_t> eval_tokens;  // trailing eval_fraction of the text
};

// Reads corpus_path (UTF-8 text) or generates the synthetic corpus; builds
// the vocabulary over the full text and splits train/eval by character
// position, so eval windows never overlap training windows.
CorpusBundle prepare_corpus(const RunConfig& config);

StudentConfig student_config_from(const RunConfig& config, int64_t vocab);

// ---- checkpoint glue (named-tensor state with a meta record and the vocab) ----

std::vector<std::pair<std::string, Tensor>> teacher_state(const TeacherModel& m,
                                                          const Vocab& vocab);
TeacherModel teacher_from_state(const std::vector<std::pair<std::string, Tensor>>& state,
                                Vocab& vocab_out);
std::vector<std::pair<std::string, Tensor>> student_state(const StudentModel& m,
                                                          const Vocab& vocab);
StudentModel student_from_state(const std::vector<std::pair<std::string, Tensor>>& state,
                                Vocab& vocab_out);

// ---- training ----

// Produces the (α_k, T_k, β_k) sequence for a run: within-epoch logarithmic
// decay from the current anchors, anchor decay by Δ at epoch ends, and the
// fixed/annealed β variants. k restarts each epoch unless k_mode is global.
class ScheduleDriver {
 public:
  explicit ScheduleDriver(const RunConfig& config);
  DistillWeights weights() const;
  void after_step();
  void after_epoch();
  int64_t k() const;
  int64_t global_step() const { return global_step_; }
  const AnnealState& anneal() const { return anneal_; }

 private:
  const RunConfig* config_;
  AnnealState anneal_;
  double beta_anchor_ = 0.0;
  int64_t global_step_ = 0;
};

struct DistillResult {
  std::vector<MetricsRecord> metrics;
  int64_t steps_per_epoch = 0;
};

// The annealed-distillation loop: per optimizer step, forward teacher
// (frozen, no tape) and student, combine CE/KD(/Frobenius) with the current
// (α_k, T_k, β_k), backward, Adam update, then advance the schedule; anchors
// decay at epoch ends. Deterministic for a fixed config.
DistillResult run_delta_distillation(
    const TeacherModel& teacher, StudentModel& student,
    const std::vector<int64_t>& train_tokens, const RunConfig& config,
    const std::function<void(const MetricsRecord&)>& on_record = nullptr);

struct EvalReport {
  double student_ce = 0.0;
  double student_ppl = 0.0;
  double teacher_ce = 0.0;
  double teacher_ppl = 0.0;
  double kl_t1 = 0.0;       // KL(teacher || student) at temperature 1
  double frobenius = 0.0;   // raw alignment loss against the layer-mean states
  int64_t windows = 0;

  std::string to_json_line() const;
};

EvalReport evaluate_models(const TeacherModel& teacher, const StudentModel& student,
                           const std::vector<int64_t>& eval_tokens,
                           const RunConfig& config);

}  // namespace xdistill
