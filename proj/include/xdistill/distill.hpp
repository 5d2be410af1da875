#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "xdistill/teacher.hpp"
#include "xdistill/tensor.hpp"
#include "xdistill/xlstm.hpp"

namespace xdistill {

// ---- losses ----

// Mean -log softmax probability of the target class over all positions,
// via log-sum-exp. logits: [N × V], targets: N token ids.
Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& targets);

// Mean over positions of KL(p_t^(T) || p_s^(T)) with p^(T) = softmax(logits/T).
// The teacher side receives no gradient; the caller applies the T² factor.
Tensor kd_loss(const Tensor& logits_t, const Tensor& logits_s, double temperature);

// (1/B) Σ_b ‖h̄_t^(b) − h_s^(b)‖_F with each norm over the sample's [S × D]
// slice. Raw value; combined_loss applies the √numel normalization.
Tensor frobenius_loss(const Tensor& h_teacher_mean, const Tensor& h_s, int64_t batch);

struct DistillWeights {
  double alpha_k = 0.0;
  double temp_k = 1.0;
  double beta_k = 0.0;
};

// (1 − α − β)·CE + α·T²·KD + β·frob/√numel. With t_squared off the KD term is
// α·KD (the literal training-loop form). frob may be undefined when β = 0.
Tensor combined_loss(const Tensor& ce, const Tensor& kd, const Tensor& frob,
                     const DistillWeights& weights, int64_t h_s_numel,
                     bool t_squared = true);

// ---- annealing ----

struct AnnealState {
  double alpha = 0.0;  // current epoch anchor
  double temp = 1.0;   // current epoch anchor
  double alpha_initial = 0.0, alpha_final = 0.0;
  double temp_initial = 1.0, temp_final = 1.0;
  double delta_alpha = 0.0, delta_temp = 0.0;
  int64_t step = 0;
  int64_t epoch = 1;

  static AnnealState make(double alpha_initial, double alpha_final, double temp_initial,
                          double temp_final, double delta_alpha, double delta_temp);
};

// final + (anchor − final)/(1 + ln(k+1)); monotone non-increasing in k and
// bounded in [final, anchor].
double schedule_value(double anchor, double final_value, int64_t k);

// End-of-epoch anchor decay: anchor ← max(anchor − Δ, final); resets the
// within-epoch step counter.
void epoch_decay(AnnealState& state);

// ---- student ----

struct StudentConfig {
  int64_t n_blocks = 1;
  int64_t n_heads = 4;
  int64_t d_model = 0;
  int64_t vocab = 0;
  GateKind forget_gate = GateKind::Sigmoid;
};

// L_s = ⌊L_t/2⌋, H_s = roundup(H_t, 4); D and V copied from the teacher.
StudentConfig derive_student_config(int64_t teacher_layers, int64_t teacher_heads,
                                    int64_t d_model, int64_t vocab);

// Frozen embedding and classification head copied bitwise from the teacher;
// fresh seeded sequence-mixer stack. No positional table: the recurrence
// carries position.
struct StudentModel {
  int64_t d_model = 0;
  int64_t vocab = 0;
  Tensor embedding;  // [V × D], frozen
  Tensor head;       // [D × V], frozen
  XlstmStack stack;
  double trainable_fraction = 0.0;

  std::vector<std::pair<std::string, Tensor>> named_params() const;
};

struct StudentOutput {
  Tensor hidden;  // h_s, [B·S × D]
  Tensor logits;  // [B·S × V]
};

StudentModel init_student_from_teacher(const TeacherModel& teacher,
                                       const StudentConfig& config, uint64_t seed);

StudentOutput student_forward(const StudentModel& m, const std::vector<int64_t>& tokens,
                              int64_t batch, int64_t seq);

}  // namespace xdistill
