#include "xdistill/distill.hpp"

#include <cmath>

namespace xdistill {

Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& targets) {
  check(static_cast<int64_t>(targets.size()) == logits.rows(),
        "cross_entropy: need one target per logit row");
  const int64_t vocab = logits.cols();
  for (int64_t t : targets) {
    check(t >= 0 && t < vocab, "cross_entropy: target id " + std::to_string(t) +
                                   " outside vocabulary of size " + std::to_string(vocab));
  }
  const Tensor logp = log_softmax_rows(logits, 1.0);
  return neg(mean(take_per_row(logp, targets)));
}

Tensor kd_loss(const Tensor& logits_t, const Tensor& logits_s, double temperature) {
  check(logits_t.shape() == logits_s.shape(),
        "kd_loss: teacher/student logit shapes differ, " + shape_str(logits_t.shape()) +
            " vs " + shape_str(logits_s.shape()));
  check(temperature > 0.0, "kd_loss: temperature must be positive");
  Tensor p_t, logp_t;
  {
    NoGradGuard guard;
    p_t = softmax_rows(logits_t, temperature);
    logp_t = log_softmax_rows(logits_t, temperature);
  }
  const Tensor logp_s = log_softmax_rows(logits_s, temperature);
  const Tensor contributions = mul(p_t, sub(logp_t, logp_s));
  return scale(sum(contributions), 1.0 / static_cast<double>(logits_t.rows()));
}

Tensor frobenius_loss(const Tensor& h_teacher_mean, const Tensor& h_s, int64_t batch) {
  check(h_teacher_mean.shape() == h_s.shape(),
        "frobenius_loss: state shapes differ, " + shape_str(h_teacher_mean.shape()) +
            " vs " + shape_str(h_s.shape()));
  check(batch >= 1 && h_s.rows() % batch == 0,
        "frobenius_loss: row count not divisible by batch size");
  const int64_t rows_per_sample = h_s.rows() / batch;
  const Tensor diff = sub(h_teacher_mean, h_s);
  Tensor acc = Tensor::scalar(0.0);
  for (int64_t b = 0; b < batch; ++b) {
    acc = add(acc, frobenius_norm(
                       slice_rows(diff, b * rows_per_sample, (b + 1) * rows_per_sample)));
  }
  return scale(acc, 1.0 / static_cast<double>(batch));
}

Tensor combined_loss(const Tensor& ce, const Tensor& kd, const Tensor& frob,
                     const DistillWeights& weights, int64_t h_s_numel, bool t_squared) {
  check(weights.alpha_k >= 0.0 && weights.beta_k >= 0.0,
        "combined_loss: weights must be non-negative");
  check(weights.alpha_k + weights.beta_k <= 1.0,
        "combined_loss: alpha_k + beta_k exceeds 1");
  check(weights.temp_k > 0.0, "combined_loss: temperature must be positive");
  const double kd_weight =
      weights.alpha_k * (t_squared ? weights.temp_k * weights.temp_k : 1.0);
  Tensor total = add(scale(ce, 1.0 - weights.alpha_k - weights.beta_k),
                     scale(kd, kd_weight));
  if (weights.beta_k > 0.0) {
    check(frob.defined(), "combined_loss: beta_k > 0 requires a frobenius term");
    check(h_s_numel > 0, "combined_loss: h_s_numel must be positive");
    total = add(total,
                scale(frob, weights.beta_k / std::sqrt(static_cast<double>(h_s_numel))));
  }
  return total;
}

AnnealState AnnealState::make(double alpha_initial, double alpha_final, double temp_initial,
                              double temp_final, double delta_alpha, double delta_temp) {
  check(alpha_initial >= alpha_final, "anneal: alpha_initial below alpha_final");
  check(temp_initial >= temp_final, "anneal: temp_initial below temp_final");
  check(temp_final > 0.0, "anneal: temperatures must be positive");
  AnnealState s;
  s.alpha = alpha_initial;
  s.temp = temp_initial;
  s.alpha_initial = alpha_initial;
  s.alpha_final = alpha_final;
  s.temp_initial = temp_initial;
  s.temp_final = temp_final;
  s.delta_alpha = delta_alpha;
  s.delta_temp = delta_temp;
  return s;
}

double schedule_value(double anchor, double final_value, int64_t k) {
  check(k >= 0, "schedule_value: step must be non-negative");
  check(anchor >= final_value, "schedule_value: anchor below final value");
  return final_value +
         (anchor - final_value) / (1.0 + std::log(static_cast<double>(k) + 1.0));
}

void epoch_decay(AnnealState& state) {
  state.alpha = std::max(state.alpha - state.delta_alpha, state.alpha_final);
  state.temp = std::max(state.temp - state.delta_temp, state.temp_final);
  state.step = 0;
  ++state.epoch;
}

StudentConfig derive_student_config(int64_t teacher_layers, int64_t teacher_heads,
                                    int64_t d_model, int64_t vocab) {
  check(teacher_layers >= 2, "derive_student_config: teacher must have at least 2 layers");
  check(teacher_heads >= 1, "derive_student_config: teacher must have at least 1 head");
  StudentConfig cfg;
  cfg.n_blocks = teacher_layers / 2;
  cfg.n_heads = (teacher_heads + 3) / 4 * 4;
  cfg.d_model = d_model;
  cfg.vocab = vocab;
  check(d_model % cfg.n_heads == 0,
        "derive_student_config: d_model " + std::to_string(d_model) +
            " not divisible by derived head count " + std::to_string(cfg.n_heads) +
            "; adjust d_model or override the head count");
  return cfg;
}

std::vector<std::pair<std::string, Tensor>> StudentModel::named_params() const {
  std::vector<std::pair<std::string, Tensor>> out = {{"embedding", embedding},
                                                     {"head", head}};
  auto stack_params = stack.named_params();
  for (auto& [name, t] : stack_params) out.emplace_back("stack." + name, t);
  return out;
}

StudentModel init_student_from_teacher(const TeacherModel& teacher,
                                       const StudentConfig& config, uint64_t seed) {
  check(teacher.d_model == config.d_model,
        "init_student: teacher d_model " + std::to_string(teacher.d_model) +
            " differs from student d_model " + std::to_string(config.d_model));
  check(teacher.vocab == config.vocab,
        "init_student: teacher vocab " + std::to_string(teacher.vocab) +
            " differs from student vocab " + std::to_string(config.vocab));
  StudentModel m;
  m.d_model = config.d_model;
  m.vocab = config.vocab;
  m.embedding = Tensor::from_values(teacher.embedding.shape(), teacher.embedding.data());
  m.head = Tensor::from_values(teacher.head.shape(), teacher.head.data());
  m.stack = build_stack(config.d_model, config.n_blocks, config.n_heads,
                        config.forget_gate, seed);
  const auto stack_count = static_cast<double>(m.stack.param_count());
  const auto frozen_count =
      static_cast<double>(m.embedding.numel() + m.head.numel());
  m.trainable_fraction = stack_count / (stack_count + frozen_count);
  return m;
}

StudentOutput student_forward(const StudentModel& m, const std::vector<int64_t>& tokens,
                              int64_t batch, int64_t seq) {
  check(static_cast<int64_t>(tokens.size()) == batch * seq,
        "student_forward: token count does not match batch×seq");
  for (int64_t t : tokens) {
    check(t >= 0 && t < m.vocab, "student_forward: token id " + std::to_string(t) +
                                     " outside vocabulary");
  }
  StudentOutput out;
  out.hidden = stack_forward(m.stack, gather_rows(m.embedding, tokens), batch, seq);
  out.logits = matmul(out.hidden, m.head);
  return out;
}

}  // namespace xdistill
