// Acceptance suite: runs every acceptance criterion in order and prints one
// pass/fail line each. Exit code 0 iff all criteria pass.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>

#include "xdistill/benchmark.hpp"
#include "xdistill/checkpoint.hpp"
#include "xdistill/commands.hpp"
#include "xdistill/engine.hpp"
#include "xdistill/optimizer.hpp"

using namespace xdistill;
namespace fs = std::filesystem;

namespace {

struct CheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool cond, const std::string& what) {
  if (!cond) throw CheckFailure(what);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  }
  return worst;
}

// Desk-scale end-to-end configuration shared by criteria 6 and 7.
RunConfig desk_config() {
  RunConfig config;
  config.corpus_chars = 65536;
  config.validate();
  return config;
}

// Artifacts of the criterion-6 baseline run, reused by criterion 7.
struct E2eState {
  RunConfig config;
  CorpusBundle corpus;
  TeacherModel teacher;
  StudentModel initial_student;
  EvalReport initial_eval;
  double teacher_ce = 0.0;
  std::optional<DistillResult> baseline;  // beta off
  EvalReport baseline_eval;
};

std::optional<E2eState> e2e;

// Smoothed loss must fall across each epoch: moving-average head vs tail.
void check_epoch_decrease(const std::vector<MetricsRecord>& metrics,
                          int64_t steps_per_epoch, const std::string& run_name) {
  require(steps_per_epoch >= 2, run_name + ": too few steps per epoch to smooth");
  const int64_t window = std::max<int64_t>(1, std::min<int64_t>(10, steps_per_epoch / 4));
  for (int64_t epoch_start = 0; epoch_start < static_cast<int64_t>(metrics.size());
       epoch_start += steps_per_epoch) {
    double head = 0.0, tail = 0.0;
    for (int64_t i = 0; i < window; ++i) {
      head += metrics[static_cast<size_t>(epoch_start + i)].loss_total;
      tail += metrics[static_cast<size_t>(epoch_start + steps_per_epoch - 1 - i)].loss_total;
    }
    const int64_t epoch = metrics[static_cast<size_t>(epoch_start)].epoch;
    require(tail < head, run_name + ": smoothed loss did not decrease in epoch " +
                             std::to_string(epoch) + " (" + fmt(head / window) + " -> " +
                             fmt(tail / window) + ")");
  }
}

void check_e2e_assertions(const E2eState& state, const DistillResult& run,
                          const StudentModel& student, const std::string& run_name,
                          std::string& detail) {
  // (a) smoothed loss decreases within every epoch
  check_epoch_decrease(run.metrics, run.steps_per_epoch, run_name);

  // (b) held-out CE beats the untrained student by at least 10%
  const EvalReport final_eval =
      evaluate_models(state.teacher, student, state.corpus.eval_tokens, state.config);
  require(final_eval.student_ce < 0.9 * state.initial_eval.student_ce,
          run_name + ": final CE " + fmt(final_eval.student_ce) + " not below 0.9 * " +
              fmt(state.initial_eval.student_ce));

  // (c) student-teacher KL at T=1 at least halved
  require(final_eval.kl_t1 < 0.5 * state.initial_eval.kl_t1,
          run_name + ": final KL " + fmt(final_eval.kl_t1) + " not below half of " +
              fmt(state.initial_eval.kl_t1));

  // (d) frozen embedding and head bitwise unchanged
  require(student.embedding.data() == state.teacher.embedding.data(),
          run_name + ": frozen embedding changed");
  require(student.head.data() == state.teacher.head.data(),
          run_name + ": frozen head changed");

  detail += " ce " + fmt(state.initial_eval.student_ce) + "->" + fmt(final_eval.student_ce) +
            ", kl " + fmt(state.initial_eval.kl_t1) + "->" + fmt(final_eval.kl_t1);
}

// ---- criteria ----

std::string criterion_gradient_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig config;
  std::ostringstream sink;
  const GradcheckOutcome outcome = cmd_gradcheck(config, sink, 1e-4);
  require(outcome.components.size() == 5, "expected five checked components");
  double worst = 0.0;
  for (const auto& c : outcome.components) {
    require(c.pass, c.name + " rel err " + fmt(c.max_rel_err));
    worst = std::max(worst, c.max_rel_err);
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  require(seconds < 120.0, "gradient oracle suite exceeded 2 minutes");
  return "max rel err " + fmt(worst) + ", " + fmt(seconds) + "s";
}

std::string criterion_stabilizers() {
  // (a) stabilized vs naive agreement with gate pre-activations bounded by 2
  Rng rng(71);
  SlstmParams p = SlstmParams::init(6, 2, GateKind::Sigmoid, rng);
  for (auto& [name, t] : p.named_params("")) {
    for (double& v : t.data()) v *= 0.25;
  }
  SlstmState a = SlstmState::initial(2, 6);
  SlstmState b = SlstmState::initial(2, 6);
  double worst = 0.0;
  for (int t = 0; t < 8; ++t) {
    Tensor x = Tensor::randn({2, 6}, rng, 1.0);
    for (double& v : x.data()) v = std::clamp(v, -1.5, 1.5);
    SlstmGateTrace trace;
    a = slstm_step(p, x, a, &trace);
    b = slstm_step_naive(p, x, b);
    for (double v : trace.i_pre.data()) require(std::abs(v) <= 2.0, "pre-activation escaped the test band");
    for (double v : trace.f_pre.data()) require(std::abs(v) <= 2.0, "pre-activation escaped the test band");
    worst = std::max(worst, max_abs_diff(a.h, b.h));
  }
  require(worst < 1e-10, "stabilized/naive divergence " + fmt(worst));

  // (b) input-gate pre-activation 800 overflows the naive path only
  SlstmParams hot = p;
  hot.b_i = Tensor::full({6}, 800.0);
  const Tensor x0 = Tensor::randn({1, 6}, rng, 1.0);
  SlstmState stab = slstm_step(hot, x0, SlstmState::initial(1, 6));
  stab = slstm_step(hot, x0, stab);
  require(stab.h.all_finite() && stab.c.all_finite() && stab.n.all_finite(),
          "stabilized path overflowed");
  SlstmState naive = slstm_step_naive(hot, x0, SlstmState::initial(1, 6));
  bool naive_finite = naive.h.all_finite() && naive.n.all_finite();
  if (naive_finite) {
    naive = slstm_step_naive(hot, x0, naive);
    naive_finite = naive.h.all_finite() && naive.n.all_finite();
  }
  require(!naive_finite, "naive path unexpectedly stayed finite at 800");

  // (c) gate identities where both sides are finite
  SlstmState s = SlstmState::initial(2, 6);
  double worst_identity = 0.0;
  for (int t = 0; t < 6; ++t) {
    SlstmGateTrace trace;
    s = slstm_step(p, Tensor::randn({2, 6}, rng, 1.0), s, &trace);
    for (int64_t j = 0; j < trace.i_pre.numel(); ++j) {
      const double i_naive = std::exp(trace.i_pre.data()[j]);
      const double lhs_i = trace.i_stab.data()[j] * std::exp(trace.m.data()[j]);
      worst_identity = std::max(worst_identity,
                                std::abs(lhs_i - i_naive) / std::max(i_naive, 1e-12));
      if (std::isfinite(trace.m_prev.data()[j])) {
        const double f_naive = 1.0 / (1.0 + std::exp(-trace.f_pre.data()[j]));
        const double lhs_f = trace.f_stab.data()[j] *
                             std::exp(trace.m.data()[j] - trace.m_prev.data()[j]);
        worst_identity = std::max(worst_identity,
                                  std::abs(lhs_f - f_naive) / std::max(f_naive, 1e-12));
      }
    }
  }
  require(worst_identity < 1e-10, "gate identity error " + fmt(worst_identity));
  return "agreement " + fmt(worst) + ", identities " + fmt(worst_identity);
}

std::string criterion_schedule() {
  require(schedule_value(0.8, 0.5, 0) == 0.8, "alpha_k(0) != alpha_initial");

  double prev = 1e9;
  for (int64_t k = 0; k < 5000; k += 13) {
    const double v = schedule_value(0.8, 0.5, k);
    require(v <= prev && v >= 0.5 && v <= 0.8, "schedule not monotone/bounded");
    prev = v;
  }
  const double far = schedule_value(0.8, 0.5, 1000000);
  require(std::abs(far - 0.5203) < 1e-3,
          "alpha_k(1e6) = " + fmt(far) + " not within 1e-3 of 0.5203");

  // epoch anchors under the default Δ = 0.05
  AnnealState anneal = AnnealState::make(0.8, 0.5, 2.0, 1.0, 0.05, 0.05);
  double prev_alpha = anneal.alpha, prev_temp = anneal.temp;
  for (int epoch = 1; epoch <= 30; ++epoch) {
    if (epoch == 7) {
      require(std::abs(anneal.alpha - 0.5) < 1e-12, "alpha anchor not 0.5 at epoch 7");
    }
    if (epoch >= 7) require(anneal.alpha == 0.5, "alpha anchor left its floor");
    if (epoch >= 21) require(anneal.temp == 1.0, "temp anchor left its floor");
    require(anneal.alpha <= prev_alpha && anneal.temp <= prev_temp,
            "anchors not monotone");
    require(anneal.alpha >= 0.5 && anneal.temp >= 1.0, "anchors undershot their floors");
    prev_alpha = anneal.alpha;
    prev_temp = anneal.temp;
    epoch_decay(anneal);
  }
  return "alpha_k(1e6) = " + fmt(far);
}

std::string criterion_loss_identities() {
  // alpha = beta = 0 collapses to CE
  Rng rng(31);
  const Tensor logits = Tensor::randn({6, 11}, rng, 1.5);
  std::vector<int64_t> targets;
  for (int i = 0; i < 6; ++i) targets.push_back(rng.below(11));
  const Tensor ce = cross_entropy(logits, targets);
  const Tensor kd = kd_loss(logits, scale(logits, 0.7), 2.0);
  const double collapsed = combined_loss(ce, kd, Tensor(), {0.0, 2.0, 0.0}, 1).value();
  require(collapsed == ce.value(), "alpha=beta=0 did not collapse to CE");

  // identical logits give KD exactly 0; aligned states give frobenius 0
  require(std::abs(kd_loss(logits, logits, 2.0).value()) < 1e-14, "KD(identical) != 0");
  const Tensor h = Tensor::randn({6, 4}, rng, 1.0);
  require(frobenius_loss(h, h, 2).value() == 0.0, "frobenius(identical) != 0");

  // uniform logits give CE = ln V
  const Tensor uniform = Tensor::zeros({5, 60});
  require(std::abs(cross_entropy(uniform, {0, 1, 2, 3, 4}).value() - std::log(60.0)) < 1e-9,
          "uniform CE != ln V");

  // beta = 0 reconstruction, term for term, on records from a short real run
  RunConfig config;
  config.corpus_chars = 6144;
  config.epochs = 2;
  config.teacher_layers = 2;
  config.d_model = 32;
  config.teacher_heads = 4;
  config.validate();
  const CorpusBundle corpus = prepare_corpus(config);
  TeacherModel teacher = TeacherModel::init(corpus.vocab.size(), config.d_model,
                                            config.teacher_layers, config.teacher_heads,
                                            config.context_size, 3);
  teacher.set_requires_grad(false);
  StudentModel student = init_student_from_teacher(
      teacher, student_config_from(config, corpus.vocab.size()), 4);
  const DistillResult run =
      run_delta_distillation(teacher, student, corpus.train_tokens, config);
  double worst = 0.0;
  for (const MetricsRecord& r : run.metrics) {
    require(r.beta_k == 0.0, "run unexpectedly used beta");
    const double reconstructed = (1.0 - r.alpha_k) * r.loss_ce +
                                 r.alpha_k * r.temp_k * r.temp_k * r.loss_kd;
    worst = std::max(worst, std::abs(reconstructed - r.loss_total));
  }
  require(worst < 1e-9, "loss reconstruction error " + fmt(worst));
  return "reconstruction error " + fmt(worst) + " over " +
         std::to_string(run.metrics.size()) + " records";
}

std::string criterion_causality() {
  // teacher attention layer
  Rng rng(41);
  const int64_t seq = 12, d = 64;
  const TeacherLayerParams attn = TeacherLayerParams::init(d, rng);
  const Tensor x = Tensor::randn({seq, d}, rng, 1.0);
  Tensor x2 = Tensor::from_values(x.shape(), x.data());
  const int64_t t_perturb = 7;
  for (int64_t j = 0; j < d; ++j) x2.data()[t_perturb * d + j] -= 3.0;
  const Tensor base = causal_attention(attn, x, 1, seq, 6);
  const Tensor moved = causal_attention(attn, x2, 1, seq, 6);
  for (int64_t t = 0; t < t_perturb; ++t) {
    for (int64_t j = 0; j < d; ++j) {
      require(base.data()[t * d + j] == moved.data()[t * d + j],
              "attention output changed at position " + std::to_string(t));
    }
  }

  // student stack
  const XlstmStack stack = build_stack(d, 2, 8, GateKind::Sigmoid, 43);
  const Tensor sx = Tensor::randn({seq, d}, rng, 1.0);
  Tensor sx2 = Tensor::from_values(sx.shape(), sx.data());
  for (int64_t j = 0; j < d; ++j) sx2.data()[t_perturb * d + j] += 2.0;
  const Tensor sbase = stack_forward(stack, sx, 1, seq);
  const Tensor smoved = stack_forward(stack, sx2, 1, seq);
  for (int64_t t = 0; t < t_perturb; ++t) {
    for (int64_t j = 0; j < d; ++j) {
      require(sbase.data()[t * d + j] == smoved.data()[t * d + j],
              "stack output changed at position " + std::to_string(t));
    }
  }
  return "exact zero difference at all earlier positions";
}

std::string criterion_end_to_end() {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig config = desk_config();

  E2eState state{config,
                 prepare_corpus(config),
                 TeacherModel(),
                 StudentModel(),
                 EvalReport{},
                 0.0,
                 std::nullopt,
                 EvalReport{}};
  const int64_t vocab = state.corpus.vocab.size();
  require(vocab >= 50 && vocab <= 70, "synthetic vocabulary size " + std::to_string(vocab));

  state.teacher = TeacherModel::init(vocab, config.d_model, config.teacher_layers,
                                     config.teacher_heads, config.context_size,
                                     static_cast<uint64_t>(config.seed));
  TeacherPretrainOptions opts;
  opts.epochs = config.teacher_epochs;
  opts.batch_size = config.batch_size;
  opts.context = config.context_size;
  opts.lr = config.teacher_lr;
  opts.warmup_ratio = config.warmup_ratio;
  opts.seed = static_cast<uint64_t>(config.seed);
  const TeacherPretrainResult pretrain =
      teacher_pretrain(state.teacher, state.corpus.train_tokens, opts);
  double teacher_tail = 0.0;
  for (size_t i = pretrain.loss_trace.size() - 10; i < pretrain.loss_trace.size(); ++i) {
    teacher_tail += pretrain.loss_trace[i];
  }
  state.teacher_ce = teacher_tail / 10.0;
  const double ce_bound = 0.7 * std::log(static_cast<double>(vocab));
  require(state.teacher_ce < ce_bound, "teacher CE " + fmt(state.teacher_ce) +
                                           " not below 0.7 ln V = " + fmt(ce_bound));
  state.teacher.set_requires_grad(false);

  const StudentConfig sc = student_config_from(config, vocab);
  require(sc.n_blocks == 2 && sc.n_heads == 8, "heuristic did not give L_s=2, H_s=8");
  state.initial_student = init_student_from_teacher(state.teacher, sc,
                                                    static_cast<uint64_t>(config.seed));
  state.initial_eval = evaluate_models(state.teacher, state.initial_student,
                                       state.corpus.eval_tokens, config);

  StudentModel student = init_student_from_teacher(state.teacher, sc,
                                                   static_cast<uint64_t>(config.seed));
  state.baseline = run_delta_distillation(state.teacher, student,
                                          state.corpus.train_tokens, config);
  require(state.baseline->metrics.front().alpha_k == 0.8, "first-step alpha_k != 0.8");
  require(state.baseline->metrics.front().temp_k == 2.0, "first-step temp_k != 2.0");

  std::string detail = "teacher ce " + fmt(state.teacher_ce) + ",";
  check_e2e_assertions(state, *state.baseline, student, "baseline", detail);
  state.baseline_eval =
      evaluate_models(state.teacher, student, state.corpus.eval_tokens, config);

  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  require(seconds < 1800.0, "end-to-end run exceeded 30 minutes");
  e2e = std::move(state);
  return detail + ", " + fmt(seconds) + "s";
}

std::string criterion_frobenius_variant() {
  require(e2e.has_value() && e2e->baseline.has_value(),
          "baseline run unavailable (criterion 6 failed earlier)");
  E2eState& state = *e2e;

  // fixed beta = 0.1, alpha = 0.3
  RunConfig fixed = state.config;
  fixed.beta_mode = "fixed";
  fixed.validate();
  StudentModel fixed_student = init_student_from_teacher(
      state.teacher, student_config_from(fixed, state.teacher.vocab),
      static_cast<uint64_t>(fixed.seed));
  const DistillResult fixed_run = run_delta_distillation(
      state.teacher, fixed_student, state.corpus.train_tokens, fixed);
  for (const MetricsRecord& r : fixed_run.metrics) {
    require(r.alpha_k == 0.3 && r.beta_k == 0.1, "fixed run weights drifted");
    require(r.loss_frob > 0.0, "fixed run logged no frobenius loss");
  }
  std::string detail = "fixed:";
  check_e2e_assertions(state, fixed_run, fixed_student, "fixed-beta", detail);

  // annealed beta in [0.1, 0.2] with alpha in [0.2, 0.3]
  RunConfig annealed = state.config;
  annealed.beta_mode = "annealed";
  annealed.validate();
  StudentModel annealed_student = init_student_from_teacher(
      state.teacher, student_config_from(annealed, state.teacher.vocab),
      static_cast<uint64_t>(annealed.seed));
  const DistillResult annealed_run = run_delta_distillation(
      state.teacher, annealed_student, state.corpus.train_tokens, annealed);
  for (const MetricsRecord& r : annealed_run.metrics) {
    require(r.beta_k >= 0.1 - 1e-12 && r.beta_k <= 0.2 + 1e-12,
            "annealed beta escaped [0.1, 0.2]");
    require(r.alpha_k >= 0.2 - 1e-12 && r.alpha_k <= 0.3 + 1e-12,
            "annealed alpha escaped [0.2, 0.3]");
  }
  detail += " annealed:";
  check_e2e_assertions(state, annealed_run, annealed_student, "annealed-beta", detail);

  // the frobenius-regularized run needs smaller updates over the final epoch
  auto final_epoch_grad_mean = [](const DistillResult& run) {
    double acc = 0.0;
    int64_t count = 0;
    const int64_t last_epoch = run.metrics.back().epoch;
    for (const MetricsRecord& r : run.metrics) {
      if (r.epoch == last_epoch) {
        acc += r.grad_norm;
        ++count;
      }
    }
    return acc / static_cast<double>(count);
  };
  const double beta_mean = final_epoch_grad_mean(fixed_run);
  const double baseline_mean = final_epoch_grad_mean(*state.baseline);
  require(beta_mean < baseline_mean,
          "final-epoch grad norm mean " + fmt(beta_mean) + " not below baseline " +
              fmt(baseline_mean));
  return detail + ", grad norm " + fmt(beta_mean) + " < " + fmt(baseline_mean);
}

std::string criterion_scaling() {
  RunConfig config;
  const BenchResult result = run_scaling_benchmark(config, {128, 256, 512, 1024});
  require(result.attention_slope >= 1.6 && result.attention_slope <= 2.4,
          "attention slope " + fmt(result.attention_slope) + " outside [1.6, 2.4]");
  require(result.stack_slope >= 0.8 && result.stack_slope <= 1.3,
          "stack slope " + fmt(result.stack_slope) + " outside [0.8, 1.3]");
  return "attention " + fmt(result.attention_slope) + ", stack " +
         fmt(result.stack_slope);
}

std::string criterion_determinism() {
  const fs::path root = fs::path("acceptance_artifacts") / "determinism";
  fs::create_directories(root);

  RunConfig config;
  config.corpus_chars = 6144;
  config.epochs = 2;
  config.teacher_epochs = 2;
  config.validate();

  const std::string teacher_dir = (root / "teacher").string();
  cmd_pretrain_teacher(config, teacher_dir);
  const std::string teacher_ckpt = (fs::path(teacher_dir) / "teacher.ckpt").string();

  cmd_distill(config, teacher_ckpt, (root / "run_a").string());
  cmd_distill(config, teacher_ckpt, (root / "run_b").string());

  // metrics identical except wall_ms
  const auto a = read_metrics_file((root / "run_a" / "metrics.jsonl").string());
  const auto b = read_metrics_file((root / "run_b" / "metrics.jsonl").string());
  require(a.size() == b.size() && !a.empty(), "metrics files differ in length");
  for (size_t i = 0; i < a.size(); ++i) {
    MetricsRecord x = a[i];
    MetricsRecord y = b[i];
    x.wall_ms = 0.0;
    y.wall_ms = 0.0;
    require(x.to_json_line() == y.to_json_line(),
            "metrics line " + std::to_string(i) + " differs");
  }

  // checkpoints byte-identical
  auto slurp = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)),
                       std::istreambuf_iterator<char>());
  };
  const std::string bytes_a = slurp(root / "run_a" / "student.ckpt");
  const std::string bytes_b = slurp(root / "run_b" / "student.ckpt");
  require(!bytes_a.empty() && bytes_a == bytes_b, "student checkpoints differ");
  return std::to_string(a.size()) + " metric lines and " +
         std::to_string(bytes_a.size()) + " checkpoint bytes identical";
}

}  // namespace

int main() {
  struct Criterion {
    int number;
    std::string name;
    std::function<std::string()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient oracle suite", criterion_gradient_oracles},
      {2, "stabilizer suite", criterion_stabilizers},
      {3, "schedule suite", criterion_schedule},
      {4, "loss-identity suite", criterion_loss_identities},
      {5, "causality suite", criterion_causality},
      {6, "end-to-end desk-scale distillation", criterion_end_to_end},
      {7, "frobenius variant", criterion_frobenius_variant},
      {8, "scaling benchmark", criterion_scaling},
      {9, "determinism", criterion_determinism},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    std::string detail;
    bool pass = true;
    try {
      detail = c.run();
    } catch (const std::exception& e) {
      pass = false;
      detail = e.what();
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] criterion %d: %s (%s; %.1fs)\n", pass ? "PASS" : "FAIL", c.number,
                c.name.c_str(), detail.c_str(), seconds);
    std::fflush(stdout);
    if (!pass) ++failures;
  }
  if (failures > 0) {
    std::printf("%d criterion(s) failed\n", failures);
    return 1;
  }
  std::printf("all 9 criteria passed\n");
  return 0;
}
