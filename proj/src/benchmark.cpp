#include "xdistill/benchmark.hpp"

#include <chrono>
#include <cmath>

#include "xdistill/engine.hpp"
#include "xdistill/teacher.hpp"
#include "xdistill/xlstm.hpp"

namespace xdistill {

namespace {

template <typename Fn>
double best_of_ms(Fn&& fn, int reps) {
  double best = std::numeric_limits<double>::infinity();
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

double loglog_slope(const std::vector<int64_t>& xs, const std::vector<double>& ys) {
  const auto n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    mx += std::log(static_cast<double>(xs[i]));
    my += std::log(ys[i]);
  }
  mx /= n;
  my /= n;
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    const double dx = std::log(static_cast<double>(xs[i])) - mx;
    num += dx * (std::log(ys[i]) - my);
    den += dx * dx;
  }
  return num / den;
}

}  // namespace

BenchResult run_scaling_benchmark(const RunConfig& config,
                                  const std::vector<int64_t>& seq_lens) {
  check(seq_lens.size() >= 2, "benchmark: need at least two sequence lengths");
  NoGradGuard guard;
  Rng rng(static_cast<uint64_t>(config.seed));
  const int64_t d = config.d_model;
  const TeacherLayerParams attn = TeacherLayerParams::init(d, rng);
  const StudentConfig sc = student_config_from(config, /*vocab=*/2);
  const XlstmStack stack = build_stack(d, sc.n_blocks, sc.n_heads, sc.forget_gate,
                                       static_cast<uint64_t>(config.seed));

  BenchResult result;
  std::vector<double> attn_ms, stack_ms;
  for (int64_t seq : seq_lens) {
    check(seq >= 2, "benchmark: sequence lengths must be at least 2");
    const Tensor x = Tensor::randn({seq, d}, rng, 1.0);
    // warm up once, then take the best of three
    causal_attention(attn, x, 1, seq, config.teacher_heads);
    const double a = best_of_ms(
        [&] { causal_attention(attn, x, 1, seq, config.teacher_heads); }, 3);
    stack_forward(stack, x, 1, seq);
    const double s = best_of_ms([&] { stack_forward(stack, x, 1, seq); }, 3);
    attn_ms.push_back(a);
    stack_ms.push_back(s);
    result.rows.push_back({seq, a, s});
  }
  result.attention_slope = loglog_slope(seq_lens, attn_ms);
  result.stack_slope = loglog_slope(seq_lens, stack_ms);
  return result;
}

}  // namespace xdistill
