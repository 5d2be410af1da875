#include <doctest.h>

#include <cmath>

#include "xdistill/data.hpp"
#include "xdistill/distill.hpp"
#include "xdistill/gradcheck.hpp"
#include "xdistill/teacher.hpp"

using namespace xdistill;

namespace {

Tensor identity_matrix(int64_t n) {
  Tensor t = Tensor::zeros({n, n});
  for (int64_t i = 0; i < n; ++i) t.data()[i * n + i] = 1.0;
  return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  }
  return worst;
}

}  // namespace

TEST_CASE("head_offsets split evenly with remainder up front") {
  const auto even = head_offsets(8, 2);
  CHECK(even == std::vector<int64_t>{0, 4, 8});
  const auto uneven = head_offsets(64, 6);
  CHECK(uneven.front() == 0);
  CHECK(uneven.back() == 64);
  for (size_t h = 0; h + 1 < uneven.size(); ++h) {
    const int64_t w = uneven[h + 1] - uneven[h];
    CHECK(w >= 10);
    CHECK(w <= 11);
  }
}

TEST_CASE("single-token attention passes the value straight through") {
  Rng rng(3);
  TeacherLayerParams p = TeacherLayerParams::init(6, rng);
  p.w_o = identity_matrix(6);
  p.b_o = Tensor::zeros({6});
  const Tensor x = Tensor::randn({1, 6}, rng, 1.0);
  const Tensor out = causal_attention(p, x, 1, 1, 2);
  const Tensor v = add_bias(matmul(x, p.w_v), p.b_v);
  CHECK(max_abs_diff(out, v) < 1e-12);
}

TEST_CASE("uniform scores give running means of the value rows") {
  const int64_t seq = 5, d = 6;
  Rng rng(5);
  TeacherLayerParams p = TeacherLayerParams::init(d, rng);
  p.w_q = Tensor::zeros({d, d});
  p.w_k = Tensor::zeros({d, d});
  p.b_q = Tensor::zeros({d});
  p.b_k = Tensor::zeros({d});
  p.w_o = identity_matrix(d);
  p.b_o = Tensor::zeros({d});
  const Tensor x = Tensor::randn({seq, d}, rng, 1.0);
  const Tensor v = add_bias(matmul(x, p.w_v), p.b_v);
  const Tensor out = causal_attention(p, x, 1, seq, 1);

  // brute-force oracle: softmax over the masked scores, all zeros here
  for (int64_t t = 0; t < seq; ++t) {
    for (int64_t j = 0; j < d; ++j) {
      double mean = 0.0;
      for (int64_t u = 0; u <= t; ++u) mean += v.data()[u * d + j];
      mean /= static_cast<double>(t + 1);
      CHECK(out.data()[t * d + j] == doctest::Approx(mean).epsilon(1e-12));
    }
  }
}

TEST_CASE("attention rows sum to one") {
  // all-ones values expose the softmax row sums directly
  const int64_t seq = 4, d = 6;
  Rng rng(7);
  TeacherLayerParams p = TeacherLayerParams::init(d, rng);
  p.w_v = Tensor::zeros({d, d});
  p.b_v = Tensor::full({d}, 1.0);
  p.w_o = identity_matrix(d);
  p.b_o = Tensor::zeros({d});
  const Tensor x = Tensor::randn({seq, d}, rng, 1e3);
  const Tensor out = causal_attention(p, x, 1, seq, 3);
  for (double vv : out.data()) CHECK(vv == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("teacher forward contract") {
  const int64_t vocab = 9, d = 8, layers = 3, heads = 2, seq = 4, batch = 2;
  const TeacherModel m = TeacherModel::init(vocab, d, layers, heads, seq, 11);
  std::vector<int64_t> tokens;
  Rng rng(13);
  for (int64_t i = 0; i < batch * seq; ++i) tokens.push_back(rng.below(vocab));

  const TeacherOutput out = teacher_forward(m, tokens, batch, seq);
  CHECK(out.layer_states.size() == static_cast<size_t>(layers));
  CHECK(out.logits.shape() == Shape{batch * seq, vocab});
  CHECK(out.logits.all_finite());
  for (const Tensor& s : out.layer_states) CHECK(s.shape() == Shape{batch * seq, d});

  const TeacherOutput again = teacher_forward(m, tokens, batch, seq);
  CHECK(out.logits.data() == again.logits.data());  // bitwise deterministic

  std::vector<int64_t> bad = tokens;
  bad[0] = vocab;
  CHECK_THROWS_AS(teacher_forward(m, bad, batch, seq), Error);
}

TEST_CASE("teacher causality at every depth") {
  const int64_t vocab = 7, d = 8, layers = 3, seq = 5;
  const TeacherModel m = TeacherModel::init(vocab, d, layers, 2, seq, 17);
  std::vector<int64_t> tokens = {1, 4, 2, 0, 3};
  const TeacherOutput base = teacher_forward(m, tokens, 1, seq);

  const int64_t t_perturb = 3;
  std::vector<int64_t> perturbed = tokens;
  perturbed[t_perturb] = 6;
  const TeacherOutput changed = teacher_forward(m, perturbed, 1, seq);

  for (int64_t t = 0; t < t_perturb; ++t) {
    for (int64_t c = 0; c < vocab; ++c) {
      CHECK(base.logits.data()[t * vocab + c] == changed.logits.data()[t * vocab + c]);
    }
    for (int64_t l = 0; l < layers; ++l) {
      for (int64_t c = 0; c < d; ++c) {
        CHECK(base.layer_states[l].data()[t * d + c] ==
              changed.layer_states[l].data()[t * d + c]);
      }
    }
  }
}

TEST_CASE("layerwise mean hidden") {
  Rng rng(19);
  const Tensor a = Tensor::randn({4, 3}, rng, 1.0);
  CHECK(max_abs_diff(layerwise_mean_hidden({a}), a) == 0.0);
  CHECK(max_abs_diff(layerwise_mean_hidden({a, a, a}), a) < 1e-12);
  const Tensor minus = scale(a, -1.0);
  const Tensor zero = layerwise_mean_hidden({a, minus});
  for (double v : zero.data()) CHECK(v == doctest::Approx(0.0));
  CHECK_THROWS_AS(layerwise_mean_hidden({}), Error);
}

TEST_CASE("teacher gradients on a tiny config") {
  const int64_t vocab = 7, d = 16, layers = 2, heads = 2, seq = 3;
  TeacherModel m = TeacherModel::init(vocab, d, layers, heads, seq, 23);
  std::vector<int64_t> tokens = {1, 5, 2};
  std::vector<int64_t> targets = {5, 2, 0};
  auto f = [&] {
    const TeacherOutput out = teacher_forward(m, tokens, 1, seq);
    return cross_entropy(out.logits, targets);
  };
  const FdReport report = finite_difference_check(f, m.named_params(), 1e-5, 1e-4);
  INFO("max rel err ", report.max_rel_err);
  CHECK(report.pass);
}

TEST_CASE("capture mode selects the attention-sublayer state") {
  const int64_t vocab = 7, d = 8, seq = 4;
  const TeacherModel m = TeacherModel::init(vocab, d, 2, 2, seq, 29);
  std::vector<int64_t> tokens = {1, 2, 3, 4};
  const TeacherOutput block = teacher_forward(m, tokens, 1, seq, CaptureMode::BlockOutput);
  const TeacherOutput attn =
      teacher_forward(m, tokens, 1, seq, CaptureMode::AttentionOutput);
  CHECK(max_abs_diff(block.logits, attn.logits) == 0.0);
  CHECK(max_abs_diff(block.layer_states[0], attn.layer_states[0]) > 0.0);
}

TEST_CASE("teacher pretraining") {
  std::string text;
  for (int i = 0; i < 400; ++i) text += "ab";
  const Vocab vocab = build_vocab(text);
  const auto tokens = vocab.encode(text);

  TeacherModel m = TeacherModel::init(vocab.size(), 16, 2, 2, 8, 31);
  const std::vector<double> before = m.embedding.data();

  TeacherPretrainOptions options;
  options.epochs = 0;
  CHECK(teacher_pretrain(m, tokens, options).loss_trace.empty());
  CHECK(m.embedding.data() == before);  // zero steps leave the model untouched

  options.epochs = 12;
  options.batch_size = 4;
  options.context = 8;
  options.lr = 3e-3;
  options.seed = 7;
  const TeacherPretrainResult result = teacher_pretrain(m, tokens, options);
  REQUIRE(result.loss_trace.size() > 100);

  // deterministic alternation is learnable to near-zero CE
  const size_t n = result.loss_trace.size();
  double tail = 0.0;
  for (size_t i = n - 10; i < n; ++i) tail += result.loss_trace[i];
  CHECK(tail / 10.0 < 0.1);

  // the smoothed trace never increases
  const size_t window = 50;
  REQUIRE(n > window);
  std::vector<double> smoothed;
  for (size_t i = 0; i + window <= n; ++i) {
    double acc = 0.0;
    for (size_t j = i; j < i + window; ++j) acc += result.loss_trace[j];
    smoothed.push_back(acc / static_cast<double>(window));
  }
  for (size_t i = 0; i + 1 < smoothed.size(); ++i) {
    CHECK(smoothed[i + 1] <= smoothed[i] + 1e-6);
  }
}
