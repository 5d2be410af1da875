#include "xdistill/teacher.hpp"

#include <cmath>
#include <limits>

#include "xdistill/data.hpp"
#include "xdistill/distill.hpp"
#include "xdistill/optimizer.hpp"

namespace xdistill {

TeacherLayerParams TeacherLayerParams::init(int64_t d, Rng& rng) {
  const double ws = 0.02;
  TeacherLayerParams p;
  p.ln1_gain = Tensor::full({d}, 1.0, true);
  p.ln1_bias = Tensor::zeros({d}, true);
  p.w_q = Tensor::randn({d, d}, rng, ws, true);
  p.w_k = Tensor::randn({d, d}, rng, ws, true);
  p.w_v = Tensor::randn({d, d}, rng, ws, true);
  p.w_o = Tensor::randn({d, d}, rng, ws, true);
  p.b_q = Tensor::zeros({d}, true);
  p.b_k = Tensor::zeros({d}, true);
  p.b_v = Tensor::zeros({d}, true);
  p.b_o = Tensor::zeros({d}, true);
  p.ln2_gain = Tensor::full({d}, 1.0, true);
  p.ln2_bias = Tensor::zeros({d}, true);
  p.w_ff1 = Tensor::randn({d, 4 * d}, rng, ws, true);
  p.b_ff1 = Tensor::zeros({4 * d}, true);
  p.w_ff2 = Tensor::randn({4 * d, d}, rng, ws, true);
  p.b_ff2 = Tensor::zeros({d}, true);
  return p;
}

std::vector<std::pair<std::string, Tensor>> TeacherLayerParams::named_params(
    const std::string& prefix) const {
  return {{prefix + "ln1_gain", ln1_gain}, {prefix + "ln1_bias", ln1_bias},
          {prefix + "w_q", w_q},           {prefix + "w_k", w_k},
          {prefix + "w_v", w_v},           {prefix + "w_o", w_o},
          {prefix + "b_q", b_q},           {prefix + "b_k", b_k},
          {prefix + "b_v", b_v},           {prefix + "b_o", b_o},
          {prefix + "ln2_gain", ln2_gain}, {prefix + "ln2_bias", ln2_bias},
          {prefix + "w_ff1", w_ff1},       {prefix + "b_ff1", b_ff1},
          {prefix + "w_ff2", w_ff2},       {prefix + "b_ff2", b_ff2}};
}

TeacherModel TeacherModel::init(int64_t vocab, int64_t d_model, int64_t n_layers,
                                int64_t n_heads, int64_t max_seq, uint64_t seed) {
  check(vocab >= 2, "teacher: vocabulary must have at least 2 symbols");
  check(n_layers >= 1 && n_heads >= 1 && d_model >= n_heads && max_seq >= 1,
        "teacher: invalid dimensions");
  Rng rng(seed);
  TeacherModel m;
  m.d_model = d_model;
  m.n_heads = n_heads;
  m.n_layers = n_layers;
  m.vocab = vocab;
  m.max_seq = max_seq;
  m.embedding = Tensor::randn({vocab, d_model}, rng, 0.02, true);
  m.positional = Tensor::randn({max_seq, d_model}, rng, 0.02, true);
  m.head = Tensor::randn({d_model, vocab}, rng, 0.02, true);
  for (int64_t l = 0; l < n_layers; ++l) {
    m.layers.push_back(TeacherLayerParams::init(d_model, rng));
  }
  return m;
}

std::vector<std::pair<std::string, Tensor>> TeacherModel::named_params() const {
  std::vector<std::pair<std::string, Tensor>> out = {
      {"embedding", embedding}, {"positional", positional}, {"head", head}};
  for (size_t l = 0; l < layers.size(); ++l) {
    const auto lp = layers[l].named_params("layer" + std::to_string(l) + ".");
    out.insert(out.end(), lp.begin(), lp.end());
  }
  return out;
}

void TeacherModel::set_requires_grad(bool v) {
  for (auto& [name, t] : named_params()) t.set_requires_grad(v);
}

std::vector<int64_t> head_offsets(int64_t d_model, int64_t n_heads) {
  check(n_heads >= 1 && n_heads <= d_model, "head_offsets: invalid head count");
  std::vector<int64_t> offsets(static_cast<size_t>(n_heads) + 1, 0);
  const int64_t base = d_model / n_heads;
  const int64_t extra = d_model % n_heads;
  for (int64_t h = 0; h < n_heads; ++h) {
    offsets[static_cast<size_t>(h) + 1] =
        offsets[static_cast<size_t>(h)] + base + (h < extra ? 1 : 0);
  }
  return offsets;
}

namespace {

// [S × S] additive mask: 0 on and below the diagonal, -inf above.
Tensor causal_mask(int64_t seq) {
  Tensor mask = Tensor::zeros({seq, seq});
  const double neg_inf = -std::numeric_limits<double>::infinity();
  for (int64_t i = 0; i < seq; ++i) {
    for (int64_t j = i + 1; j < seq; ++j) mask.data()[i * seq + j] = neg_inf;
  }
  return mask;
}

Tensor feed_forward(const TeacherLayerParams& p, const Tensor& x) {
  const Tensor hidden = max_with_scalar(add_bias(matmul(x, p.w_ff1), p.b_ff1), 0.0);
  return add_bias(matmul(hidden, p.w_ff2), p.b_ff2);
}

}  // namespace

Tensor causal_attention(const TeacherLayerParams& p, const Tensor& x, int64_t batch,
                        int64_t seq, int64_t n_heads) {
  check(x.rank() == 2 && x.dim(0) == batch * seq,
        "causal_attention: input must be [batch·seq × d_model]");
  const Tensor q_all = add_bias(matmul(x, p.w_q), p.b_q);
  const Tensor k_all = add_bias(matmul(x, p.w_k), p.b_k);
  const Tensor v_all = add_bias(matmul(x, p.w_v), p.b_v);
  const std::vector<int64_t> offsets = head_offsets(x.dim(1), n_heads);
  const Tensor mask = causal_mask(seq);

  std::vector<Tensor> sample_outputs;
  sample_outputs.reserve(static_cast<size_t>(batch));
  for (int64_t b = 0; b < batch; ++b) {
    const int64_t r0 = b * seq, r1 = (b + 1) * seq;
    std::vector<Tensor> head_outputs;
    head_outputs.reserve(static_cast<size_t>(n_heads));
    for (int64_t h = 0; h < n_heads; ++h) {
      const int64_t c0 = offsets[static_cast<size_t>(h)];
      const int64_t c1 = offsets[static_cast<size_t>(h) + 1];
      const Tensor q = slice_cols(slice_rows(q_all, r0, r1), c0, c1);
      const Tensor k = slice_cols(slice_rows(k_all, r0, r1), c0, c1);
      const Tensor v = slice_cols(slice_rows(v_all, r0, r1), c0, c1);
      const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(c1 - c0));
      const Tensor scores = add(scale(matmul(q, transpose(k)), inv_sqrt_dk), mask);
      head_outputs.push_back(matmul(softmax_rows(scores, 1.0), v));
    }
    sample_outputs.push_back(n_heads == 1 ? head_outputs[0] : concat_cols(head_outputs));
  }
  const Tensor merged = batch == 1 ? sample_outputs[0] : concat_rows(sample_outputs);
  return add_bias(matmul(merged, p.w_o), p.b_o);
}

TeacherOutput teacher_forward(const TeacherModel& m, const std::vector<int64_t>& tokens,
                              int64_t batch, int64_t seq, CaptureMode mode) {
  check(static_cast<int64_t>(tokens.size()) == batch * seq,
        "teacher_forward: token count does not match batch×seq");
  check(seq <= m.max_seq, "teacher_forward: sequence length " + std::to_string(seq) +
                              " exceeds positional table size " + std::to_string(m.max_seq));
  for (int64_t t : tokens) {
    check(t >= 0 && t < m.vocab,
          "teacher_forward: token id " + std::to_string(t) + " outside vocabulary of size " +
              std::to_string(m.vocab));
  }
  std::vector<int64_t> positions(tokens.size());
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t t = 0; t < seq; ++t) positions[static_cast<size_t>(b * seq + t)] = t;
  }
  Tensor x = add(gather_rows(m.embedding, tokens), gather_rows(m.positional, positions));

  TeacherOutput out;
  for (const TeacherLayerParams& layer : m.layers) {
    const Tensor attn = causal_attention(layer, layer_norm_rows(x, layer.ln1_gain, layer.ln1_bias),
                                         batch, seq, m.n_heads);
    x = add(x, attn);
    const Tensor after_attention = x;
    x = add(x, feed_forward(layer, layer_norm_rows(x, layer.ln2_gain, layer.ln2_bias)));
    out.layer_states.push_back(mode == CaptureMode::BlockOutput ? x : after_attention);
  }
  out.logits = matmul(x, m.head);
  return out;
}

Tensor layerwise_mean_hidden(const std::vector<Tensor>& capture) {
  check(!capture.empty(), "layerwise_mean_hidden: empty capture");
  Tensor acc = capture[0];
  for (size_t l = 1; l < capture.size(); ++l) {
    check(capture[l].shape() == capture[0].shape(),
          "layerwise_mean_hidden: layer state shapes differ");
    acc = add(acc, capture[l]);
  }
  return scale(acc, 1.0 / static_cast<double>(capture.size()));
}

TeacherPretrainResult teacher_pretrain(TeacherModel& m, const std::vector<int64_t>& tokens,
                                       const TeacherPretrainOptions& options) {
  check(options.epochs >= 0, "teacher_pretrain: negative epoch count");
  TeacherPretrainResult result;
  if (options.epochs == 0) return result;

  BatchStream stream(tokens, options.context, options.batch_size, options.seed);
  const int64_t steps_per_epoch = stream.batches_per_epoch();
  check(steps_per_epoch >= 1, "teacher_pretrain: corpus too small for one batch");
  const int64_t total_steps = options.epochs * steps_per_epoch;

  std::vector<Tensor> params;
  for (auto& [name, t] : m.named_params()) params.push_back(t);
  Adam adam(params, AdamOptions{options.lr});

  int64_t global_step = 0;
  for (int64_t epoch = 0; epoch < options.epochs; ++epoch) {
    for (const Batch& batch : stream.epoch(epoch)) {
      tape().reset();
      adam.zero_grad();
      const TeacherOutput fwd =
          teacher_forward(m, batch.inputs, options.batch_size, options.context);
      const Tensor loss = cross_entropy(fwd.logits, batch.targets);
      const double loss_value = loss.value();
      check_numeric(std::isfinite(loss_value),
                    "teacher_pretrain: non-finite loss at step " +
                        std::to_string(global_step));
      backward(loss);
      adam.step(cosine_warmup_lr(options.lr, global_step, total_steps,
                                 options.warmup_ratio));
      result.loss_trace.push_back(loss_value);
      ++global_step;
    }
  }
  tape().reset();

  // must have beaten the uniform predictor
  double tail = 0.0;
  const size_t tail_n = std::min<size_t>(result.loss_trace.size(), 20);
  for (size_t i = result.loss_trace.size() - tail_n; i < result.loss_trace.size(); ++i) {
    tail += result.loss_trace[i];
  }
  tail /= static_cast<double>(tail_n);
  const double uniform_ce = std::log(static_cast<double>(m.vocab));
  check_numeric(tail < uniform_ce,
                "teacher_pretrain: final CE " + std::to_string(tail) +
                    " is not below ln(V) = " + std::to_string(uniform_ce));
  return result;
}

}  // namespace xdistill
