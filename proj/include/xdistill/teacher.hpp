#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "xdistill/tensor.hpp"

namespace xdistill {

struct TeacherLayerParams {
  Tensor ln1_gain, ln1_bias;  // [D]
  Tensor w_q, w_k, w_v, w_o;  // [D × D]
  Tensor b_q, b_k, b_v, b_o;  // [D]
  Tensor ln2_gain, ln2_bias;  // [D]
  Tensor w_ff1, b_ff1;        // [D × 4D], [4D]
  Tensor w_ff2, b_ff2;        // [4D × D], [D]

  static TeacherLayerParams init(int64_t d, Rng& rng);
  std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const;
};

// Which per-layer hidden state the capture records: the full residual block
// output (after the feed-forward), or the state right after the attention
// residual.
enum class CaptureMode { BlockOutput, AttentionOutput };

// Pre-norm causal transformer with learned positional embeddings and a bare
// classification matrix (no final norm, no head bias).
struct TeacherModel {
  int64_t d_model = 0;
  int64_t n_heads = 0;
  int64_t n_layers = 0;
  int64_t vocab = 0;
  int64_t max_seq = 0;
  Tensor embedding;   // [V × D]
  Tensor positional;  // [S_max × D]
  Tensor head;        // [D × V]
  std::vector<TeacherLayerParams> layers;

  static TeacherModel init(int64_t vocab, int64_t d_model, int64_t n_layers,
                           int64_t n_heads, int64_t max_seq, uint64_t seed);
  std::vector<std::pair<std::string, Tensor>> named_params() const;
  void set_requires_grad(bool v);
};

// Head h covers columns [offsets[h], offsets[h+1]); widths differ by at most
// one so the head count need not divide d_model.
std::vector<int64_t> head_offsets(int64_t d_model, int64_t n_heads);

// Attention sublayer: Q/K/V projections, per-head causally masked softmax
// with per-head 1/√d_k scaling, concat, output projection. x is
// [B·S × D] sample-major.
Tensor causal_attention(const TeacherLayerParams& p, const Tensor& x, int64_t batch,
                        int64_t seq, int64_t n_heads);

struct TeacherOutput {
  Tensor logits;                     // [B·S × V]
  std::vector<Tensor> layer_states;  // L_t captures, each [B·S × D]
};

TeacherOutput teacher_forward(const TeacherModel& m, const std::vector<int64_t>& tokens,
                              int64_t batch, int64_t seq,
                              CaptureMode mode = CaptureMode::BlockOutput);

// Arithmetic mean over the layer axis of the stacked captures.
Tensor layerwise_mean_hidden(const std::vector<Tensor>& capture);

struct TeacherPretrainOptions {
  int64_t epochs = 6;
  int64_t batch_size = 8;
  int64_t context = 64;
  double lr = 1e-3;
  double warmup_ratio = 0.1;
  uint64_t seed = 42;
};

struct TeacherPretrainResult {
  std::vector<double> loss_trace;  // CE per optimizer step
};

// Next-token CE training from scratch. Throws NumericError on a non-finite
// loss, and when the run did any steps at all, on a final CE not better than
// the uniform predictor's ln(V).
TeacherPretrainResult teacher_pretrain(TeacherModel& m, const std::vector<int64_t>& tokens,
                                       const TeacherPretrainOptions& options);

}  // namespace xdistill
