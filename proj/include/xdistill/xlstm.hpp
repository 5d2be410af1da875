#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "xdistill/tensor.hpp"

namespace xdistill {

enum class GateKind { Sigmoid, Exp };

// Batched step convention throughout: inputs and states are [B × D] with one
// row per sequence in the batch; weight matrices map row vectors, so a gate
// pre-activation is x·w + h·r + b.

struct VanillaLstmParams {
  Tensor w_z, w_i, w_f, w_o;  // [D_in × D_h]
  Tensor r_z, r_i, r_f, r_o;  // [D_h × D_h]
  Tensor b_z, b_i, b_f, b_o;  // [D_h]

  static VanillaLstmParams init(int64_t d_in, int64_t d_h, Rng& rng);
  std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const;
};

struct LstmState {
  Tensor c, h;  // [B × D_h]
  static LstmState zeros(int64_t batch, int64_t d_h);
};

LstmState vanilla_lstm_step(const VanillaLstmParams& p, const Tensor& x_t,
                            const LstmState& state);

// Scalar-memory cell with exponential input gating, a normalizer state and a
// running log-scale stabilizer. Memory mixing is block-diagonal: each of the
// H heads owns a [D/H × D/H] recurrent matrix per gate, so heads see their
// own previous hidden slice but not each other's.
struct SlstmParams {
  int64_t n_heads = 1;
  GateKind forget_gate = GateKind::Sigmoid;
  Tensor w_z, w_i, w_f, w_o;               // [D × D]
  std::vector<Tensor> r_z, r_i, r_f, r_o;  // per head [D/H × D/H]
  Tensor b_z, b_i, b_f, b_o;               // [D]

  static SlstmParams init(int64_t d, int64_t n_heads, GateKind forget_gate, Rng& rng);
  std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const;
};

struct SlstmState {
  Tensor c, n, h;  // [B × D]
  Tensor m;        // [B × D]; -inf before the first step so m_1 = i_pre_1
  static SlstmState initial(int64_t batch, int64_t d);
};

// Per-step gate internals, filled on request for inspection/testing.
struct SlstmGateTrace {
  Tensor i_pre, f_pre;      // gate pre-activations
  Tensor log_f;             // log of the forget gate value
  Tensor m_prev, m;         // stabilizer before/after the step
  Tensor i_stab, f_stab;    // stabilized gates i', f'
};

SlstmState slstm_step(const SlstmParams& p, const Tensor& x_t, const SlstmState& state,
                      SlstmGateTrace* trace = nullptr);

// Reference formulation without the stabilizer rewrite: i = exp(i_pre) and
// f = σ/exp(f_pre) enter the recurrences directly. Overflows for large gate
// pre-activations; exists to validate the stabilized path against.
SlstmState slstm_step_naive(const SlstmParams& p, const Tensor& x_t, const SlstmState& state);

// Matrix-memory cell. Gates i and f are scalar per head and sample; the key
// projection carries the 1/√d factor; the hidden-state denominator is
// max{|nᵀq|, 1} so outputs stay finite.
struct MlstmHeadParams {
  Tensor w_q, w_k, w_v, w_o;  // [D × d]
  Tensor b_q, b_k, b_v, b_o;  // [d]
  Tensor w_i, w_f;            // [D × 1]
  Tensor b_i, b_f;            // [1]
};

struct MlstmParams {
  int64_t n_heads = 1;
  int64_t head_dim = 0;
  GateKind forget_gate = GateKind::Sigmoid;
  std::vector<MlstmHeadParams> heads;

  static MlstmParams init(int64_t d, int64_t n_heads, GateKind forget_gate, Rng& rng);
  std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const;
};

struct MlstmState {
  std::vector<Tensor> cmat;  // per head [B × d·d], flattened matrix memory
  std::vector<Tensor> norm;  // per head [B × d]
  static MlstmState initial(int64_t batch, int64_t head_dim, int64_t n_heads);
};

// Returns the new state and the concatenated hidden state [B × D].
std::pair<MlstmState, Tensor> mlstm_step(const MlstmParams& p, const Tensor& x_t,
                                         const MlstmState& state);

enum class BlockKind { Slstm, Mlstm };

// Residual block: layer norm -> cell unrolled over time -> output projection
// -> add input.
struct XlstmBlock {
  BlockKind kind = BlockKind::Slstm;
  Tensor ln_gain, ln_bias;  // [D]
  SlstmParams slstm;
  MlstmParams mlstm;
  Tensor w_out;  // [D × D]
  Tensor b_out;  // [D]
};

struct XlstmStack {
  int64_t d_model = 0;
  int64_t n_heads = 0;
  GateKind forget_gate = GateKind::Sigmoid;
  std::vector<XlstmBlock> blocks;

  std::vector<std::pair<std::string, Tensor>> named_params() const;
  int64_t param_count() const;
  void set_requires_grad(bool v);
};

// Block kinds alternate sLSTM, mLSTM, ... starting with sLSTM. Same seed
// gives bitwise-identical parameters.
XlstmStack build_stack(int64_t d_model, int64_t n_blocks, int64_t n_heads,
                       GateKind forget_gate, uint64_t seed);

// x: [B·S × D] with row b·S + t holding sample b at time t. Recurrent state
// is reset at the sequence start; returns the final block's output h_s in the
// same layout.
Tensor stack_forward(const XlstmStack& stack, const Tensor& x, int64_t batch, int64_t seq);

}  // namespace xdistill
