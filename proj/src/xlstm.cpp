#include "xdistill/xlstm.hpp"

#include <cmath>
#include <limits>

namespace xdistill {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Pre-activation x·w + h·r + b with a full recurrent matrix.
Tensor gate_pre(const Tensor& x, const Tensor& w, const Tensor& h, const Tensor& r,
                const Tensor& b) {
  return add_bias(add(matmul(x, w), matmul(h, r)), b);
}

// Block-diagonal recurrent contribution: head k of h multiplied by r[k].
Tensor block_diag_matmul(const Tensor& h, const std::vector<Tensor>& r_heads) {
  const auto n_heads = static_cast<int64_t>(r_heads.size());
  if (n_heads == 1) return matmul(h, r_heads[0]);
  const int64_t d_h = r_heads[0].dim(0);
  std::vector<Tensor> parts;
  parts.reserve(static_cast<size_t>(n_heads));
  for (int64_t k = 0; k < n_heads; ++k) {
    parts.push_back(matmul(slice_cols(h, k * d_h, (k + 1) * d_h), r_heads[static_cast<size_t>(k)]));
  }
  return concat_cols(parts);
}

Tensor forget_log(GateKind kind, const Tensor& f_pre) {
  return kind == GateKind::Exp ? f_pre : log_sigmoid(f_pre);
}

Tensor forget_gate_value(GateKind kind, const Tensor& f_pre) {
  return kind == GateKind::Exp ? exp(f_pre) : sigmoid(f_pre);
}

}  // namespace

// ---- vanilla LSTM ----

VanillaLstmParams VanillaLstmParams::init(int64_t d_in, int64_t d_h, Rng& rng) {
  const double ws = 1.0 / std::sqrt(static_cast<double>(d_in));
  const double rs = 1.0 / std::sqrt(static_cast<double>(d_h));
  VanillaLstmParams p;
  p.w_z = Tensor::randn({d_in, d_h}, rng, ws, true);
  p.w_i = Tensor::randn({d_in, d_h}, rng, ws, true);
  p.w_f = Tensor::randn({d_in, d_h}, rng, ws, true);
  p.w_o = Tensor::randn({d_in, d_h}, rng, ws, true);
  p.r_z = Tensor::randn({d_h, d_h}, rng, rs, true);
  p.r_i = Tensor::randn({d_h, d_h}, rng, rs, true);
  p.r_f = Tensor::randn({d_h, d_h}, rng, rs, true);
  p.r_o = Tensor::randn({d_h, d_h}, rng, rs, true);
  p.b_z = Tensor::zeros({d_h}, true);
  p.b_i = Tensor::zeros({d_h}, true);
  p.b_f = Tensor::full({d_h}, 1.0, true);
  p.b_o = Tensor::zeros({d_h}, true);
  return p;
}

std::vector<std::pair<std::string, Tensor>> VanillaLstmParams::named_params(
    const std::string& prefix) const {
  return {{prefix + "w_z", w_z}, {prefix + "w_i", w_i}, {prefix + "w_f", w_f},
          {prefix + "w_o", w_o}, {prefix + "r_z", r_z}, {prefix + "r_i", r_i},
          {prefix + "r_f", r_f}, {prefix + "r_o", r_o}, {prefix + "b_z", b_z},
          {prefix + "b_i", b_i}, {prefix + "b_f", b_f}, {prefix + "b_o", b_o}};
}

LstmState LstmState::zeros(int64_t batch, int64_t d_h) {
  return {Tensor::zeros({batch, d_h}), Tensor::zeros({batch, d_h})};
}

LstmState vanilla_lstm_step(const VanillaLstmParams& p, const Tensor& x_t,
                            const LstmState& state) {
  const Tensor z = tanh(gate_pre(x_t, p.w_z, state.h, p.r_z, p.b_z));
  const Tensor i = sigmoid(gate_pre(x_t, p.w_i, state.h, p.r_i, p.b_i));
  const Tensor f = sigmoid(gate_pre(x_t, p.w_f, state.h, p.r_f, p.b_f));
  const Tensor o = sigmoid(gate_pre(x_t, p.w_o, state.h, p.r_o, p.b_o));
  const Tensor c = add(mul(f, state.c), mul(i, z));
  const Tensor h = mul(o, tanh(c));
  return {c, h};
}

// ---- sLSTM ----

SlstmParams SlstmParams::init(int64_t d, int64_t n_heads, GateKind forget_gate, Rng& rng) {
  check(d >= 1 && n_heads >= 1 && d % n_heads == 0,
        "slstm: hidden dim " + std::to_string(d) + " not divisible by " +
            std::to_string(n_heads) + " heads");
  const double ws = 1.0 / std::sqrt(static_cast<double>(d));
  const int64_t d_h = d / n_heads;
  const double rs = 1.0 / std::sqrt(static_cast<double>(d_h));
  SlstmParams p;
  p.n_heads = n_heads;
  p.forget_gate = forget_gate;
  p.w_z = Tensor::randn({d, d}, rng, ws, true);
  p.w_i = Tensor::randn({d, d}, rng, ws, true);
  p.w_f = Tensor::randn({d, d}, rng, ws, true);
  p.w_o = Tensor::randn({d, d}, rng, ws, true);
  for (int64_t k = 0; k < n_heads; ++k) {
    p.r_z.push_back(Tensor::randn({d_h, d_h}, rng, rs, true));
    p.r_i.push_back(Tensor::randn({d_h, d_h}, rng, rs, true));
    p.r_f.push_back(Tensor::randn({d_h, d_h}, rng, rs, true));
    p.r_o.push_back(Tensor::randn({d_h, d_h}, rng, rs, true));
  }
  p.b_z = Tensor::zeros({d}, true);
  p.b_i = Tensor::zeros({d}, true);
  p.b_f = Tensor::full({d}, 1.0, true);
  p.b_o = Tensor::zeros({d}, true);
  return p;
}

std::vector<std::pair<std::string, Tensor>> SlstmParams::named_params(
    const std::string& prefix) const {
  std::vector<std::pair<std::string, Tensor>> out = {
      {prefix + "w_z", w_z}, {prefix + "w_i", w_i}, {prefix + "w_f", w_f},
      {prefix + "w_o", w_o}, {prefix + "b_z", b_z}, {prefix + "b_i", b_i},
      {prefix + "b_f", b_f}, {prefix + "b_o", b_o}};
  for (size_t k = 0; k < r_z.size(); ++k) {
    const std::string h = std::to_string(k);
    out.emplace_back(prefix + "r_z." + h, r_z[k]);
    out.emplace_back(prefix + "r_i." + h, r_i[k]);
    out.emplace_back(prefix + "r_f." + h, r_f[k]);
    out.emplace_back(prefix + "r_o." + h, r_o[k]);
  }
  return out;
}

SlstmState SlstmState::initial(int64_t batch, int64_t d) {
  return {Tensor::zeros({batch, d}), Tensor::zeros({batch, d}),
          Tensor::zeros({batch, d}), Tensor::full({batch, d}, kNegInf)};
}

namespace {

struct SlstmPre {
  Tensor z, o, i_pre, f_pre;
};

SlstmPre slstm_preactivations(const SlstmParams& p, const Tensor& x_t, const Tensor& h_prev) {
  SlstmPre pre;
  pre.z = tanh(add_bias(add(matmul(x_t, p.w_z), block_diag_matmul(h_prev, p.r_z)), p.b_z));
  pre.o = sigmoid(add_bias(add(matmul(x_t, p.w_o), block_diag_matmul(h_prev, p.r_o)), p.b_o));
  pre.i_pre = add_bias(add(matmul(x_t, p.w_i), block_diag_matmul(h_prev, p.r_i)), p.b_i);
  pre.f_pre = add_bias(add(matmul(x_t, p.w_f), block_diag_matmul(h_prev, p.r_f)), p.b_f);
  return pre;
}

Tensor guarded_ratio(const Tensor& c, const Tensor& n) {
  for (double v : n.data()) {
    check_numeric(v != 0.0, "slstm: normalizer state is zero at division");
  }
  return div(c, n);
}

}  // namespace

SlstmState slstm_step(const SlstmParams& p, const Tensor& x_t, const SlstmState& state,
                      SlstmGateTrace* trace) {
  const SlstmPre pre = slstm_preactivations(p, x_t, state.h);
  // Stabilized gates: m_t = max(log f + m_{t-1}, i_pre); i' = exp(i_pre - m_t),
  // f' = exp(log f + m_{t-1} - m_t). c and n carry a common exp(-m_t) factor
  // that cancels in c/n, so hidden states match the naive formulation.
  const Tensor log_f = forget_log(p.forget_gate, pre.f_pre);
  const Tensor shifted_f = add(log_f, state.m);
  const Tensor m_new = maximum(shifted_f, pre.i_pre);
  const Tensor i_s = exp(sub(pre.i_pre, m_new));
  const Tensor f_s = exp(sub(shifted_f, m_new));
  const Tensor c_new = add(mul(f_s, state.c), mul(i_s, pre.z));
  const Tensor n_new = add(mul(f_s, state.n), i_s);
  const Tensor h_new = mul(pre.o, guarded_ratio(c_new, n_new));
  if (trace) {
    trace->i_pre = pre.i_pre;
    trace->f_pre = pre.f_pre;
    trace->log_f = log_f;
    trace->m_prev = state.m;
    trace->m = m_new;
    trace->i_stab = i_s;
    trace->f_stab = f_s;
  }
  return {c_new, n_new, h_new, m_new};
}

SlstmState slstm_step_naive(const SlstmParams& p, const Tensor& x_t, const SlstmState& state) {
  const SlstmPre pre = slstm_preactivations(p, x_t, state.h);
  const Tensor i = exp(pre.i_pre);
  const Tensor f = forget_gate_value(p.forget_gate, pre.f_pre);
  const Tensor c_new = add(mul(f, state.c), mul(i, pre.z));
  const Tensor n_new = add(mul(f, state.n), i);
  const Tensor h_new = mul(pre.o, guarded_ratio(c_new, n_new));
  return {c_new, n_new, h_new, state.m};
}

// ---- mLSTM ----

MlstmParams MlstmParams::init(int64_t d, int64_t n_heads, GateKind forget_gate, Rng& rng) {
  check(d >= 1 && n_heads >= 1 && d % n_heads == 0,
        "mlstm: hidden dim " + std::to_string(d) + " not divisible by " +
            std::to_string(n_heads) + " heads");
  const double ws = 1.0 / std::sqrt(static_cast<double>(d));
  MlstmParams p;
  p.n_heads = n_heads;
  p.head_dim = d / n_heads;
  p.forget_gate = forget_gate;
  for (int64_t k = 0; k < n_heads; ++k) {
    MlstmHeadParams h;
    h.w_q = Tensor::randn({d, p.head_dim}, rng, ws, true);
    h.w_k = Tensor::randn({d, p.head_dim}, rng, ws, true);
    h.w_v = Tensor::randn({d, p.head_dim}, rng, ws, true);
    h.w_o = Tensor::randn({d, p.head_dim}, rng, ws, true);
    h.b_q = Tensor::zeros({p.head_dim}, true);
    h.b_k = Tensor::zeros({p.head_dim}, true);
    h.b_v = Tensor::zeros({p.head_dim}, true);
    h.b_o = Tensor::zeros({p.head_dim}, true);
    h.w_i = Tensor::randn({d, 1}, rng, ws, true);
    h.w_f = Tensor::randn({d, 1}, rng, ws, true);
    h.b_i = Tensor::zeros({1}, true);
    h.b_f = Tensor::full({1}, 1.0, true);
    p.heads.push_back(std::move(h));
  }
  return p;
}

std::vector<std::pair<std::string, Tensor>> MlstmParams::named_params(
    const std::string& prefix) const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (size_t k = 0; k < heads.size(); ++k) {
    const std::string hp = prefix + "head" + std::to_string(k) + ".";
    const MlstmHeadParams& h = heads[k];
    out.insert(out.end(), {{hp + "w_q", h.w_q}, {hp + "w_k", h.w_k}, {hp + "w_v", h.w_v},
                           {hp + "w_o", h.w_o}, {hp + "b_q", h.b_q}, {hp + "b_k", h.b_k},
                           {hp + "b_v", h.b_v}, {hp + "b_o", h.b_o}, {hp + "w_i", h.w_i},
                           {hp + "w_f", h.w_f}, {hp + "b_i", h.b_i}, {hp + "b_f", h.b_f}});
  }
  return out;
}

MlstmState MlstmState::initial(int64_t batch, int64_t head_dim, int64_t n_heads) {
  MlstmState s;
  for (int64_t k = 0; k < n_heads; ++k) {
    s.cmat.push_back(Tensor::zeros({batch, head_dim * head_dim}));
    s.norm.push_back(Tensor::zeros({batch, head_dim}));
  }
  return s;
}

std::pair<MlstmState, Tensor> mlstm_step(const MlstmParams& p, const Tensor& x_t,
                                         const MlstmState& state) {
  check(static_cast<int64_t>(state.cmat.size()) == p.n_heads,
        "mlstm: state head count mismatch");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(p.head_dim));
  MlstmState next;
  std::vector<Tensor> hidden_parts;
  for (int64_t k = 0; k < p.n_heads; ++k) {
    const MlstmHeadParams& hp = p.heads[static_cast<size_t>(k)];
    const Tensor q = add_bias(matmul(x_t, hp.w_q), hp.b_q);
    const Tensor key = add_bias(scale(matmul(x_t, hp.w_k), inv_sqrt_d), hp.b_k);
    const Tensor v = add_bias(matmul(x_t, hp.w_v), hp.b_v);
    const Tensor i = exp(add_bias(matmul(x_t, hp.w_i), hp.b_i));  // [B × 1]
    const Tensor f = forget_gate_value(
        p.forget_gate, add_bias(matmul(x_t, hp.w_f), hp.b_f));    // [B × 1]
    const Tensor o = sigmoid(add_bias(matmul(x_t, hp.w_o), hp.b_o));

    const Tensor c_new = add(mul_rows(state.cmat[static_cast<size_t>(k)], f),
                             mul_rows(row_outer(v, key), i));
    const Tensor n_new = add(mul_rows(state.norm[static_cast<size_t>(k)], f),
                             mul_rows(key, i));
    const Tensor denom = max_with_scalar(abs(row_dot(n_new, q)), 1.0);  // [B]
    const Tensor h_tilde = div_rows(row_matvec(c_new, q), denom);
    hidden_parts.push_back(mul(o, h_tilde));
    next.cmat.push_back(c_new);
    next.norm.push_back(n_new);
  }
  Tensor h = p.n_heads == 1 ? hidden_parts[0] : concat_cols(hidden_parts);
  return {std::move(next), std::move(h)};
}

// ---- stack ----

namespace {

XlstmBlock build_block(BlockKind kind, int64_t d, int64_t n_heads, GateKind forget_gate,
                       Rng& rng) {
  XlstmBlock b;
  b.kind = kind;
  b.ln_gain = Tensor::full({d}, 1.0, true);
  b.ln_bias = Tensor::zeros({d}, true);
  if (kind == BlockKind::Slstm) {
    b.slstm = SlstmParams::init(d, n_heads, forget_gate, rng);
  } else {
    b.mlstm = MlstmParams::init(d, n_heads, forget_gate, rng);
  }
  // small output projection keeps the residual stream near the input at init
  b.w_out = Tensor::randn({d, d}, rng, 0.02, true);
  b.b_out = Tensor::zeros({d}, true);
  return b;
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> XlstmStack::named_params() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (size_t j = 0; j < blocks.size(); ++j) {
    const std::string prefix = "block" + std::to_string(j) + ".";
    const XlstmBlock& b = blocks[j];
    out.emplace_back(prefix + "ln_gain", b.ln_gain);
    out.emplace_back(prefix + "ln_bias", b.ln_bias);
    const auto cell = b.kind == BlockKind::Slstm
                          ? b.slstm.named_params(prefix + "slstm.")
                          : b.mlstm.named_params(prefix + "mlstm.");
    out.insert(out.end(), cell.begin(), cell.end());
    out.emplace_back(prefix + "w_out", b.w_out);
    out.emplace_back(prefix + "b_out", b.b_out);
  }
  return out;
}

int64_t XlstmStack::param_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : named_params()) n += t.numel();
  return n;
}

void XlstmStack::set_requires_grad(bool v) {
  for (auto& [name, t] : named_params()) t.set_requires_grad(v);
}

XlstmStack build_stack(int64_t d_model, int64_t n_blocks, int64_t n_heads,
                       GateKind forget_gate, uint64_t seed) {
  check(n_blocks >= 1, "build_stack: need at least one block");
  check(n_heads >= 1, "build_stack: need at least one head");
  check(d_model % n_heads == 0,
        "build_stack: d_model " + std::to_string(d_model) + " not divisible by " +
            std::to_string(n_heads) + " heads");
  Rng rng(seed);
  XlstmStack stack;
  stack.d_model = d_model;
  stack.n_heads = n_heads;
  stack.forget_gate = forget_gate;
  for (int64_t j = 0; j < n_blocks; ++j) {
    const BlockKind kind = j % 2 == 0 ? BlockKind::Slstm : BlockKind::Mlstm;
    stack.blocks.push_back(build_block(kind, d_model, n_heads, forget_gate, rng));
  }
  return stack;
}

Tensor stack_forward(const XlstmStack& stack, const Tensor& x, int64_t batch, int64_t seq) {
  check(x.rank() == 2 && x.dim(0) == batch * seq && x.dim(1) == stack.d_model,
        "stack_forward: input must be [batch·seq × d_model], got " + shape_str(x.shape()));
  Tensor current = x;
  // row permutation from time-major [S·B × D] back to sample-major [B·S × D]
  std::vector<int64_t> to_sample_major(static_cast<size_t>(batch * seq));
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t t = 0; t < seq; ++t) to_sample_major[b * seq + t] = t * batch + b;
  }
  for (const XlstmBlock& block : stack.blocks) {
    const Tensor normed = layer_norm_rows(current, block.ln_gain, block.ln_bias);
    std::vector<Tensor> hidden_steps;
    hidden_steps.reserve(static_cast<size_t>(seq));
    if (block.kind == BlockKind::Slstm) {
      SlstmState state = SlstmState::initial(batch, stack.d_model);
      for (int64_t t = 0; t < seq; ++t) {
        std::vector<int64_t> idx(static_cast<size_t>(batch));
        for (int64_t b = 0; b < batch; ++b) idx[b] = b * seq + t;
        state = slstm_step(block.slstm, gather_rows(normed, idx), state);
        hidden_steps.push_back(state.h);
      }
    } else {
      MlstmState state = MlstmState::initial(batch, block.mlstm.head_dim,
                                             block.mlstm.n_heads);
      for (int64_t t = 0; t < seq; ++t) {
        std::vector<int64_t> idx(static_cast<size_t>(batch));
        for (int64_t b = 0; b < batch; ++b) idx[b] = b * seq + t;
        auto [next, h] = mlstm_step(block.mlstm, gather_rows(normed, idx), state);
        state = std::move(next);
        hidden_steps.push_back(std::move(h));
      }
    }
    const Tensor time_major = seq == 1 ? hidden_steps[0] : concat_rows(hidden_steps);
    const Tensor cell_out = gather_rows(time_major, to_sample_major);
    current = add(current, add_bias(matmul(cell_out, block.w_out), block.b_out));
  }
  return current;
}

}  // namespace xdistill
