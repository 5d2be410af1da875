#include "xdistill/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace xdistill {

int64_t numel_of(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
  check(!shape.empty(), "tensor shape must have at least one dimension");
  for (int64_t d : shape) {
    check(d > 0, "tensor dimensions must be positive, got " + shape_str(shape));
  }
}

std::shared_ptr<TensorImpl> make_impl(const Shape& shape, bool requires_grad) {
  validate_shape(shape);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
  impl->requires_grad = requires_grad;
  return impl;
}

void ensure_grad(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
}

int grad_disabled_depth = 0;

}  // namespace

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return Tensor(make_impl(shape, requires_grad));
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  Tensor t(make_impl(shape, requires_grad));
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

Tensor Tensor::from_values(const Shape& shape, std::vector<double> values,
                           bool requires_grad) {
  validate_shape(shape);
  check(numel_of(shape) == static_cast<int64_t>(values.size()),
        "value count " + std::to_string(values.size()) + " does not match shape " +
            shape_str(shape));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return full({1}, value); }

Tensor Tensor::randn(const Shape& shape, Rng& rng, double stddev, bool requires_grad) {
  Tensor t(make_impl(shape, requires_grad));
  for (double& v : t.data()) v = rng.normal() * stddev;
  return t;
}

double Tensor::value() const {
  check(numel() == 1, "value() requires a one-element tensor, got " + shape_str(shape()));
  return impl_->data[0];
}

const std::vector<double>& Tensor::grad() const {
  check(has_grad(), "tensor has no gradient; run backward() first");
  return impl_->grad;
}

bool Tensor::all_finite() const {
  for (double v : impl_->data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// ---- tape ----

void GradTape::record(std::function<void()> backward_fn) {
  nodes_.push_back(std::move(backward_fn));
}

void GradTape::backward(const Tensor& loss) {
  check(loss.defined() && loss.numel() == 1,
        "backward requires a scalar loss");
  check(!nodes_.empty(), "backward on an empty tape; no operations were recorded");
  check(!consumed_, "tape already consumed by backward; reset before re-recording");
  check(loss.requires_grad(), "loss does not require grad; nothing to differentiate");
  ensure_grad(*loss.impl());
  loss.impl()->grad[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  consumed_ = true;
}

void GradTape::reset() {
  nodes_.clear();
  consumed_ = false;
}

GradTape& tape() {
  static GradTape t;
  return t;
}

bool grad_enabled() { return grad_disabled_depth == 0; }

NoGradGuard::NoGradGuard() { ++grad_disabled_depth; }
NoGradGuard::~NoGradGuard() { --grad_disabled_depth; }

void backward(const Tensor& loss) { tape().backward(loss); }

// ---- kernels ----

namespace {

using ImplPtr = std::shared_ptr<TensorImpl>;

bool track(const Tensor& a) { return grad_enabled() && a.requires_grad(); }
bool track(const Tensor& a, const Tensor& b) {
  return grad_enabled() && (a.requires_grad() || b.requires_grad());
}

bool has_out_grad(const ImplPtr& out) { return !out->grad.empty(); }

// C[m×n] += A[m×k] · B[k×n]
void mm_acc(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m×n] += A[m×k] · B[n×k]ᵀ
void mm_nt_acc(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C[k×n] += A[m×k]ᵀ · B[m×n]
void mm_tn_acc(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

enum class BinOp { Add, Sub, Mul, Div };

double apply_bin(BinOp op, double a, double b) {
  switch (op) {
    case BinOp::Add: return a + b;
    case BinOp::Sub: return a - b;
    case BinOp::Mul: return a * b;
    case BinOp::Div: return a / b;
  }
  return 0.0;
}

// Same-shape elementwise with one-element broadcast on either side.
Tensor binary_op(BinOp op, const char* name, const Tensor& a, const Tensor& b) {
  const bool a_scalar = a.numel() == 1;
  const bool b_scalar = b.numel() == 1;
  check(a_scalar || b_scalar || a.shape() == b.shape(),
        std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
            shape_str(b.shape()));
  const Shape& out_shape = a_scalar && !b_scalar ? b.shape() : a.shape();
  if (op == BinOp::Div) {
    for (double v : b.data()) {
      check_numeric(v != 0.0, "div: zero denominator");
    }
  }
  Tensor out = Tensor::zeros(out_shape);
  const int64_t n = out.numel();
  const auto& ad = a.data();
  const auto& bd = b.data();
  auto& od = out.data();
  for (int64_t i = 0; i < n; ++i) {
    od[i] = apply_bin(op, ad[a_scalar ? 0 : i], bd[b_scalar ? 0 : i]);
  }
  if (track(a, b)) {
    out.set_requires_grad(true);
    ImplPtr ai = a.impl(), bi = b.impl(), oi = out.impl();
    tape().record([op, ai, bi, oi, a_scalar, b_scalar, n] {
      if (!has_out_grad(oi)) return;
      const auto& g = oi->grad;
      if (ai->requires_grad) {
        ensure_grad(*ai);
        for (int64_t i = 0; i < n; ++i) {
          const double bv = bi->data[b_scalar ? 0 : static_cast<size_t>(i)];
          double d = 0.0;
          switch (op) {
            case BinOp::Add:
            case BinOp::Sub: d = g[i]; break;
            case BinOp::Mul: d = g[i] * bv; break;
            case BinOp::Div: d = g[i] / bv; break;
          }
          ai->grad[a_scalar ? 0 : static_cast<size_t>(i)] += d;
        }
      }
      if (bi->requires_grad) {
        ensure_grad(*bi);
        for (int64_t i = 0; i < n; ++i) {
          const double av = ai->data[a_scalar ? 0 : static_cast<size_t>(i)];
          const double bv = bi->data[b_scalar ? 0 : static_cast<size_t>(i)];
          double d = 0.0;
          switch (op) {
            case BinOp::Add: d = g[i]; break;
            case BinOp::Sub: d = -g[i]; break;
            case BinOp::Mul: d = g[i] * av; break;
            case BinOp::Div: d = -g[i] * av / (bv * bv); break;
          }
          bi->grad[b_scalar ? 0 : static_cast<size_t>(i)] += d;
        }
      }
    });
  }
  return out;
}

// Unary elementwise: fwd(x) and dfdx expressed from (x, y).
template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& x, Fwd fwd, Bwd dfdx) {
  Tensor out = Tensor::zeros(x.shape());
  const int64_t n = x.numel();
  const auto& xd = x.data();
  auto& od = out.data();
  for (int64_t i = 0; i < n; ++i) od[i] = fwd(xd[i]);
  if (track(x)) {
    out.set_requires_grad(true);
    ImplPtr xi = x.impl(), oi = out.impl();
    tape().record([xi, oi, dfdx, n] {
      if (!has_out_grad(oi)) return;
      ensure_grad(*xi);
      for (int64_t i = 0; i < n; ++i) {
        xi->grad[i] += oi->grad[i] * dfdx(xi->data[i], oi->data[i]);
      }
    });
  }
  return out;
}

void check_rank2(const Tensor& x, const char* name) {
  check(x.rank() == 2, std::string(name) + ": expected rank-2 tensor, got " +
                           shape_str(x.shape()));
}

}  // namespace

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(BinOp::Add, "add", a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(BinOp::Sub, "sub", a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(BinOp::Mul, "mul", a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_op(BinOp::Div, "div", a, b); }

Tensor add_scalar(const Tensor& x, double c) {
  return unary_op(
      x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor scale(const Tensor& x, double c) {
  return unary_op(
      x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor exp(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    check_numeric(v > 0.0, "log: non-positive input " + std::to_string(v));
  }
  return unary_op(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x,
      [](double v) {
        return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                        : std::exp(v) / (1.0 + std::exp(v));
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor log_sigmoid(const Tensor& x) {
  // log σ(x) = -log1p(exp(-x)), computed from the non-overflowing side;
  // derivative is σ(-x).
  return unary_op(
      x,
      [](double v) {
        return v >= 0.0 ? -std::log1p(std::exp(-v)) : v - std::log1p(std::exp(v));
      },
      [](double v, double) {
        return v >= 0.0 ? std::exp(-v) / (1.0 + std::exp(-v)) : 1.0 / (1.0 + std::exp(v));
      });
}

Tensor tanh(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor abs(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor max_with_scalar(const Tensor& x, double c) {
  return unary_op(
      x, [c](double v) { return std::max(v, c); },
      [c](double v, double) { return v > c ? 1.0 : 0.0; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "maximum: shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = std::max(a.data()[i], b.data()[i]);
  if (track(a, b)) {
    out.set_requires_grad(true);
    ImplPtr ai = a.impl(), bi = b.impl(), oi = out.impl();
    tape().record([ai, bi, oi, n] {
      if (!has_out_grad(oi)) return;
      // ties route to the first operand
      if (ai->requires_grad) {
        ensure_grad(*ai);
        for (int64_t i = 0; i < n; ++i) {
          if (ai->data[i] >= bi->data[i]) ai->grad[i] += oi->grad[i];
        }
      }
      if (bi->requires_grad) {
        ensure_grad(*bi);
        for (int64_t i = 0; i < n; ++i) {
          if (bi->data[i] > ai->data[i]) bi->grad[i] += oi->grad[i];
        }
      }
    });
  }
  return out;
}

// ---- matrix ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank2(a, "matmul");
  check_rank2(b, "matmul");
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  check(b.dim(0) == k, "matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                           " vs " + shape_str(b.shape()));
  Tensor out = Tensor::zeros({m, n});
  mm_acc(out.data().data(), a.data().data(), b.data().data(), m, k, n);
  if (track(a, b)) {
    out.set_requires_grad(true);
    ImplPtr ai = a.impl(), bi = b.impl(), oi = out.impl();
    tape().record([ai, bi, oi, m, k, n] {
      if (!has_out_grad(oi)) return;
      if (ai->requires_grad) {
        ensure_grad(*ai);
        mm_nt_acc(ai->grad.data(), oi->grad.data(), bi->data.data(), m, n, k);
      }
      if (bi->requires_grad) {
        ensure_grad(*bi);
        mm_tn_acc(bi->grad.data(), ai->data.data(), oi->grad.data(), m, k, n);
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  check_rank2(x, "transpose");
  const int64_t r = x.dim(0), c = x.dim(1);
  Tensor out = Tensor::zeros({c, r});
  for (int64_t i = 0; i < r; ++i) {
    for (int64_t j = 0; j < c; ++j) out.data()[j * r + i] = x.data()[i * c + j];
  }
  if (track(x)) {
    out.set_requires_grad(true);
    ImplPtr xi = x.impl(), oi = out.impl();
    tape().record([xi, oi, r, c] {
      if (!has_out_grad(oi)) return;
      ensure_grad(*xi);
      for (int64_t i = 0; i < r; ++i) {
        for (int64_t j = 0; j < c; ++j) xi->grad[i * c + j] += oi->grad[j * r + i];
      }
    });
  }
  return out;
}

// ---- row-structured ----

Tensor add_bias(const Tensor& x, const Tensor& b) {
  const int64_t rows = x.rows(), c = x.cols();
  check(b.numel() == c, "add_bias: bias length " + std::to_string(b.numel()) +
                            " != row width " + std::to_string(c));
  Tensor out = Tensor::zeros(x.shape());
  for (int64_t i = 0; i < rows; ++i) {
    for (int64_t j = 0; j < c; ++j) out.data()[i * c + j] = x.data()[i * c + j] + b.data()[j];
  }
  if (track(x, b)) {
    out.set_requires_grad(true);
    ImplPtr xi = x.impl(), bi = b.impl(), oi = out.impl();
    tape().record([xi, bi, oi, rows, c] {
      if (!has_out_grad(oi)) return;
      if (xi->requires_grad) {
        ensure_grad(*xi);
        for (size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
      }
      if (bi->requires_grad) {
        ensure_grad(*bi);
        for (int64_t i = 0; i < rows; ++i) {
          for (int64_t j = 0; j < c; ++j) bi->grad[j] += oi->grad[i * c + j];
        }
      }
    });
  }
  return out;
}

namespace {

Tensor rows_scale_op(const Tensor& x, const Tensor& s, bool divide) {
  const int64_t rows = x.rows(), c = x.cols();
  check(s.numel() == rows, "mul_rows/div_rows: scale length " + std::to_string(s.numel()) +
                               " != row count " + std::to_string(rows));
  if (divide) {
    for (double v : s.data()) check_numeric(v != 0.0, "div_rows: zero denominator");
  }
  Tensor out = Tensor::zeros(x.shape());
  for (int64_t i = 0; i < rows; ++i) {
    const double f = divide ? 1.0 / s.data()[i] : s.data()[i];
    for (int64_t j = 0; j < c; ++j) out.data()[i * c + j] = x.data()[i * c + j] * f;
  }
  if (track(x, s)) {
    out.set_requires_grad(true);
    ImplPtr xi = x.impl(), si = s.impl(), oi = out.impl();
    tape().record([xi, si, oi, rows, c, divide] {
      if (!has_out_grad(oi)) return;
      if (xi->requires_grad) {
        ensure_grad(*xi);
        for (int64_t i = 0; i < rows; ++i) {
          const double f = divide ? 1.0 / si->data[i] : si->data[i];
          for (int64_t j = 0; j < c; ++j) xi->grad[i * c + j] += oi->grad[i * c + j] * f;
        }
      }
      if (si->requires_grad) {
        ensure_grad(*si);
        for (int64_t i = 0; i < rows; ++i) {
          double acc = 0.0;
          for (int64_t j = 0; j < c; ++j) acc += oi->grad[i * c + j] * xi->data[i * c + j];
          if (divide) {
            const double sv = si->data[i];
            si->grad[i] += -acc / (sv * sv);
          } else {
            si->grad[i] += acc;
          }
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor mul_rows(const Tensor& x, const Tensor& s) { return rows_scale_op(x, s, false); }
Tensor div_rows(const Tensor& x, const Tensor& s) { return rows_scale_op(x, s, true); }

Tensor row_dot(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "row_dot: shape mismatch");
  const int64_t rows = a.rows(), c = a.cols();
  Tensor out = Tensor::zeros({rows});
  for (int64_t i = 0; i < rows; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < c; ++j) acc += a.data()[i * c + j] * b.data()[i * c + j];
    out.data()[i] = acc;
  }
  if (track(a, b)) {
    out.set_requires_grad(true);
    ImplPtr ai = a.impl(), bi = b.impl(), oi = out.impl();
    tape().record([ai, bi, oi, rows, c] {
      if (!has_out_grad(oi)) return;
      if (ai->requires_grad) {
        ensure_grad(*ai);
        for (int64_t i = 0; i < rows; ++i) {
          for (int64_t j = 0; j < c; ++j) ai->grad[i * c + j] += oi->grad[i] * bi->data[i * c + j];
        }
      }
      if (bi->requires_grad) {
        ensure_grad(*bi);
        for (int64_t i = 0; i < rows; ++i) {
          for (int64_t j = 0; j < c; ++j) bi->grad[i * c + j] += oi->grad[i] * ai->data[i * c + j];
        }
      }
    });
  }
  return out;
}

Tensor row_outer(const Tensor& v, const Tensor& k) {
  check_rank2(v, "row_outer");
  check(v.shape() == k.shape(), "row_outer: shape mismatch");
  const int64_t rows = v.dim(0), d = v.dim(1);
  Tensor out = Tensor::zeros({rows, d * d});
  for (int64_t i = 0; i < rows; ++i) {
    const double* vr = v.data().data() + i * d;
    const double* kr = k.data().data() + i * d;
    double* orow = out.data().data() + i * d * d;
    for (int64_t r = 0; r < d; ++r) {
      for (int64_t c = 0; c < d; ++c) orow[r * d + c] = vr[r] * kr[c];
    }
  }
  if (track(v, k)) {
    out.set_requires_grad(true);
    ImplPtr vi = v.impl(), ki = k.impl(), oi = out.impl();
    tape().record([vi, ki, oi, rows, d] {
      if (!has_out_grad(oi)) return;
      if (vi->requires_grad) {
        ensure_grad(*vi);
        for (int64_t i = 0; i < rows; ++i) {
          for (int64_t r = 0; r < d; ++r) {
            double acc = 0.0;
            for (int64_t c = 0; c < d; ++c)
              acc += oi->grad[i * d * d + r * d + c] * ki->data[i * d + c];
            vi->grad[i * d + r] += acc;
          }
        }
      }
      if (ki->requires_grad) {
        ensure_grad(*ki);
        for (int64_t i = 0; i < rows; ++i) {
          for (int64_t c = 0; c < d; ++c) {
            double acc = 0.0;
            for (int64_t r = 0; r < d; ++r)
              acc += oi->grad[i * d * d + r * d + c] * vi->data[i * d + r];
            ki->grad[i * d + c] += acc;
          }
        }
      }
    });
  }
  return out;
}

Tensor row_matvec(const Tensor& m, const Tensor& q) {
  check_rank2(m, "row_matvec");
  check_rank2(q, "row_matvec");
  const int64_t rows = q.dim(0), d = q.dim(1);
  check(m.dim(0) == rows && m.dim(1) == d * d,
        "row_matvec: matrix block shape " + shape_str(m.shape()) +
            " incompatible with vectors " + shape_str(q.shape()));
  Tensor out = Tensor::zeros({rows, d});
  for (int64_t i = 0; i < rows; ++i) {
    const double* mr = m.data().data() + i * d * d;
    const double* qr = q.data().data() + i * d;
    double* orow = out.data().data() + i * d;
    for (int64_t r = 0; r < d; ++r) {
      double acc = 0.0;
      for (int64_t c = 0; c < d; ++c) acc += mr[r * d + c] * qr[c];
      orow[r] = acc;
    }
  }
  if (track(m, q)) {
    out.set_requires_grad(true);
    ImplPtr mi = m.impl(), qi = q.impl(), oi = out.impl();
    tape().record([mi, qi, oi, rows, d] {
      if (!has_out_grad(oi)) return;
      if (mi->requires_grad) {
        ensure_grad(*mi);
        for (int64_t i = 0; i < rows; ++i) {
          for (int64_t r = 0; r < d; ++r) {
            const double g = oi->grad[i * d + r];
            if (g == 0.0) continue;
            for (int64_t c = 0; c < d; ++c)
              mi->grad[i * d * d + r * d + c] += g * qi->data[i * d + c];
          }
        }
      }
      if (qi->requires_grad) {
        ensure_grad(*qi);
        for (int64_t i = 0; i < rows; ++i) {
          for (int64_t c = 0; c < d; ++c) {
            double acc = 0.0;
            for (int64_t r = 0; r < d; ++r)
              acc += oi->grad[i * d + r] * mi->data[i * d * d + r * d + c];
            qi->grad[i * d + c] += acc;
          }
        }
      }
    });
  }
  return out;
}

namespace {

// Shared forward for softmax/log-softmax; writes probabilities into prob.
void softmax_forward(const Tensor& x, double temperature, std::vector<double>& prob,
                     std::vector<double>* logprob) {
  const int64_t rows = x.rows(), c = x.cols();
  for (int64_t i = 0; i < rows; ++i) {
    const double* xr = x.data().data() + i * c;
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < c; ++j) mx = std::max(mx, xr[j]);
    double z = 0.0;
    for (int64_t j = 0; j < c; ++j) z += std::exp((xr[j] - mx) / temperature);
    const double logz = std::log(z);
    for (int64_t j = 0; j < c; ++j) {
      const double sh = (xr[j] - mx) / temperature;
      prob[i * c + j] = std::exp(sh) / z;
      if (logprob) (*logprob)[i * c + j] = sh - logz;
    }
  }
}

}  // namespace

Tensor softmax_rows(const Tensor& x, double temperature) {
  check(temperature > 0.0, "softmax_rows: temperature must be positive");
  Tensor out = Tensor::zeros(x.shape());
  softmax_forward(x, temperature, out.data(), nullptr);
  if (track(x)) {
    out.set_requires_grad(true);
    ImplPtr xi = x.impl(), oi = out.impl();
    const int64_t rows = x.rows(), c = x.cols();
    tape().record([xi, oi, rows, c, temperature] {
      if (!has_out_grad(oi)) return;
      ensure_grad(*xi);
      for (int64_t i = 0; i < rows; ++i) {
        const double* p = oi->data.data() + i * c;
        const double* g = oi->grad.data() + i * c;
        double dot = 0.0;
        for (int64_t j = 0; j < c; ++j) dot += g[j] * p[j];
        for (int64_t j = 0; j < c; ++j) {
          xi->grad[i * c + j] += p[j] * (g[j] - dot) / temperature;
        }
      }
    });
  }
  return out;
}

Tensor log_softmax_rows(const Tensor& x, double temperature) {
  check(temperature > 0.0, "log_softmax_rows: temperature must be positive");
  Tensor out = Tensor::zeros(x.shape());
  std::vector<double> prob(static_cast<size_t>(x.numel()));
  softmax_forward(x, temperature, prob, &out.data());
  if (track(x)) {
    out.set_requires_grad(true);
    ImplPtr xi = x.impl(), oi = out.impl();
    const int64_t rows = x.rows(), c = x.cols();
    tape().record([xi, oi, prob = std::move(prob), rows, c, temperature] {
      if (!has_out_grad(oi)) return;
      ensure_grad(*xi);
      for (int64_t i = 0; i < rows; ++i) {
        const double* g = oi->grad.data() + i * c;
        double gsum = 0.0;
        for (int64_t j = 0; j < c; ++j) gsum += g[j];
        for (int64_t j = 0; j < c; ++j) {
          xi->grad[i * c + j] += (g[j] - prob[i * c + j] * gsum) / temperature;
        }
      }
    });
  }
  return out;
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  constexpr double kEps = 1e-5;
  const int64_t rows = x.rows(), c = x.cols();
  check(gain.numel() == c && bias.numel() == c,
        "layer_norm_rows: gain/bias length must equal row width");
  Tensor out = Tensor::zeros(x.shape());
  std::vector<double> xhat(static_cast<size_t>(x.numel()));
  std::vector<double> inv_std(static_cast<size_t>(rows));
  for (int64_t i = 0; i < rows; ++i) {
    const double* xr = x.data().data() + i * c;
    double mu = 0.0;
    for (int64_t j = 0; j < c; ++j) mu += xr[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (int64_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + kEps);
    inv_std[i] = is;
    for (int64_t j = 0; j < c; ++j) {
      const double xh = (xr[j] - mu) * is;
      xhat[i * c + j] = xh;
      out.data()[i * c + j] = xh * gain.data()[j] + bias.data()[j];
    }
  }
  if (track(x, gain) || track(bias)) {
    out.set_requires_grad(true);
    ImplPtr xi = x.impl(), gi = gain.impl(), bi = bias.impl(), oi = out.impl();
    tape().record([xi, gi, bi, oi, xhat = std::move(xhat), inv_std = std::move(inv_std),
                   rows, c] {
      if (!has_out_grad(oi)) return;
      if (gi->requires_grad) {
        ensure_grad(*gi);
        for (int64_t i = 0; i < rows; ++i) {
          for (int64_t j = 0; j < c; ++j)
            gi->grad[j] += oi->grad[i * c + j] * xhat[i * c + j];
        }
      }
      if (bi->requires_grad) {
        ensure_grad(*bi);
        for (int64_t i = 0; i < rows; ++i) {
          for (int64_t j = 0; j < c; ++j) bi->grad[j] += oi->grad[i * c + j];
        }
      }
      if (xi->requires_grad) {
        ensure_grad(*xi);
        for (int64_t i = 0; i < rows; ++i) {
          double m1 = 0.0, m2 = 0.0;
          for (int64_t j = 0; j < c; ++j) {
            const double dxh = oi->grad[i * c + j] * gi->data[j];
            m1 += dxh;
            m2 += dxh * xhat[i * c + j];
          }
          m1 /= static_cast<double>(c);
          m2 /= static_cast<double>(c);
          for (int64_t j = 0; j < c; ++j) {
            const double dxh = oi->grad[i * c + j] * gi->data[j];
            xi->grad[i * c + j] += (dxh - m1 - xhat[i * c + j] * m2) * inv_std[i];
          }
        }
      }
    });
  }
  return out;
}

// ---- reductions ----

namespace {

Tensor reduce_all(const Tensor& x, double scale_factor) {
  Tensor out = Tensor::zeros({1});
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  out.data()[0] = acc * scale_factor;
  if (track(x)) {
    out.set_requires_grad(true);
    ImplPtr xi = x.impl(), oi = out.impl();
    tape().record([xi, oi, scale_factor] {
      if (!has_out_grad(oi)) return;
      ensure_grad(*xi);
      const double g = oi->grad[0] * scale_factor;
      for (double& d : xi->grad) d += g;
    });
  }
  return out;
}

Tensor reduce_axis(const Tensor& x, int axis, double scale_factor) {
  check_rank2(x, "axis reduction");
  check(axis == 0 || axis == 1, "reduction axis must be 0 or 1, got " + std::to_string(axis));
  const int64_t r = x.dim(0), c = x.dim(1);
  const int64_t out_n = axis == 0 ? c : r;
  Tensor out = Tensor::zeros({out_n});
  for (int64_t i = 0; i < r; ++i) {
    for (int64_t j = 0; j < c; ++j) {
      out.data()[axis == 0 ? j : i] += x.data()[i * c + j] * scale_factor;
    }
  }
  if (track(x)) {
    out.set_requires_grad(true);
    ImplPtr xi = x.impl(), oi = out.impl();
    tape().record([xi, oi, r, c, axis, scale_factor] {
      if (!has_out_grad(oi)) return;
      ensure_grad(*xi);
      for (int64_t i = 0; i < r; ++i) {
        for (int64_t j = 0; j < c; ++j) {
          xi->grad[i * c + j] += oi->grad[axis == 0 ? j : i] * scale_factor;
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor sum(const Tensor& x) { return reduce_all(x, 1.0); }
Tensor sum(const Tensor& x, int axis) { return reduce_axis(x, axis, 1.0); }
Tensor mean(const Tensor& x) { return reduce_all(x, 1.0 / static_cast<double>(x.numel())); }
Tensor mean(const Tensor& x, int axis) {
  check_rank2(x, "mean");
  const double n = static_cast<double>(axis == 0 ? x.dim(0) : x.dim(1));
  return reduce_axis(x, axis, 1.0 / n);
}

Tensor reduce_max(const Tensor& x) {
  Tensor out = Tensor::zeros({1});
  int64_t arg = 0;
  for (int64_t i = 1; i < x.numel(); ++i) {
    if (x.data()[i] > x.data()[arg]) arg = i;
  }
  out.data()[0] = x.data()[arg];
  if (track(x)) {
    out.set_requires_grad(true);
    ImplPtr xi = x.impl(), oi = out.impl();
    tape().record([xi, oi, arg] {
      if (!has_out_grad(oi)) return;
      ensure_grad(*xi);
      xi->grad[arg] += oi->grad[0];
    });
  }
  return out;
}

Tensor reduce_max(const Tensor& x, int axis) {
  check_rank2(x, "reduce_max");
  check(axis == 0 || axis == 1, "reduction axis must be 0 or 1, got " + std::to_string(axis));
  const int64_t r = x.dim(0), c = x.dim(1);
  const int64_t out_n = axis == 0 ? c : r;
  Tensor out = Tensor::zeros({out_n});
  std::vector<int64_t> args(static_cast<size_t>(out_n));
  if (axis == 1) {
    for (int64_t i = 0; i < r; ++i) {
      int64_t a = 0;
      for (int64_t j = 1; j < c; ++j) {
        if (x.data()[i * c + j] > x.data()[i * c + a]) a = j;
      }
      args[i] = i * c + a;
      out.data()[i] = x.data()[i * c + a];
    }
  } else {
    for (int64_t j = 0; j < c; ++j) {
      int64_t a = 0;
      for (int64_t i = 1; i < r; ++i) {
        if (x.data()[i * c + j] > x.data()[a * c + j]) a = i;
      }
      args[j] = a * c + j;
      out.data()[j] = x.data()[a * c + j];
    }
  }
  if (track(x)) {
    out.set_requires_grad(true);
    ImplPtr xi = x.impl(), oi = out.impl();
    tape().record([xi, oi, args = std::move(args)] {
      if (!has_out_grad(oi)) return;
      ensure_grad(*xi);
      for (size_t i = 0; i < args.size(); ++i) xi->grad[args[i]] += oi->grad[i];
    });
  }
  return out;
}

Tensor frobenius_norm(const Tensor& x) {
  Tensor out = Tensor::zeros({1});
  double acc = 0.0;
  for (double v : x.data()) acc += v * v;
  const double norm = std::sqrt(acc);
  out.data()[0] = norm;
  if (track(x)) {
    out.set_requires_grad(true);
    ImplPtr xi = x.impl(), oi = out.impl();
    tape().record([xi, oi, norm] {
      if (!has_out_grad(oi)) return;
      if (norm == 0.0) return;  // subgradient 0 at the origin
      ensure_grad(*xi);
      const double g = oi->grad[0] / norm;
      for (size_t i = 0; i < xi->data.size(); ++i) xi->grad[i] += g * xi->data[i];
    });
  }
  return out;
}

// ---- indexing / layout ----

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& ids) {
  const int64_t rows = x.rows(), c = x.cols();
  check(!ids.empty(), "gather_rows: empty index list");
  for (int64_t id : ids) {
    check(id >= 0 && id < rows,
          "gather_rows: index " + std::to_string(id) + " out of range [0, " +
              std::to_string(rows) + ")");
  }
  Tensor out = Tensor::zeros({static_cast<int64_t>(ids.size()), c});
  for (size_t i = 0; i < ids.size(); ++i) {
    const double* src = x.data().data() + ids[i] * c;
    std::copy(src, src + c, out.data().data() + static_cast<int64_t>(i) * c);
  }
  if (track(x)) {
    out.set_requires_grad(true);
    ImplPtr xi = x.impl(), oi = out.impl();
    tape().record([xi, oi, ids, c] {
      if (!has_out_grad(oi)) return;
      ensure_grad(*xi);
      for (size_t i = 0; i < ids.size(); ++i) {
        for (int64_t j = 0; j < c; ++j) {
          xi->grad[ids[i] * c + j] += oi->grad[static_cast<int64_t>(i) * c + j];
        }
      }
    });
  }
  return out;
}

Tensor take_per_row(const Tensor& x, const std::vector<int64_t>& cols) {
  const int64_t rows = x.rows(), c = x.cols();
  check(static_cast<int64_t>(cols.size()) == rows,
        "take_per_row: need one column index per row");
  for (int64_t id : cols) {
    check(id >= 0 && id < c, "take_per_row: column index " + std::to_string(id) +
                                 " out of range [0, " + std::to_string(c) + ")");
  }
  Tensor out = Tensor::zeros({rows});
  for (int64_t i = 0; i < rows; ++i) out.data()[i] = x.data()[i * c + cols[i]];
  if (track(x)) {
    out.set_requires_grad(true);
    ImplPtr xi = x.impl(), oi = out.impl();
    tape().record([xi, oi, cols, c, rows] {
      if (!has_out_grad(oi)) return;
      ensure_grad(*xi);
      for (int64_t i = 0; i < rows; ++i) xi->grad[i * c + cols[i]] += oi->grad[i];
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, int64_t r0, int64_t r1) {
  const int64_t rows = x.rows(), c = x.cols();
  check(0 <= r0 && r0 < r1 && r1 <= rows, "slice_rows: invalid range");
  Tensor out = Tensor::zeros({r1 - r0, c});
  std::copy(x.data().begin() + r0 * c, x.data().begin() + r1 * c, out.data().begin());
  if (track(x)) {
    out.set_requires_grad(true);
    ImplPtr xi = x.impl(), oi = out.impl();
    tape().record([xi, oi, r0, c] {
      if (!has_out_grad(oi)) return;
      ensure_grad(*xi);
      for (size_t i = 0; i < oi->grad.size(); ++i) {
        xi->grad[static_cast<size_t>(r0 * c) + i] += oi->grad[i];
      }
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, int64_t c0, int64_t c1) {
  const int64_t rows = x.rows(), c = x.cols();
  check(0 <= c0 && c0 < c1 && c1 <= c, "slice_cols: invalid range");
  const int64_t w = c1 - c0;
  Tensor out = Tensor::zeros({rows, w});
  for (int64_t i = 0; i < rows; ++i) {
    std::copy(x.data().begin() + i * c + c0, x.data().begin() + i * c + c1,
              out.data().begin() + i * w);
  }
  if (track(x)) {
    out.set_requires_grad(true);
    ImplPtr xi = x.impl(), oi = out.impl();
    tape().record([xi, oi, rows, c, c0, w] {
      if (!has_out_grad(oi)) return;
      ensure_grad(*xi);
      for (int64_t i = 0; i < rows; ++i) {
        for (int64_t j = 0; j < w; ++j) xi->grad[i * c + c0 + j] += oi->grad[i * w + j];
      }
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_rows: no parts");
  const int64_t c = parts[0].cols();
  int64_t total = 0;
  bool any_grad = false;
  for (const Tensor& p : parts) {
    check(p.cols() == c, "concat_rows: row width mismatch");
    total += p.rows();
    any_grad = any_grad || p.requires_grad();
  }
  Tensor out = Tensor::zeros({total, c});
  int64_t at = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + at);
    at += p.numel();
  }
  if (grad_enabled() && any_grad) {
    out.set_requires_grad(true);
    std::vector<ImplPtr> impls;
    impls.reserve(parts.size());
    for (const Tensor& p : parts) impls.push_back(p.impl());
    ImplPtr oi = out.impl();
    tape().record([impls = std::move(impls), oi] {
      if (!has_out_grad(oi)) return;
      size_t at = 0;
      for (const ImplPtr& pi : impls) {
        if (pi->requires_grad) {
          ensure_grad(*pi);
          for (size_t i = 0; i < pi->data.size(); ++i) pi->grad[i] += oi->grad[at + i];
        }
        at += pi->data.size();
      }
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_cols: no parts");
  const int64_t rows = parts[0].rows();
  int64_t total_c = 0;
  bool any_grad = false;
  for (const Tensor& p : parts) {
    check(p.rows() == rows, "concat_cols: row count mismatch");
    total_c += p.cols();
    any_grad = any_grad || p.requires_grad();
  }
  Tensor out = Tensor::zeros({rows, total_c});
  int64_t at = 0;
  for (const Tensor& p : parts) {
    const int64_t w = p.cols();
    for (int64_t i = 0; i < rows; ++i) {
      std::copy(p.data().begin() + i * w, p.data().begin() + (i + 1) * w,
                out.data().begin() + i * total_c + at);
    }
    at += w;
  }
  if (grad_enabled() && any_grad) {
    out.set_requires_grad(true);
    std::vector<ImplPtr> impls;
    std::vector<int64_t> offsets;
    int64_t off = 0;
    for (const Tensor& p : parts) {
      impls.push_back(p.impl());
      offsets.push_back(off);
      off += p.cols();
    }
    ImplPtr oi = out.impl();
    tape().record([impls = std::move(impls), offsets = std::move(offsets), oi, rows,
                   total_c] {
      if (!has_out_grad(oi)) return;
      for (size_t pi = 0; pi < impls.size(); ++pi) {
        const ImplPtr& p = impls[pi];
        if (!p->requires_grad) continue;
        ensure_grad(*p);
        const int64_t w = p->shape.back();
        for (int64_t i = 0; i < rows; ++i) {
          for (int64_t j = 0; j < w; ++j) {
            p->grad[i * w + j] += oi->grad[i * total_c + offsets[pi] + j];
          }
        }
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  validate_shape(shape);
  check(numel_of(shape) == x.numel(),
        "reshape: element count mismatch " + shape_str(x.shape()) + " -> " +
            shape_str(shape));
  Tensor out = Tensor::from_values(shape, x.data());
  if (track(x)) {
    out.set_requires_grad(true);
    ImplPtr xi = x.impl(), oi = out.impl();
    tape().record([xi, oi] {
      if (!has_out_grad(oi)) return;
      ensure_grad(*xi);
      for (size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
    });
  }
  return out;
}

}  // namespace xdistill
