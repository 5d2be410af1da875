#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "xdistill/common.hpp"
#include "xdistill/rng.hpp"

namespace xdistill {

using Shape = std::vector<int64_t>;

int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward rule first touches it
  bool requires_grad = false;
};

// Dense row-major float64 tensor. A Tensor is a cheap handle onto shared
// storage; tape nodes capture these handles to keep operands alive until the
// backward pass has run. Row ops below treat the last dimension as the row
// width and everything before it as the row count.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from_values(const Shape& shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor randn(const Shape& shape, Rng& rng, double stddev,
                      bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int64_t dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }
  int64_t cols() const { return impl_->shape.back(); }
  int64_t rows() const { return numel() / cols(); }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }
  double value() const;  // element of a one-element tensor

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad() const { impl_->grad.clear(); }

  bool all_finite() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

// Append-only record of executed operations. Append order is a valid
// topological order of the forward graph, so backward is a reverse replay.
// A tape can be consumed by backward() exactly once per recording.
class GradTape {
 public:
  void record(std::function<void()> backward_fn);
  void backward(const Tensor& loss);
  void reset();
  size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

// Process-wide tape used by every op. Recording is single-threaded.
GradTape& tape();

bool grad_enabled();

// Disables tape recording while alive; nests.
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Runs the reverse pass of the process-wide tape from a scalar loss.
void backward(const Tensor& loss);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);  // same shape, or one side scalar
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& x, double c);
Tensor scale(const Tensor& x, double c);
Tensor neg(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);  // throws NumericError on non-positive input
Tensor sigmoid(const Tensor& x);
Tensor log_sigmoid(const Tensor& x);  // stable log(sigmoid(x))
Tensor tanh(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor max_with_scalar(const Tensor& x, double c);
Tensor maximum(const Tensor& a, const Tensor& b);

// ---- matrix ----
Tensor matmul(const Tensor& a, const Tensor& b);  // [m×k]·[k×n]
Tensor transpose(const Tensor& x);                // rank 2

// ---- row-structured ----
Tensor add_bias(const Tensor& x, const Tensor& b);    // x [N×C] + b [C] per row
Tensor mul_rows(const Tensor& x, const Tensor& s);    // row n scaled by s[n]
Tensor div_rows(const Tensor& x, const Tensor& s);
Tensor row_dot(const Tensor& a, const Tensor& b);     // [N×C],[N×C] -> [N]
Tensor row_outer(const Tensor& v, const Tensor& k);   // [N×d],[N×d] -> [N×d·d]
Tensor row_matvec(const Tensor& m, const Tensor& q);  // [N×d·d],[N×d] -> [N×d]
Tensor softmax_rows(const Tensor& x, double temperature);
Tensor log_softmax_rows(const Tensor& x, double temperature);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias);

// ---- reductions ----
Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, int axis);  // rank 2
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, int axis);
Tensor reduce_max(const Tensor& x);
Tensor reduce_max(const Tensor& x, int axis);
Tensor frobenius_norm(const Tensor& x);

// ---- indexing / layout ----
Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& ids);
Tensor take_per_row(const Tensor& x, const std::vector<int64_t>& cols);  // -> [N]
Tensor slice_rows(const Tensor& x, int64_t r0, int64_t r1);
Tensor slice_cols(const Tensor& x, int64_t c0, int64_t c1);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor reshape(const Tensor& x, const Shape& shape);

}  // namespace xdistill
