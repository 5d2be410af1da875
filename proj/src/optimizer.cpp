#include "xdistill/optimizer.hpp"

#include <cmath>

namespace xdistill {

Adam::Adam(std::vector<Tensor> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const Tensor& p : params_) {
    m_.emplace_back(p.data().size(), 0.0);
    v_.emplace_back(p.data().size(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    auto& data = params_[pi].data();
    const bool has_grad = params_[pi].has_grad();
    const auto& grad = params_[pi].impl()->grad;
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (size_t i = 0; i < data.size(); ++i) {
      const double g = has_grad ? grad[i] : 0.0;
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g;
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g * g;
      data[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + options_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

double Adam::grad_norm() const {
  double acc = 0.0;
  for (const Tensor& p : params_) {
    if (!p.has_grad()) continue;
    for (double g : p.impl()->grad) acc += g * g;
  }
  return std::sqrt(acc);
}

void Adam::scale_grads(double factor) {
  for (Tensor& p : params_) {
    if (!p.has_grad()) continue;
    for (double& g : p.impl()->grad) g *= factor;
  }
}

void Adam::clip_grad_norm(double max_norm) {
  const double norm = grad_norm();
  if (norm > max_norm && norm > 0.0) scale_grads(max_norm / norm);
}

double cosine_warmup_lr(double base_lr, int64_t step, int64_t total_steps,
                        double warmup_ratio) {
  check(total_steps >= 1, "cosine_warmup_lr: total_steps must be positive");
  const auto warmup = static_cast<int64_t>(warmup_ratio * static_cast<double>(total_steps));
  if (warmup > 0 && step < warmup) {
    return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  }
  const double span = static_cast<double>(std::max<int64_t>(total_steps - warmup, 1));
  const double progress = static_cast<double>(step - warmup) / span;
  return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

}  // namespace xdistill
