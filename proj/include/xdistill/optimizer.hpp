#pragma once

#include <cstdint>
#include <vector>

#include "xdistill/tensor.hpp"

namespace xdistill {

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options);

  // Applies one update using the currently accumulated gradients; a missing
  // gradient counts as zero. lr overrides options.lr for this step.
  void step(double lr);
  void zero_grad();
  // Global L2 norm over all parameter gradients.
  double grad_norm() const;
  // Scales every accumulated gradient in place (gradient-accumulation mean).
  void scale_grads(double factor);
  void clip_grad_norm(double max_norm);

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  AdamOptions options_;
  int64_t t_ = 0;
};

// Linear warmup over warmup_ratio of total_steps, then cosine decay to zero.
// step is 0-based.
double cosine_warmup_lr(double base_lr, int64_t step, int64_t total_steps,
                        double warmup_ratio);

}  // namespace xdistill
