#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "xdistill/tensor.hpp"

namespace xdistill {

struct FdParamReport {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = true;
};

struct FdReport {
  std::vector<FdParamReport> params;
  double max_rel_err = 0.0;
  bool pass = true;
};

// Central-difference gradient oracle. f must deterministically rebuild the
// forward graph from the current parameter values and return a scalar loss.
// Per element the error is |analytic - numeric| / max(|analytic|, |numeric|)
// (absolute difference when both magnitudes are below 1e-6).
FdReport finite_difference_check(const std::function<Tensor()>& f,
                                 const std::vector<std::pair<std::string, Tensor>>& params,
                                 double step, double tol);

}  // namespace xdistill
