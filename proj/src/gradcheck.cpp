#include "xdistill/gradcheck.hpp"

#include <cmath>

namespace xdistill {

namespace {

double loss_value(const std::function<Tensor()>& f) {
  NoGradGuard guard;
  const double v = f().value();
  check_numeric(std::isfinite(v), "finite_difference_check: f returned a non-finite value");
  return v;
}

}  // namespace

FdReport finite_difference_check(const std::function<Tensor()>& f,
                                 const std::vector<std::pair<std::string, Tensor>>& params,
                                 double step, double tol) {
  check(step > 0.0, "finite_difference_check: step must be positive");
  for (const auto& [name, p] : params) {
    check(p.requires_grad(), "finite_difference_check: parameter '" + name +
                                 "' does not require grad");
    p.impl()->grad.clear();
  }

  tape().reset();
  Tensor loss = f();
  check_numeric(std::isfinite(loss.value()),
                "finite_difference_check: f returned a non-finite value");
  backward(loss);

  FdReport report;
  for (const auto& [name, p] : params) {
    FdParamReport pr;
    pr.name = name;
    std::vector<double> analytic = p.has_grad() ? p.grad()
                                                : std::vector<double>(p.data().size(), 0.0);
    auto& values = p.impl()->data;
    for (size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = loss_value(f);
      values[i] = saved - step;
      const double down = loss_value(f);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[i];
      const double denom = std::max(std::abs(a), std::abs(numeric));
      const double err = denom < 1e-6 ? std::abs(a - numeric) : std::abs(a - numeric) / denom;
      pr.max_rel_err = std::max(pr.max_rel_err, err);
    }
    pr.pass = pr.max_rel_err <= tol;
    report.max_rel_err = std::max(report.max_rel_err, pr.max_rel_err);
    report.pass = report.pass && pr.pass;
    report.params.push_back(std::move(pr));
  }
  tape().reset();
  return report;
}

}  // namespace xdistill
