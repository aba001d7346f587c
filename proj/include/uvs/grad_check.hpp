#pragma once

#include <cmath>
#include <functional>

#include "uvs/tensor.hpp"

namespace uvs {

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
};

// Compares reverse-mode gradients of a scalar-valued f against central finite
// differences, element by element. Relative error uses a max(|a|,|b|,1e-8)
// denominator. f must be deterministic; x must require grad.
inline GradCheckReport grad_check(const std::function<Tensor<double>(Tensor<double>)>& f,
                                  Tensor<double> x, double eps, double tol) {
  if (!x.requires_grad()) throw GraphError("grad_check: x must require grad");
  if (eps <= 0) throw GraphError("grad_check: eps must be positive");

  Tensor<double> y = f(x);
  if (y.numel() != 1) throw GraphError("grad_check: f must return a scalar");
  GradientMap<double> gm = backward(y);
  Tensor<double> analytic = gm.at(x);

  GradCheckReport rep;
  std::vector<double> base = x.values();
  for (int64_t i = 0; i < x.numel(); ++i) {
    std::vector<double> vp = base, vm = base;
    vp[i] += eps;
    vm[i] -= eps;
    double fp, fm;
    {
      NoGradGuard ng;
      fp = f(Tensor<double>::from(x.shape(), vp)).item();
      fm = f(Tensor<double>::from(x.shape(), vm)).item();
    }
    double numeric = (fp - fm) / (2.0 * eps);
    double a = analytic[i];
    double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
    double rel = std::fabs(a - numeric) / denom;
    if (rel > rep.max_rel_err) rep.max_rel_err = rel;
  }
  rep.pass = rep.max_rel_err <= tol;
  return rep;
}

}  // namespace uvs
