#pragma once

#include <functional>

#include "mdaif/tensor.hpp"

namespace mdaif {

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t worst_index = 0;
  double analytic = 0;
  double numeric = 0;
};

// Central finite differences against the taped gradient of a scalar
// function. Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-8).
GradCheckResult grad_check_detailed(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                                    const Tensor<double>& x, double h = 1e-5);

double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                  const Tensor<double>& x, double h = 1e-5);

// Same check for a tensor captured by `f` (e.g. a layer weight), perturbed in
// place. `param` must have requires_grad set.
GradCheckResult grad_check_param(const std::function<Tensor<double>()>& f, Tensor<double>& param,
                                 double h = 1e-5);

}  // namespace mdaif
