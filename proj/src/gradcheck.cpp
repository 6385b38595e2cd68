#include "mdaif/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mdaif {

namespace {

void track(GradCheckResult& r, std::size_t i, double a, double n) {
  const double denom = std::max({std::abs(a), std::abs(n), 1e-8});
  const double err = std::abs(a - n) / denom;
  if (err > r.max_rel_error || (i == 0 && r.max_rel_error == 0)) {
    r.max_rel_error = err;
    r.worst_index = i;
    r.analytic = a;
    r.numeric = n;
  }
}

}  // namespace

GradCheckResult grad_check_detailed(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                                    const Tensor<double>& x, double h) {
  auto& tape = Tape<double>::active();
  tape.clear();
  Tensor<double> probe = x.detach();
  probe.set_requires_grad(true);
  backward(f(probe));
  std::vector<double> analytic(probe.numel(), 0.0);
  if (probe.has_grad()) std::copy(probe.grad().begin(), probe.grad().end(), analytic.begin());
  tape.clear();

  GradCheckResult result;
  NoGradGuard no_grad;
  Tensor<double> moved = x.detach();
  auto data = moved.data_mut();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double orig = data[i];
    data[i] = orig + h;
    const double up = f(moved).item();
    data[i] = orig - h;
    const double down = f(moved).item();
    data[i] = orig;
    track(result, i, analytic[i], (up - down) / (2 * h));
  }
  return result;
}

double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                  const Tensor<double>& x, double h) {
  return grad_check_detailed(f, x, h).max_rel_error;
}

GradCheckResult grad_check_param(const std::function<Tensor<double>()>& f, Tensor<double>& param,
                                 double h) {
  auto& tape = Tape<double>::active();
  tape.clear();
  param.clear_grad();
  backward(f());
  std::vector<double> analytic(param.numel(), 0.0);
  if (param.has_grad()) std::copy(param.grad().begin(), param.grad().end(), analytic.begin());
  param.clear_grad();
  tape.clear();

  GradCheckResult result;
  NoGradGuard no_grad;
  auto data = param.data_mut();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double orig = data[i];
    data[i] = orig + h;
    const double up = f().item();
    data[i] = orig - h;
    const double down = f().item();
    data[i] = orig;
    track(result, i, analytic[i], (up - down) / (2 * h));
  }
  return result;
}

}  // namespace mdaif
