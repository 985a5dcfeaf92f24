#include "genrec/gradcheck.hpp"

#include <cmath>
#include <vector>

namespace genrec {

namespace {

double rel_error(double analytic, double numeric) {
  double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1.0});
  return std::fabs(analytic - numeric) / denom;
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& point, double step) {
  Tensor x = Tensor::parameter(point.shape(),
                               std::vector<double>(point.data().begin(),
                                                   point.data().end()));
  clear_tape();
  Tensor loss = f(x);
  backward(loss);
  std::vector<double> analytic(x.grad().begin(), x.grad().end());
  clear_tape();

  double max_err = 0.0;
  auto w = x.mutable_data();
  NoGradGuard ng;
  for (size_t i = 0; i < w.size(); ++i) {
    double orig = w[i];
    w[i] = orig + step;
    double hi = f(x).item();
    w[i] = orig - step;
    double lo = f(x).item();
    w[i] = orig;
    double numeric = (hi - lo) / (2.0 * step);
    max_err = std::max(max_err, rel_error(analytic[i], numeric));
  }
  return max_err;
}

double grad_check_params(const std::function<Tensor()>& loss,
                         std::span<Tensor> params, double step) {
  clear_tape();
  for (Tensor& p : params) p.zero_grad();
  backward(loss());
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (Tensor& p : params)
    analytic.emplace_back(p.grad().begin(), p.grad().end());
  clear_tape();

  double max_err = 0.0;
  NoGradGuard ng;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto w = params[pi].mutable_data();
    for (size_t i = 0; i < w.size(); ++i) {
      double orig = w[i];
      w[i] = orig + step;
      double hi = loss().item();
      w[i] = orig - step;
      double lo = loss().item();
      w[i] = orig;
      double numeric = (hi - lo) / (2.0 * step);
      max_err = std::max(max_err, rel_error(analytic[pi][i], numeric));
    }
  }
  return max_err;
}

}  // namespace genrec
