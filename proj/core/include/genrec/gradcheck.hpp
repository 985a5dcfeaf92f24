#pragma once

#include <functional>
#include <span>

#include "genrec/tensor.hpp"

namespace genrec {

// Compares reverse-mode gradients of a scalar function against central
// differences and returns the maximum relative error over all coordinates.
// `f` must be re-evaluable (pure in its input).
double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& point, double step = 1e-5);

// Same check over a set of parameters feeding a closed-over loss. The loss
// builder is invoked repeatedly while parameter storage is perturbed in place.
double grad_check_params(const std::function<Tensor()>& loss,
                         std::span<Tensor> params, double step = 1e-5);

}  // namespace genrec
