#pragma once

#include <cstdint>
#include <vector>

#include "genrec/tensor.hpp"

namespace genrec {

struct AdamWConfig {
  double lr = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Decoupled-weight-decay adaptive-moment optimizer with bias correction.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig config = {});

  void step();
  void zero_grad();
  int64_t step_count() const { return step_; }
  const AdamWConfig& config() const { return config_; }
  std::vector<Tensor>& params() { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  AdamWConfig config_;
  int64_t step_ = 0;
};

}  // namespace genrec
