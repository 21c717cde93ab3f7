#pragma once

#include <cstdint>
#include <string>

#include "intake/tensor.hpp"

namespace intake {

/// A trainable tensor with its gradient and Adam moments.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;
  std::uint64_t step_count = 0;
  bool trainable = true;

  Param() = default;
  Param(std::string param_name, Tensor initial);

  void zero_grad() { grad.set_zero(); }
};

struct AdamSettings {
  double lr = 0.0005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update. Moments are updated in place; the gradient
/// is left for the caller to clear.
void adam_step(Param& param, const AdamSettings& settings);

}  // namespace intake
