#include "intake/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace intake {

Param::Param(std::string param_name, Tensor initial)
    : name(std::move(param_name)),
      value(std::move(initial)),
      grad(Tensor::like(value)),
      adam_m(Tensor::like(value)),
      adam_v(Tensor::like(value)) {}

void adam_step(Param& param, const AdamSettings& s) {
  if (!(s.lr > 0.0)) throw std::invalid_argument("adam_step: learning rate must be positive");
  if (!param.grad.same_shape(param.value)) throw std::invalid_argument("adam_step: gradient shape mismatch");
  ++param.step_count;
  const double t = static_cast<double>(param.step_count);
  const double c1 = 1.0 - std::pow(s.beta1, t);
  const double c2 = 1.0 - std::pow(s.beta2, t);
  for (std::size_t i = 0; i < param.value.size(); ++i) {
    const double g = param.grad[i];
    param.adam_m[i] = s.beta1 * param.adam_m[i] + (1.0 - s.beta1) * g;
    param.adam_v[i] = s.beta2 * param.adam_v[i] + (1.0 - s.beta2) * g * g;
    const double m_hat = param.adam_m[i] / c1;
    const double v_hat = param.adam_v[i] / c2;
    param.value[i] -= s.lr * m_hat / (std::sqrt(v_hat) + s.eps);
  }
}

}  // namespace intake
