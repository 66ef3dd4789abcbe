#pragma once

#include <cmath>
#include <span>

#include "wlm/tensor.hpp"

namespace wlm {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam. Every parameter must carry a gradient; gradients are
// released after the update.
template <class T>
void adam_step(std::span<Parameter<T>* const> params, const AdamConfig& cfg = {}) {
  for (const Parameter<T>* p : params)
    if (!p->value->has_grad()) fail(ErrorKind::unstepped_parameter, "parameter '" + p->name + "' has no gradient");

  for (Parameter<T>* p : params) {
    ++p->step_count;
    const double t = static_cast<double>(p->step_count);
    const double correct1 = 1.0 - std::pow(cfg.beta1, t);
    const double correct2 = 1.0 - std::pow(cfg.beta2, t);
    auto& value = p->value->data;
    auto& grad = p->value->grad;
    auto& m = p->adam_m.data;
    auto& v = p->adam_v.data;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double gi = grad[i];
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = cfg.lr * (mi / correct1) / (std::sqrt(vi / correct2) + cfg.eps);
      value[i] = static_cast<T>(value[i] - update);
    }
    grad.clear();
  }
}

}  // namespace wlm
