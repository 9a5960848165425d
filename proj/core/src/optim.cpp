#include "sctrans/optim.hpp"

#include <cmath>
#include <numbers>

#include "sctrans/errors.hpp"

namespace sct {

template <typename T>
void Adam<T>::step(ParamStore<T>& params, double lr) {
  ++steps_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1 - std::pow(b2, static_cast<double>(steps_));
  for (Parameter<T>& p : params) {
    if (!p.trainable) continue;
    const Index n = p.value.numel();
    if (p.moment1.numel() != n) {
      p.moment1 = Tensor<T>(p.value.shape());
      p.moment2 = Tensor<T>(p.value.shape());
    }
    const bool has_grad = p.grad.numel() == n;
    for (Index i = 0; i < n; ++i) {
      const double g = has_grad ? static_cast<double>(p.grad[i]) : 0.0;
      const double m = b1 * static_cast<double>(p.moment1[i]) + (1 - b1) * g;
      const double v = b2 * static_cast<double>(p.moment2[i]) + (1 - b2) * g * g;
      p.moment1[i] = static_cast<T>(m);
      p.moment2[i] = static_cast<T>(v);
      const double update = lr * (m / c1) / (std::sqrt(v / c2) + options_.eps);
      p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) - update);
    }
  }
}

double cosine_lr(Index t, Index total, double lr0, double lr_min) {
  if (total <= 0) throw PreconditionError("cosine_lr: total must be positive");
  const double frac = static_cast<double>(t) / static_cast<double>(total);
  return lr_min + 0.5 * (lr0 - lr_min) * (1 + std::cos(std::numbers::pi * frac));
}

template class Adam<float>;
template class Adam<double>;

}  // namespace sct
