#pragma once

#include "sctrans/param_store.hpp"

namespace sct {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam without weight decay. Moments live in each Parameter.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  /// Updates every trainable parameter from its gradient; parameters without a gradient
  /// are treated as having zero gradient.
  void step(ParamStore<T>& params, double lr);
  [[nodiscard]] Index steps() const { return steps_; }
  [[nodiscard]] const AdamOptions& options() const { return options_; }

 private:
  AdamOptions options_;
  Index steps_ = 0;
};

/// lr_min + (lr0 - lr_min) * (1 + cos(pi * t / total)) / 2.
double cosine_lr(Index t, Index total, double lr0, double lr_min);

}  // namespace sct
