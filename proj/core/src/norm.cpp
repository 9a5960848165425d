#include <cmath>

#include "sctrans/ops.hpp"

namespace sct {
namespace {

// Strided view of normalization groups: group g covers `count` elements at
// base(g) + j * stride for j in [0, count).
struct Groups {
  Index num = 0;
  Index count = 0;
  Index stride = 1;
  std::function<Index(Index)> base;
};

template <typename T>
void normalize_groups(const Tensor<T>& x, const Groups& g, double eps, Tensor<T>& xhat,
                      std::vector<T>& rstd) {
  rstd.assign(static_cast<std::size_t>(g.num), T(0));
  for (Index i = 0; i < g.num; ++i) {
    const Index base = g.base(i);
    double mean = 0.0;
    for (Index j = 0; j < g.count; ++j) mean += x[base + j * g.stride];
    mean /= static_cast<double>(g.count);
    double var = 0.0;
    for (Index j = 0; j < g.count; ++j) {
      const double d = x[base + j * g.stride] - mean;
      var += d * d;
    }
    var /= static_cast<double>(g.count);
    const double r = 1.0 / std::sqrt(var + eps);
    rstd[static_cast<std::size_t>(i)] = static_cast<T>(r);
    for (Index j = 0; j < g.count; ++j) {
      const Index at = base + j * g.stride;
      xhat[at] = static_cast<T>((x[at] - mean) * r);
    }
  }
}

// dx = rstd * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat)) per group.
template <typename T>
void normalize_groups_backward(const Tensor<T>& xhat, const Tensor<T>& dxhat, const Groups& g,
                               const std::vector<T>& rstd, Tensor<T>& dx) {
  for (Index i = 0; i < g.num; ++i) {
    const Index base = g.base(i);
    double sum_d = 0.0, sum_dx = 0.0;
    for (Index j = 0; j < g.count; ++j) {
      const Index at = base + j * g.stride;
      sum_d += dxhat[at];
      sum_dx += static_cast<double>(dxhat[at]) * xhat[at];
    }
    const double n = static_cast<double>(g.count);
    const double r = rstd[static_cast<std::size_t>(i)];
    for (Index j = 0; j < g.count; ++j) {
      const Index at = base + j * g.stride;
      dx[at] += static_cast<T>(r * (dxhat[at] - sum_d / n - xhat[at] * sum_dx / n));
    }
  }
}

// y = xhat * gamma[c] + beta[c] with channel index c = (i / inner) % channels.
template <typename T>
Tensor<T> apply_affine(const Tensor<T>& xhat, const Var<T>& gamma, const Var<T>& beta, Index channels,
                       Index inner) {
  Tensor<T> y = xhat;
  if (!gamma.valid()) return y;
  const T* gm = gamma.value().data();
  const T* bt = beta.value().data();
  for (Index i = 0; i < y.numel(); ++i) {
    const Index c = (i / inner) % channels;
    y[i] = xhat[i] * gm[c] + bt[c];
  }
  return y;
}

template <typename T>
void check_affine(const char* op, const Var<T>& gamma, const Var<T>& beta, Index channels) {
  if (gamma.valid() != beta.valid()) throw ConfigError(std::string(op) + ": gamma and beta must be paired");
  if (gamma.valid() && (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels})) {
    throw ConfigError(std::string(op) + ": affine parameters must have shape (" + std::to_string(channels) +
                      ")");
  }
}

template <typename T>
Var<T> normalized(const char* op, const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, double eps,
                  Groups groups, Index channels, Index inner) {
  if (eps <= 0) throw ConfigError(std::string(op) + ": eps must be positive");
  if (groups.count <= 0) throw ConfigError(std::string(op) + ": zero-size normalization axis");
  check_affine(op, gamma, beta, channels);
  Tensor<T> xhat(x.shape());
  std::vector<T> rstd;
  normalize_groups(x.value(), groups, eps, xhat, rstd);
  Tensor<T> y = apply_affine(xhat, gamma, beta, channels, inner);
  std::vector<Var<T>> inputs{x};
  if (gamma.valid()) {
    inputs.push_back(gamma);
    inputs.push_back(beta);
  }
  return make_result<T>(op, std::move(y), std::move(inputs),
                        [xhat = std::move(xhat), rstd = std::move(rstd), groups, channels,
                         inner](Node<T>& self) {
                          const bool affine = self.inputs.size() == 3;
                          Tensor<T> dxhat = self.grad;
                          if (affine) {
                            const T* gm = self.inputs[1]->value().data();
                            Node<T>& gn = *self.inputs[1];
                            Node<T>& bn = *self.inputs[2];
                            T* gg = gn.requires_grad ? gn.grad_buffer().data() : nullptr;
                            T* gb = bn.requires_grad ? bn.grad_buffer().data() : nullptr;
                            for (Index i = 0; i < dxhat.numel(); ++i) {
                              const Index c = (i / inner) % channels;
                              if (gg) gg[c] += self.grad[i] * xhat[i];
                              if (gb) gb[c] += self.grad[i];
                              dxhat[i] = self.grad[i] * gm[c];
                            }
                          }
                          Node<T>& xn = *self.inputs[0];
                          if (xn.requires_grad) normalize_groups_backward(xhat, dxhat, groups, rstd, xn.grad_buffer());
                        });
}

void require_rank4(const char* op, const Shape& s) {
  if (s.rank() != 4) throw ConfigError(std::string(op) + ": expected rank-4 input, got " + s.str());
}

}  // namespace

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, double eps) {
  const Shape& s = x.shape();
  require_rank4("layer_norm", s);
  const Index c = s[1], hw = s[2] * s[3];
  Groups g;
  g.num = s[0] * hw;
  g.count = c;
  g.stride = hw;
  g.base = [c, hw](Index i) { return (i / hw) * c * hw + i % hw; };
  return normalized("layer_norm", x, gamma, beta, eps, std::move(g), c, hw);
}

template <typename T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, double eps) {
  const Shape& s = x.shape();
  require_rank4("instance_norm", s);
  const Index hw = s[2] * s[3];
  Groups g;
  g.num = s[0] * s[1];
  g.count = hw;
  g.stride = 1;
  g.base = [hw](Index i) { return i * hw; };
  return normalized("instance_norm", x, gamma, beta, eps, std::move(g), s[1], hw);
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, bool training, double momentum, double eps) {
  const Shape& s = x.shape();
  require_rank4("batch_norm", s);
  const Index batch = s[0], c = s[1], hw = s[2] * s[3];
  if (running_mean.shape() != Shape{c} || running_var.shape() != Shape{c}) {
    throw ConfigError("batch_norm: running statistics must have shape (" + std::to_string(c) + ")");
  }
  if (!training) {
    if (eps <= 0) throw ConfigError("batch_norm: eps must be positive");
    check_affine("batch_norm", gamma, beta, c);
    // Eval mode is an affine map per channel: y = x * a[c] + b[c].
    std::vector<T> a(static_cast<std::size_t>(c)), b(static_cast<std::size_t>(c));
    for (Index ch = 0; ch < c; ++ch) {
      const double r = 1.0 / std::sqrt(static_cast<double>(running_var[ch]) + eps);
      const double gm = gamma.valid() ? gamma.value()[ch] : 1.0;
      const double bt = beta.valid() ? beta.value()[ch] : 0.0;
      a[ch] = static_cast<T>(gm * r);
      b[ch] = static_cast<T>(bt - running_mean[ch] * gm * r);
    }
    Tensor<T> y(s);
    for (Index i = 0; i < y.numel(); ++i) {
      const Index ch = (i / hw) % c;
      y[i] = x.value()[i] * a[ch] + b[ch];
    }
    std::vector<Var<T>> inputs{x};
    if (gamma.valid()) {
      inputs.push_back(gamma);
      inputs.push_back(beta);
    }
    Tensor<T> rm = running_mean, rv = running_var;
    return make_result<T>("batch_norm_eval", std::move(y), std::move(inputs),
                          [a = std::move(a), rm = std::move(rm), rv = std::move(rv), c, hw, eps](Node<T>& self) {
                            Node<T>& xn = *self.inputs[0];
                            const T* gx = self.grad.data();
                            if (xn.requires_grad) {
                              T* dx = xn.grad_buffer().data();
                              for (Index i = 0; i < self.grad.numel(); ++i) dx[i] += gx[i] * a[(i / hw) % c];
                            }
                            if (self.inputs.size() == 3) {
                              Node<T>& gn = *self.inputs[1];
                              Node<T>& bn = *self.inputs[2];
                              const T* xv = xn.value().data();
                              for (Index i = 0; i < self.grad.numel(); ++i) {
                                const Index ch = (i / hw) % c;
                                const T xh = static_cast<T>((xv[i] - rm[ch]) / std::sqrt(static_cast<double>(rv[ch]) + eps));
                                if (gn.requires_grad) gn.grad_buffer()[ch] += gx[i] * xh;
                                if (bn.requires_grad) bn.grad_buffer()[ch] += gx[i];
                              }
                            }
                          });
  }
  if (eps <= 0) throw ConfigError("batch_norm: eps must be positive");
  const Index count = batch * hw;
  if (count <= 0) throw ConfigError("batch_norm: zero-size normalization axis");
  const double n = static_cast<double>(count);
  Tensor<T> xhat(s);
  std::vector<T> rstd(static_cast<std::size_t>(c));
  const T* xv = x.value().data();
  for (Index ch = 0; ch < c; ++ch) {
    double mean = 0.0;
    for (Index b = 0; b < batch; ++b) {
      const T* plane = xv + (b * c + ch) * hw;
      for (Index i = 0; i < hw; ++i) mean += plane[i];
    }
    mean /= n;
    double var = 0.0;
    for (Index b = 0; b < batch; ++b) {
      const T* plane = xv + (b * c + ch) * hw;
      for (Index i = 0; i < hw; ++i) var += (plane[i] - mean) * (plane[i] - mean);
    }
    var /= n;
    const double r = 1.0 / std::sqrt(var + eps);
    rstd[static_cast<std::size_t>(ch)] = static_cast<T>(r);
    for (Index b = 0; b < batch; ++b) {
      const T* plane = xv + (b * c + ch) * hw;
      T* out = xhat.data() + (b * c + ch) * hw;
      for (Index i = 0; i < hw; ++i) out[i] = static_cast<T>((plane[i] - mean) * r);
    }
    const double unbiased = count > 1 ? var * n / (n - 1) : var;
    running_mean[ch] = static_cast<T>((1.0 - momentum) * running_mean[ch] + momentum * mean);
    running_var[ch] = static_cast<T>((1.0 - momentum) * running_var[ch] + momentum * unbiased);
  }
  check_affine("batch_norm", gamma, beta, c);
  Tensor<T> y = apply_affine(xhat, gamma, beta, c, hw);
  std::vector<Var<T>> inputs{x};
  if (gamma.valid()) {
    inputs.push_back(gamma);
    inputs.push_back(beta);
  }
  return make_result<T>("batch_norm", std::move(y), std::move(inputs),
                        [xhat = std::move(xhat), rstd = std::move(rstd), batch, c, hw](Node<T>& self) {
                          const bool affine = self.inputs.size() == 3;
                          const Index count = batch * hw;
                          std::vector<double> sum_d(static_cast<std::size_t>(c), 0.0);
                          std::vector<double> sum_dx(static_cast<std::size_t>(c), 0.0);
                          Tensor<T> dxhat = self.grad;
                          const T* gm = affine ? self.inputs[1]->value().data() : nullptr;
                          for (Index i = 0; i < dxhat.numel(); ++i) {
                            const Index ch = (i / hw) % c;
                            if (affine) {
                              Node<T>& gn = *self.inputs[1];
                              Node<T>& bn = *self.inputs[2];
                              if (gn.requires_grad) gn.grad_buffer()[ch] += self.grad[i] * xhat[i];
                              if (bn.requires_grad) bn.grad_buffer()[ch] += self.grad[i];
                              dxhat[i] = self.grad[i] * gm[ch];
                            }
                            sum_d[ch] += dxhat[i];
                            sum_dx[ch] += static_cast<double>(dxhat[i]) * xhat[i];
                          }
                          Node<T>& xn = *self.inputs[0];
                          if (!xn.requires_grad) return;
                          T* dx = xn.grad_buffer().data();
                          const double n = static_cast<double>(count);
                          for (Index i = 0; i < dxhat.numel(); ++i) {
                            const Index ch = (i / hw) % c;
                            dx[i] += static_cast<T>(rstd[ch] * (dxhat[i] - sum_d[ch] / n - xhat[i] * sum_dx[ch] / n));
                          }
                        });
}

#define SCT_INSTANTIATE(T)                                                                          \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, double);                  \
  template Var<T> instance_norm(const Var<T>&, const Var<T>&, const Var<T>&, double);               \
  template Var<T> batch_norm(const Var<T>&, const Var<T>&, const Var<T>&, Tensor<T>&, Tensor<T>&, \
                             bool, double, double);

SCT_INSTANTIATE(float)
SCT_INSTANTIATE(double)

}  // namespace sct
