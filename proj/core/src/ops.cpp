#include <cmath>
#include <limits>

#include "sctrans/ops.hpp"

namespace sct {
namespace {

void require_rank4(const char* op, const Shape& s) {
  if (s.rank() != 4) throw ConfigError(std::string(op) + ": expected rank-4 input, got " + s.str());
}

// Source coordinate for output index `o` under align-corners=false.
struct Tap {
  Index lo, hi;
  double frac;
};

std::vector<Tap> bilinear_taps(Index in, Index out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (Index o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    Index lo = static_cast<Index>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const Index hi = std::min(lo + 1, in - 1);
    taps[static_cast<std::size_t>(o)] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

constexpr double kSqrt2OverPi = 0.7978845608028654;
constexpr double kGeluCubic = 0.044715;

}  // namespace

template <typename T>
Var<T> resample_bilinear(const Var<T>& x, Index out_h, Index out_w) {
  const Shape& s = x.shape();
  require_rank4("resample_bilinear", s);
  if (out_h < 1 || out_w < 1) throw ConfigError("resample_bilinear: output extents must be >= 1");
  const Index planes = s[0] * s[1], h = s[2], w = s[3];
  if (h == out_h && w == out_w) return x;
  auto ty = bilinear_taps(h, out_h);
  auto tx = bilinear_taps(w, out_w);
  Tensor<T> y({s[0], s[1], out_h, out_w});
  for (Index p = 0; p < planes; ++p) {
    const T* in = x.value().data() + p * h * w;
    T* out = y.data() + p * out_h * out_w;
    for (Index oy = 0; oy < out_h; ++oy) {
      const Tap& a = ty[static_cast<std::size_t>(oy)];
      const T fy = static_cast<T>(a.frac);
      for (Index ox = 0; ox < out_w; ++ox) {
        const Tap& b = tx[static_cast<std::size_t>(ox)];
        const T fx = static_cast<T>(b.frac);
        // Lerp form keeps constant inputs exact.
        const T v00 = in[a.lo * w + b.lo], v01 = in[a.lo * w + b.hi];
        const T v10 = in[a.hi * w + b.lo], v11 = in[a.hi * w + b.hi];
        const T top = v00 + fx * (v01 - v00);
        const T bottom = v10 + fx * (v11 - v10);
        out[oy * out_w + ox] = top + fy * (bottom - top);
      }
    }
  }
  return make_result<T>("resample_bilinear", std::move(y), {x},
                        [ty = std::move(ty), tx = std::move(tx), planes, h, w, out_h, out_w](Node<T>& self) {
                          Node<T>& xn = *self.inputs[0];
                          if (!xn.requires_grad) return;
                          T* gx = xn.grad_buffer().data();
                          for (Index p = 0; p < planes; ++p) {
                            const T* go = self.grad.data() + p * out_h * out_w;
                            T* gi = gx + p * h * w;
                            for (Index oy = 0; oy < out_h; ++oy) {
                              const Tap& a = ty[static_cast<std::size_t>(oy)];
                              const T fy = static_cast<T>(a.frac);
                              for (Index ox = 0; ox < out_w; ++ox) {
                                const Tap& b = tx[static_cast<std::size_t>(ox)];
                                const T fx = static_cast<T>(b.frac);
                                const T d = go[oy * out_w + ox];
                                gi[a.lo * w + b.lo] += d * (1 - fy) * (1 - fx);
                                gi[a.lo * w + b.hi] += d * (1 - fy) * fx;
                                gi[a.hi * w + b.lo] += d * fy * (1 - fx);
                                gi[a.hi * w + b.hi] += d * fy * fx;
                              }
                            }
                          }
                        });
}

template <typename T>
Var<T> max_pool2x2(const Var<T>& x) {
  const Shape& s = x.shape();
  require_rank4("max_pool2x2", s);
  const Index h = s[2], w = s[3];
  if (h % 2 != 0 || w % 2 != 0) {
    throw PreconditionError("max_pool2x2: spatial extents " + s.str() +
                            " must be even (pad inputs to a multiple of 16)");
  }
  const Index planes = s[0] * s[1], oh = h / 2, ow = w / 2;
  Tensor<T> y({s[0], s[1], oh, ow});
  std::vector<Index> argmax(static_cast<std::size_t>(y.numel()));
  for (Index p = 0; p < planes; ++p) {
    const T* in = x.value().data() + p * h * w;
    for (Index oy = 0; oy < oh; ++oy) {
      for (Index ox = 0; ox < ow; ++ox) {
        Index best = (2 * oy) * w + 2 * ox;
        for (Index k : {(2 * oy) * w + 2 * ox + 1, (2 * oy + 1) * w + 2 * ox, (2 * oy + 1) * w + 2 * ox + 1}) {
          if (in[k] > in[best] || std::isnan(in[k])) best = k;
        }
        const Index o = p * oh * ow + oy * ow + ox;
        y[o] = in[best];
        argmax[static_cast<std::size_t>(o)] = p * h * w + best;
      }
    }
  }
  return make_result<T>("max_pool2x2", std::move(y), {x}, [argmax = std::move(argmax)](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    if (!xn.requires_grad) return;
    T* gx = xn.grad_buffer().data();
    for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += self.grad[static_cast<Index>(o)];
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const Shape& s = x.shape();
  require_rank4("global_avg_pool", s);
  const Index planes = s[0] * s[1], hw = s[2] * s[3];
  if (hw == 0) throw ConfigError("global_avg_pool: empty spatial extents");
  Tensor<T> y({s[0], s[1], 1, 1});
  for (Index p = 0; p < planes; ++p) {
    const T* in = x.value().data() + p * hw;
    double acc = 0.0;
    for (Index i = 0; i < hw; ++i) acc += in[i];
    y[p] = static_cast<T>(acc / static_cast<double>(hw));
  }
  return make_result<T>("global_avg_pool", std::move(y), {x}, [planes, hw](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    if (!xn.requires_grad) return;
    T* gx = xn.grad_buffer().data();
    for (Index p = 0; p < planes; ++p) {
      const T d = self.grad[p] / static_cast<T>(hw);
      for (Index i = 0; i < hw; ++i) gx[p * hw + i] += d;
    }
  });
}

template <typename T>
Var<T> softmax_lastdim(const Var<T>& x) {
  const Shape& s = x.shape();
  if (s.rank() == 0) throw ConfigError("softmax_lastdim: scalar input");
  const Index cols = s[s.rank() - 1];
  if (cols == 0) throw ConfigError("softmax_lastdim: empty last axis");
  const Index rows = x.value().numel() / cols;
  Tensor<T> y(s);
  for (Index r = 0; r < rows; ++r) {
    const T* in = x.value().data() + r * cols;
    T* out = y.data() + r * cols;
    T mx = in[0];
    for (Index j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
    double total = 0.0;
    for (Index j = 0; j < cols; ++j) {
      out[j] = std::exp(in[j] - mx);
      total += out[j];
    }
    const T inv = static_cast<T>(1.0 / total);
    for (Index j = 0; j < cols; ++j) out[j] *= inv;
  }
  return make_result<T>("softmax_lastdim", y, {x}, [y, rows, cols](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    if (!xn.requires_grad) return;
    T* gx = xn.grad_buffer().data();
    for (Index r = 0; r < rows; ++r) {
      const T* p = y.data() + r * cols;
      const T* g = self.grad.data() + r * cols;
      double dotp = 0.0;
      for (Index j = 0; j < cols; ++j) dotp += static_cast<double>(g[j]) * p[j];
      for (Index j = 0; j < cols; ++j) gx[r * cols + j] += p[j] * (g[j] - static_cast<T>(dotp));
    }
  });
}

template <typename T>
Var<T> activate(const Var<T>& x, Activation kind) {
  const Tensor<T>& in = x.value();
  Tensor<T> y(in.shape());
  const Index n = in.numel();
  switch (kind) {
    case Activation::relu:
      for (Index i = 0; i < n; ++i) y[i] = in[i] > T(0) || std::isnan(in[i]) ? in[i] : T(0);
      break;
    case Activation::gelu:
      for (Index i = 0; i < n; ++i) {
        const T v = in[i];
        y[i] = T(0.5) * v * (T(1) + std::tanh(T(kSqrt2OverPi) * (v + T(kGeluCubic) * v * v * v)));
      }
      break;
    case Activation::sigmoid:
      for (Index i = 0; i < n; ++i) y[i] = T(1) / (T(1) + std::exp(-in[i]));
      break;
  }
  const char* name = kind == Activation::relu ? "relu" : kind == Activation::gelu ? "gelu" : "sigmoid";
  Tensor<T> saved = kind == Activation::sigmoid ? y : Tensor<T>{};
  return make_result<T>(name, std::move(y), {x}, [kind, saved = std::move(saved)](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    if (!xn.requires_grad) return;
    const Tensor<T>& in = xn.value();
    T* gx = xn.grad_buffer().data();
    const Index n = in.numel();
    switch (kind) {
      case Activation::relu:
        for (Index i = 0; i < n; ++i) {
          if (in[i] > T(0)) gx[i] += self.grad[i];
        }
        break;
      case Activation::gelu:
        for (Index i = 0; i < n; ++i) {
          const T v = in[i];
          const T u = T(kSqrt2OverPi) * (v + T(kGeluCubic) * v * v * v);
          const T t = std::tanh(u);
          const T du = T(kSqrt2OverPi) * (T(1) + T(3 * kGeluCubic) * v * v);
          gx[i] += self.grad[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du);
        }
        break;
      case Activation::sigmoid:
        for (Index i = 0; i < n; ++i) gx[i] += self.grad[i] * saved[i] * (T(1) - saved[i]);
        break;
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) throw ConfigError("add: shape " + a.shape().str() + " vs " + b.shape().str());
  Tensor<T> y = a.value();
  for (Index i = 0; i < y.numel(); ++i) y[i] += b.value()[i];
  return make_result<T>("add", std::move(y), {a, b}, [](Node<T>& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      T* g = in->grad_buffer().data();
      for (Index i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> add_broadcast(const Var<T>& x, const Var<T>& shared) {
  const Shape& xs = x.shape();
  const Shape& ss = shared.shape();
  if (xs.rank() < 1 || ss.rank() != xs.rank() || ss[0] != 1 ||
      ss.numel() * xs[0] != xs.numel()) {
    throw ConfigError("add_broadcast: shape " + xs.str() + " vs " + ss.str());
  }
  const Index per = ss.numel();
  Tensor<T> y = x.value();
  for (Index i = 0; i < y.numel(); ++i) y[i] += shared.value()[i % per];
  return make_result<T>("add_broadcast", std::move(y), {x, shared}, [per](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    Node<T>& sn = *self.inputs[1];
    if (xn.requires_grad) {
      T* g = xn.grad_buffer().data();
      for (Index i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i];
    }
    if (sn.requires_grad) {
      T* g = sn.grad_buffer().data();
      for (Index i = 0; i < self.grad.numel(); ++i) g[i % per] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) throw ConfigError("mul: shape " + a.shape().str() + " vs " + b.shape().str());
  Tensor<T> y = a.value();
  for (Index i = 0; i < y.numel(); ++i) y[i] *= b.value()[i];
  return make_result<T>("mul", std::move(y), {a, b}, [](Node<T>& self) {
    Node<T>& an = *self.inputs[0];
    Node<T>& bn = *self.inputs[1];
    for (Index i = 0; i < self.grad.numel(); ++i) {
      if (an.requires_grad) an.grad_buffer()[i] += self.grad[i] * bn.value()[i];
      if (bn.requires_grad) bn.grad_buffer()[i] += self.grad[i] * an.value()[i];
    }
  });
}

template <typename T>
Var<T> mul_channel(const Var<T>& gate, const Var<T>& x) {
  const Shape& s = x.shape();
  require_rank4("mul_channel", s);
  if (gate.shape() != Shape{s[0], s[1], 1, 1}) {
    throw ConfigError("mul_channel: gate " + gate.shape().str() + " does not match " + s.str());
  }
  const Index planes = s[0] * s[1], hw = s[2] * s[3];
  Tensor<T> y = x.value();
  for (Index p = 0; p < planes; ++p) {
    const T g = gate.value()[p];
    for (Index i = 0; i < hw; ++i) y[p * hw + i] *= g;
  }
  return make_result<T>("mul_channel", std::move(y), {gate, x}, [planes, hw](Node<T>& self) {
    Node<T>& gn = *self.inputs[0];
    Node<T>& xn = *self.inputs[1];
    for (Index p = 0; p < planes; ++p) {
      const T g = gn.value()[p];
      double acc = 0.0;
      for (Index i = 0; i < hw; ++i) {
        const Index k = p * hw + i;
        acc += static_cast<double>(self.grad[k]) * xn.value()[k];
        if (xn.requires_grad) xn.grad_buffer()[k] += self.grad[k] * g;
      }
      if (gn.requires_grad) gn.grad_buffer()[p] += static_cast<T>(acc);
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, double factor) {
  Tensor<T> y = x.value();
  const T f = static_cast<T>(factor);
  for (Index i = 0; i < y.numel(); ++i) y[i] *= f;
  return make_result<T>("scale", std::move(y), {x}, [f](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    if (!xn.requires_grad) return;
    T* g = xn.grad_buffer().data();
    for (Index i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i] * f;
  });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ConfigError("concat_channels: no inputs");
  const Shape& first = parts.front().shape();
  require_rank4("concat_channels", first);
  Index channels = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.rank() != 4 || s[0] != first[0] || s[2] != first[2] || s[3] != first[3]) {
      throw ConfigError("concat_channels: " + s.str() + " incompatible with " + first.str());
    }
    channels += s[1];
  }
  const Index batch = first[0], hw = first[2] * first[3];
  Tensor<T> y({batch, channels, first[2], first[3]});
  std::vector<Index> offsets;
  Index off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const Index c = p.dim(1);
    for (Index b = 0; b < batch; ++b) {
      std::copy_n(p.value().data() + b * c * hw, c * hw, y.data() + (b * channels + off) * hw);
    }
    off += c;
  }
  return make_result<T>("concat_channels", std::move(y), parts,
                        [offsets = std::move(offsets), batch, channels, hw](Node<T>& self) {
                          for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                            Node<T>& in = *self.inputs[k];
                            if (!in.requires_grad) continue;
                            const Index c = in.value().dim(1);
                            T* g = in.grad_buffer().data();
                            for (Index b = 0; b < batch; ++b) {
                              const T* src = self.grad.data() + (b * channels + offsets[k]) * hw;
                              for (Index i = 0; i < c * hw; ++i) g[b * c * hw + i] += src[i];
                            }
                          }
                        });
}

template <typename T>
Var<T> slice_channels(const Var<T>& x, Index begin, Index count) {
  const Shape& s = x.shape();
  require_rank4("slice_channels", s);
  if (begin < 0 || count <= 0 || begin + count > s[1]) {
    throw ConfigError("slice_channels: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                      ") outside " + s.str());
  }
  const Index batch = s[0], channels = s[1], hw = s[2] * s[3];
  Tensor<T> y({batch, count, s[2], s[3]});
  for (Index b = 0; b < batch; ++b) {
    std::copy_n(x.value().data() + (b * channels + begin) * hw, count * hw, y.data() + b * count * hw);
  }
  return make_result<T>("slice_channels", std::move(y), {x}, [=](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    if (!xn.requires_grad) return;
    T* g = xn.grad_buffer().data();
    for (Index b = 0; b < batch; ++b) {
      const T* src = self.grad.data() + b * count * hw;
      T* dst = g + (b * channels + begin) * hw;
      for (Index i = 0; i < count * hw; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> y = x.value().reshaped(std::move(shape));
  return make_result<T>("reshape", std::move(y), {x}, [](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    if (!xn.requires_grad) return;
    T* g = xn.grad_buffer().data();
    for (Index i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  double acc = 0.0;
  for (T v : x.value().span()) acc += v;
  return make_result<T>("sum", Tensor<T>({1}, static_cast<T>(acc)), {x}, [](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    if (!xn.requires_grad) return;
    T* g = xn.grad_buffer().data();
    for (Index i = 0; i < xn.value().numel(); ++i) g[i] += self.grad[0];
  });
}

template <typename T>
Var<T> dot(const Var<T>& x, const Tensor<T>& weights) {
  if (x.shape() != weights.shape()) throw ConfigError("dot: shape mismatch " + x.shape().str());
  double acc = 0.0;
  for (Index i = 0; i < weights.numel(); ++i) acc += static_cast<double>(x.value()[i]) * weights[i];
  return make_result<T>("dot", Tensor<T>({1}, static_cast<T>(acc)), {x}, [weights](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    if (!xn.requires_grad) return;
    T* g = xn.grad_buffer().data();
    for (Index i = 0; i < weights.numel(); ++i) g[i] += self.grad[0] * weights[i];
  });
}

template <typename T>
Var<T> bce(const Var<T>& probs, const Tensor<T>& target) {
  if (probs.shape() != target.shape()) {
    throw ConfigError("bce: prediction " + probs.shape().str() + " vs target " + target.shape().str());
  }
  const Index n = target.numel();
  if (n == 0) throw ConfigError("bce: empty input");
  const double lo = kBceClamp, hi = 1.0 - kBceClamp;
  double acc = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double p = std::clamp(static_cast<double>(probs.value()[i]), lo, hi);
    const double y = target[i];
    acc -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return make_result<T>("bce", Tensor<T>({1}, static_cast<T>(acc / static_cast<double>(n))), {probs},
                        [target, n, lo, hi](Node<T>& self) {
                          Node<T>& pn = *self.inputs[0];
                          if (!pn.requires_grad) return;
                          T* g = pn.grad_buffer().data();
                          const double scale_ = static_cast<double>(self.grad[0]) / static_cast<double>(n);
                          for (Index i = 0; i < n; ++i) {
                            const double p = pn.value()[i];
                            if (p < lo || p > hi) continue;  // clamp has zero slope outside the range
                            const double y = target[i];
                            g[i] += static_cast<T>(scale_ * (p - y) / (p * (1.0 - p)));
                          }
                        });
}

#define SCT_INSTANTIATE(T)                                                      \
  template Var<T> resample_bilinear(const Var<T>&, Index, Index);               \
  template Var<T> max_pool2x2(const Var<T>&);                                   \
  template Var<T> global_avg_pool(const Var<T>&);                               \
  template Var<T> softmax_lastdim(const Var<T>&);                               \
  template Var<T> activate(const Var<T>&, Activation);                          \
  template Var<T> add(const Var<T>&, const Var<T>&);                            \
  template Var<T> add_broadcast(const Var<T>&, const Var<T>&);                  \
  template Var<T> mul(const Var<T>&, const Var<T>&);                            \
  template Var<T> mul_channel(const Var<T>&, const Var<T>&);                    \
  template Var<T> scale(const Var<T>&, double);                                 \
  template Var<T> concat_channels(const std::vector<Var<T>>&);                  \
  template Var<T> slice_channels(const Var<T>&, Index, Index);                  \
  template Var<T> reshape(const Var<T>&, Shape);                                \
  template Var<T> sum(const Var<T>&);                                           \
  template Var<T> dot(const Var<T>&, const Tensor<T>&);                         \
  template Var<T> bce(const Var<T>&, const Tensor<T>&);

SCT_INSTANTIATE(float)
SCT_INSTANTIATE(double)

}  // namespace sct
