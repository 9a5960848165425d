#include <Eigen/Core>

#include "sctrans/ops.hpp"

namespace sct {
namespace {

thread_local Index tls_flops = 0;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

struct Geometry {
  Index batch, in_c, h, w, out_c, oh, ow, cin_g, cout_g, patch;
};

Geometry geometry(const Shape& x, const ConvSpec& s) {
  Geometry g{};
  g.batch = x[0];
  g.in_c = x[1];
  g.h = x[2];
  g.w = x[3];
  g.out_c = s.out_channels;
  g.oh = s.out_h(g.h);
  g.ow = s.out_w(g.w);
  g.cin_g = s.in_channels / s.groups;
  g.cout_g = s.out_channels / s.groups;
  g.patch = g.cin_g * s.kernel_h * s.kernel_w;
  return g;
}

bool is_pointwise(const ConvSpec& s) {
  return s.kernel_h == 1 && s.kernel_w == 1 && s.stride_h == 1 && s.stride_w == 1 && s.pad_h == 0 &&
         s.pad_w == 0;
}

// Unfolds channels [c0, c0 + g.cin_g) of one sample into a (patch, oh*ow) matrix.
template <typename T>
void im2col(const T* img, const Geometry& g, const ConvSpec& s, Index c0, T* col) {
  const Index n = g.oh * g.ow;
  for (Index c = 0; c < g.cin_g; ++c) {
    const T* plane = img + (c0 + c) * g.h * g.w;
    for (Index ky = 0; ky < s.kernel_h; ++ky) {
      for (Index kx = 0; kx < s.kernel_w; ++kx) {
        T* row = col + ((c * s.kernel_h + ky) * s.kernel_w + kx) * n;
        for (Index oy = 0; oy < g.oh; ++oy) {
          const Index iy = oy * s.stride_h - s.pad_h + ky;
          T* out = row + oy * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill(out, out + g.ow, T(0));
            continue;
          }
          const T* src = plane + iy * g.w;
          for (Index ox = 0; ox < g.ow; ++ox) {
            const Index ix = ox * s.stride_w - s.pad_w + kx;
            out[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const Geometry& g, const ConvSpec& s, Index c0, T* img) {
  const Index n = g.oh * g.ow;
  for (Index c = 0; c < g.cin_g; ++c) {
    T* plane = img + (c0 + c) * g.h * g.w;
    for (Index ky = 0; ky < s.kernel_h; ++ky) {
      for (Index kx = 0; kx < s.kernel_w; ++kx) {
        const T* row = col + ((c * s.kernel_h + ky) * s.kernel_w + kx) * n;
        for (Index oy = 0; oy < g.oh; ++oy) {
          const Index iy = oy * s.stride_h - s.pad_h + ky;
          if (iy < 0 || iy >= g.h) continue;
          T* dst = plane + iy * g.w;
          const T* in = row + oy * g.ow;
          for (Index ox = 0; ox < g.ow; ++ox) {
            const Index ix = ox * s.stride_w - s.pad_w + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += in[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void depthwise_forward(const Tensor<T>& x, const Tensor<T>& w, const Geometry& g, const ConvSpec& s,
                       Tensor<T>& y) {
  for (Index b = 0; b < g.batch; ++b) {
    for (Index c = 0; c < g.out_c; ++c) {
      const T* in = x.data() + (b * g.in_c + c) * g.h * g.w;
      const T* k = w.data() + c * s.kernel_h * s.kernel_w;
      T* out = y.data() + (b * g.out_c + c) * g.oh * g.ow;
      for (Index oy = 0; oy < g.oh; ++oy) {
        for (Index ox = 0; ox < g.ow; ++ox) {
          T acc = T(0);
          for (Index ky = 0; ky < s.kernel_h; ++ky) {
            const Index iy = oy * s.stride_h - s.pad_h + ky;
            if (iy < 0 || iy >= g.h) continue;
            for (Index kx = 0; kx < s.kernel_w; ++kx) {
              const Index ix = ox * s.stride_w - s.pad_w + kx;
              if (ix < 0 || ix >= g.w) continue;
              acc += k[ky * s.kernel_w + kx] * in[iy * g.w + ix];
            }
          }
          out[oy * g.ow + ox] += acc;
        }
      }
    }
  }
}

template <typename T>
void depthwise_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, const Geometry& g,
                        const ConvSpec& s, Tensor<T>* dx, Tensor<T>* dw) {
  for (Index b = 0; b < g.batch; ++b) {
    for (Index c = 0; c < g.out_c; ++c) {
      const T* in = x.data() + (b * g.in_c + c) * g.h * g.w;
      const T* k = w.data() + c * s.kernel_h * s.kernel_w;
      const T* go = dy.data() + (b * g.out_c + c) * g.oh * g.ow;
      T* gi = dx ? dx->data() + (b * g.in_c + c) * g.h * g.w : nullptr;
      T* gk = dw ? dw->data() + c * s.kernel_h * s.kernel_w : nullptr;
      for (Index oy = 0; oy < g.oh; ++oy) {
        for (Index ox = 0; ox < g.ow; ++ox) {
          const T d = go[oy * g.ow + ox];
          for (Index ky = 0; ky < s.kernel_h; ++ky) {
            const Index iy = oy * s.stride_h - s.pad_h + ky;
            if (iy < 0 || iy >= g.h) continue;
            for (Index kx = 0; kx < s.kernel_w; ++kx) {
              const Index ix = ox * s.stride_w - s.pad_w + kx;
              if (ix < 0 || ix >= g.w) continue;
              if (gi) gi[iy * g.w + ix] += k[ky * s.kernel_w + kx] * d;
              if (gk) gk[ky * s.kernel_w + kx] += in[iy * g.w + ix] * d;
            }
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, const ConvSpec& s) {
  const Geometry g = geometry(x.shape(), s);
  Tensor<T> y({g.batch, g.out_c, g.oh, g.ow});
  const Index n = g.oh * g.ow;
  if (s.is_depthwise()) {
    depthwise_forward(x, w, g, s, y);
  } else {
    const bool pointwise = is_pointwise(s);
    std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(g.patch * n));
    for (Index b = 0; b < g.batch; ++b) {
      const T* img = x.data() + b * g.in_c * g.h * g.w;
      for (Index grp = 0; grp < s.groups; ++grp) {
        const T* src = img + grp * g.cin_g * g.h * g.w;
        if (!pointwise) {
          im2col(img, g, s, grp * g.cin_g, col.data());
          src = col.data();
        }
        ConstMatMap<T> cols(src, g.patch, n);
        ConstMatMap<T> kernel(w.data() + grp * g.cout_g * g.patch, g.cout_g, g.patch);
        MatMap<T> out(y.data() + (b * g.out_c + grp * g.cout_g) * n, g.cout_g, n);
        out.noalias() = kernel * cols;
      }
    }
  }
  if (bias != nullptr) {
    for (Index b = 0; b < g.batch; ++b) {
      for (Index c = 0; c < g.out_c; ++c) {
        T* out = y.data() + (b * g.out_c + c) * n;
        const T v = (*bias)[c];
        for (Index i = 0; i < n; ++i) out[i] += v;
      }
    }
  }
  tls_flops += g.batch * s.flops(g.h, g.w);
  return y;
}

template <typename T>
void conv_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, const ConvSpec& s,
                   Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
  const Geometry g = geometry(x.shape(), s);
  const Index n = g.oh * g.ow;
  if (db != nullptr) {
    for (Index b = 0; b < g.batch; ++b) {
      for (Index c = 0; c < g.out_c; ++c) {
        const T* go = dy.data() + (b * g.out_c + c) * n;
        T acc = T(0);
        for (Index i = 0; i < n; ++i) acc += go[i];
        (*db)[c] += acc;
      }
    }
  }
  if (s.is_depthwise()) {
    depthwise_backward(x, w, dy, g, s, dx, dw);
    return;
  }
  const bool pointwise = is_pointwise(s);
  std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(g.patch * n));
  std::vector<T> dcol(pointwise || dx == nullptr ? 0 : static_cast<std::size_t>(g.patch * n));
  for (Index b = 0; b < g.batch; ++b) {
    const T* img = x.data() + b * g.in_c * g.h * g.w;
    for (Index grp = 0; grp < s.groups; ++grp) {
      ConstMatMap<T> grad_out(dy.data() + (b * g.out_c + grp * g.cout_g) * n, g.cout_g, n);
      ConstMatMap<T> kernel(w.data() + grp * g.cout_g * g.patch, g.cout_g, g.patch);
      if (dw != nullptr) {
        const T* src = img + grp * g.cin_g * g.h * g.w;
        if (!pointwise) {
          im2col(img, g, s, grp * g.cin_g, col.data());
          src = col.data();
        }
        ConstMatMap<T> cols(src, g.patch, n);
        MatMap<T> gk(dw->data() + grp * g.cout_g * g.patch, g.cout_g, g.patch);
        gk.noalias() += grad_out * cols.transpose();
      }
      if (dx != nullptr) {
        if (pointwise) {
          MatMap<T> gi(dx->data() + (b * g.in_c + grp * g.cin_g) * n, g.cin_g, n);
          gi.noalias() += kernel.transpose() * grad_out;
        } else {
          MatMap<T> gc(dcol.data(), g.patch, n);
          gc.noalias() = kernel.transpose() * grad_out;
          col2im(dcol.data(), g, s, grp * g.cin_g, dx->data() + b * g.in_c * g.h * g.w);
        }
      }
    }
  }
}

}  // namespace

Index flop_counter() { return tls_flops; }
void reset_flop_counter() { tls_flops = 0; }

void ConvSpec::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("conv2d: " + m); };
  if (in_channels <= 0 || out_channels <= 0) fail("channel counts must be positive");
  if (groups <= 0 || in_channels % groups != 0 || out_channels % groups != 0) {
    fail("in_channels " + std::to_string(in_channels) + " and out_channels " +
         std::to_string(out_channels) + " must be divisible by groups " + std::to_string(groups));
  }
  if (kernel_h <= 0 || kernel_w <= 0 || stride_h <= 0 || stride_w <= 0 || pad_h < 0 || pad_w < 0) {
    fail("invalid kernel/stride/padding");
  }
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const ConvSpec& spec, const Var<T>& weight, const Var<T>& bias) {
  spec.validate();
  const Shape& xs = x.shape();
  if (xs.rank() != 4 || xs[1] != spec.in_channels) {
    throw ConfigError("conv2d: input " + xs.str() + " does not have " +
                      std::to_string(spec.in_channels) + " channels");
  }
  if (weight.shape() != spec.weight_shape()) {
    throw ConfigError("conv2d: weight " + weight.shape().str() + " expected " +
                      spec.weight_shape().str());
  }
  if (spec.has_bias != bias.valid()) throw ConfigError("conv2d: bias presence does not match spec");
  if (bias.valid() && bias.shape() != Shape{spec.out_channels}) {
    throw ConfigError("conv2d: bias shape " + bias.shape().str());
  }
  if (xs[2] + 2 * spec.pad_h < spec.kernel_h || xs[3] + 2 * spec.pad_w < spec.kernel_w ||
      spec.out_h(xs[2]) <= 0 || spec.out_w(xs[3]) <= 0) {
    throw ConfigError("conv2d: empty spatial output for input " + xs.str());
  }
  Tensor<T> y = conv_forward(x.value(), weight.value(), bias.valid() ? &bias.value() : nullptr, spec);
  std::vector<Var<T>> inputs{x, weight};
  if (bias.valid()) inputs.push_back(bias);
  return make_result<T>("conv2d", std::move(y), std::move(inputs), [spec](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    Node<T>& wn = *self.inputs[1];
    Tensor<T>* db = nullptr;
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) db = &self.inputs[2]->grad_buffer();
    conv_backward(xn.value(), wn.value(), self.grad, spec, xn.requires_grad ? &xn.grad_buffer() : nullptr,
                  wn.requires_grad ? &wn.grad_buffer() : nullptr, db);
  });
}

template <typename T>
Var<T> conv1d_channel(const Var<T>& x, const Var<T>& kernel) {
  const Shape& xs = x.shape();
  if (xs.rank() != 4 || xs[2] != 1 || xs[3] != 1) {
    throw ConfigError("conv1d_channel: expected (b, c, 1, 1) input, got " + xs.str());
  }
  if (kernel.shape().rank() != 1) throw ConfigError("conv1d_channel: kernel must be rank 1");
  const Index k = kernel.dim(0);
  if (k % 2 == 0) throw ConfigError("conv1d_channel: kernel size must be odd, got " + std::to_string(k));
  const Index batch = xs[0], c = xs[1], pad = (k - 1) / 2;
  Tensor<T> y(xs);
  const T* in = x.value().data();
  const T* w = kernel.value().data();
  for (Index b = 0; b < batch; ++b) {
    for (Index i = 0; i < c; ++i) {
      T acc = T(0);
      for (Index j = 0; j < k; ++j) {
        const Index src = i + j - pad;
        if (src >= 0 && src < c) acc += w[j] * in[b * c + src];
      }
      y[b * c + i] = acc;
    }
  }
  tls_flops += 2 * batch * c * k;
  return make_result<T>("conv1d_channel", std::move(y), {x, kernel}, [batch, c, k, pad](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    Node<T>& kn = *self.inputs[1];
    const T* in = xn.value().data();
    const T* w = kn.value().data();
    const T* go = self.grad.data();
    T* gx = xn.requires_grad ? xn.grad_buffer().data() : nullptr;
    T* gk = kn.requires_grad ? kn.grad_buffer().data() : nullptr;
    for (Index b = 0; b < batch; ++b) {
      for (Index i = 0; i < c; ++i) {
        const T d = go[b * c + i];
        for (Index j = 0; j < k; ++j) {
          const Index src = i + j - pad;
          if (src < 0 || src >= c) continue;
          if (gx) gx[b * c + src] += w[j] * d;
          if (gk) gk[j] += in[b * c + src] * d;
        }
      }
    }
  });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool transpose_a, bool transpose_b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.rank() != 3 || bs.rank() != 3 || as[0] != bs[0]) {
    throw ConfigError("matmul: expected rank-3 operands with equal batch, got " + as.str() + " and " +
                      bs.str());
  }
  const Index batch = as[0];
  const Index m = transpose_a ? as[2] : as[1];
  const Index k = transpose_a ? as[1] : as[2];
  const Index kb = transpose_b ? bs[2] : bs[1];
  const Index n = transpose_b ? bs[1] : bs[2];
  if (k != kb) throw ConfigError("matmul: inner extents differ for " + as.str() + " x " + bs.str());
  Tensor<T> y({batch, m, n});
  for (Index i = 0; i < batch; ++i) {
    ConstMatMap<T> am(a.value().data() + i * as[1] * as[2], as[1], as[2]);
    ConstMatMap<T> bm(b.value().data() + i * bs[1] * bs[2], bs[1], bs[2]);
    MatMap<T> out(y.data() + i * m * n, m, n);
    if (transpose_a && transpose_b) {
      out.noalias() = am.transpose() * bm.transpose();
    } else if (transpose_a) {
      out.noalias() = am.transpose() * bm;
    } else if (transpose_b) {
      out.noalias() = am * bm.transpose();
    } else {
      out.noalias() = am * bm;
    }
  }
  tls_flops += 2 * batch * m * k * n;
  return make_result<T>("matmul", std::move(y), {a, b}, [=](Node<T>& self) {
    Node<T>& an = *self.inputs[0];
    Node<T>& bn = *self.inputs[1];
    for (Index i = 0; i < batch; ++i) {
      ConstMatMap<T> g(self.grad.data() + i * m * n, m, n);
      ConstMatMap<T> am(an.value().data() + i * as[1] * as[2], as[1], as[2]);
      ConstMatMap<T> bm(bn.value().data() + i * bs[1] * bs[2], bs[1], bs[2]);
      if (an.requires_grad) {
        // dOp(A) = G * Op(B)^T
        MatMap<T> ga(an.grad_buffer().data() + i * as[1] * as[2], as[1], as[2]);
        if (!transpose_a && !transpose_b) ga.noalias() += g * bm.transpose();
        if (!transpose_a && transpose_b) ga.noalias() += g * bm;
        if (transpose_a && !transpose_b) ga.noalias() += bm * g.transpose();
        if (transpose_a && transpose_b) ga.noalias() += bm.transpose() * g.transpose();
      }
      if (bn.requires_grad) {
        // dOp(B) = Op(A)^T * G
        MatMap<T> gb(bn.grad_buffer().data() + i * bs[1] * bs[2], bs[1], bs[2]);
        if (!transpose_a && !transpose_b) gb.noalias() += am.transpose() * g;
        if (!transpose_a && transpose_b) gb.noalias() += g.transpose() * am;
        if (transpose_a && !transpose_b) gb.noalias() += am * g;
        if (transpose_a && transpose_b) gb.noalias() += g.transpose() * am.transpose();
      }
    }
  });
}

#define SCT_INSTANTIATE(T)                                                                    \
  template Var<T> conv2d(const Var<T>&, const ConvSpec&, const Var<T>&, const Var<T>&);       \
  template Var<T> conv1d_channel(const Var<T>&, const Var<T>&);                               \
  template Var<T> matmul(const Var<T>&, const Var<T>&, bool, bool);

SCT_INSTANTIATE(float)
SCT_INSTANTIATE(double)

}  // namespace sct
