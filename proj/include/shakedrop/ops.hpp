#ifndef SHAKEDROP_OPS_HPP_
#define SHAKEDROP_OPS_HPP_

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "shakedrop/autograd.hpp"
#include "shakedrop/tensor.hpp"

namespace shakedrop {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline void require_4d(const Tensor& t, const char* what) {
  require(t.ndim() == 4, std::string(what) + ": expected NCHW tensor, got " + shape_str(t.shape()));
}

// input C x H x W -> cols (C*k*k) x (Ho*Wo), zero padding.
inline void im2col(const Real* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
                   Real* cols) {
  const int P = Ho * Wo;
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        Real* row = cols + ((c * k + ki) * k + kj) * P;
        for (int oh = 0; oh < Ho; ++oh) {
          const int ih = oh * stride - pad + ki;
          for (int ow = 0; ow < Wo; ++ow) {
            const int iw = ow * stride - pad + kj;
            row[oh * Wo + ow] =
                (ih >= 0 && ih < H && iw >= 0 && iw < W) ? x[(c * H + ih) * W + iw] : 0.0;
          }
        }
      }
    }
  }
}

// Scatter-add of dcols back onto the input layout.
inline void col2im_add(const Real* cols, int C, int H, int W, int k, int stride, int pad, int Ho,
                       int Wo, Real* dx) {
  const int P = Ho * Wo;
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const Real* row = cols + ((c * k + ki) * k + kj) * P;
        for (int oh = 0; oh < Ho; ++oh) {
          const int ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= H) continue;
          for (int ow = 0; ow < Wo; ++ow) {
            const int iw = ow * stride - pad + kj;
            if (iw < 0 || iw >= W) continue;
            dx[(c * H + ih) * W + iw] += row[oh * Wo + ow];
          }
        }
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline Value add(Tape& t, Value a, Value b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  detail::require(av.same_shape(bv), "add: shape mismatch " + shape_str(av.shape()) + " vs " +
                                         shape_str(bv.shape()));
  Tensor out = Tensor::zeros_like(av);
  for (int i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
  return t.emit("add", std::move(out), {a.idx, b.idx}, [ai = a.idx, bi = b.idx](Tape& t, int self) {
    const Tensor& g = t.grad_buffer(self);
    if (t.requires_grad_at(ai)) {
      Tensor& da = t.grad_buffer(ai);
      for (int i = 0; i < g.numel(); ++i) da[i] += g[i];
    }
    if (t.requires_grad_at(bi)) {
      Tensor& db = t.grad_buffer(bi);
      for (int i = 0; i < g.numel(); ++i) db[i] += g[i];
    }
  });
}

inline Value mul(Tape& t, Value a, Value b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  detail::require(av.same_shape(bv), "mul: shape mismatch");
  Tensor out = Tensor::zeros_like(av);
  for (int i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
  return t.emit("mul", std::move(out), {a.idx, b.idx}, [ai = a.idx, bi = b.idx](Tape& t, int self) {
    const Tensor& g = t.grad_buffer(self);
    const Tensor& av = t.value_at(ai);
    const Tensor& bv = t.value_at(bi);
    if (t.requires_grad_at(ai)) {
      Tensor& da = t.grad_buffer(ai);
      for (int i = 0; i < g.numel(); ++i) da[i] += g[i] * bv[i];
    }
    if (t.requires_grad_at(bi)) {
      Tensor& db = t.grad_buffer(bi);
      for (int i = 0; i < g.numel(); ++i) db[i] += g[i] * av[i];
    }
  });
}

inline Value relu(Tape& t, Value x) {
  const Tensor& xv = t.value(x);
  Tensor out = Tensor::zeros_like(xv);
  // Subgradient at 0 is 0.
  for (int i = 0; i < out.numel(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return t.emit("relu", std::move(out), {x.idx}, [xi = x.idx](Tape& t, int self) {
    const Tensor& g = t.grad_buffer(self);
    const Tensor& xv = t.value_at(xi);
    Tensor& dx = t.grad_buffer(xi);
    for (int i = 0; i < g.numel(); ++i)
      if (xv[i] > 0.0) dx[i] += g[i];
  });
}

// y = coeff (*) x with the same coefficient applied in forward and backward.
// coeff broadcasts over x (scalar or size-1 dims).
inline Value scale_by_const(Tape& t, Value x, Tensor coeff) {
  const Tensor& xv = t.value(x);
  Tensor out = broadcast_mul(coeff, xv);
  return t.emit("scale", std::move(out), {x.idx},
                [xi = x.idx, c = std::move(coeff)](Tape& t, int self) {
                  const Tensor& g = t.grad_buffer(self);
                  add_broadcast_mul(t.grad_buffer(xi), c, g);
                });
}

// Core decoupled scaling node: forward multiplies by fwd_coeff, backward
// multiplies the upstream gradient by whatever bwd_coeff_provider returns.
// The provider runs when backward() executes, so coefficient draws that
// should happen at backward time (the beta of ShakeDrop) happen there.
inline Value decoupled_scale(Tape& t, Value x, Tensor fwd_coeff,
                             std::function<Tensor()> bwd_coeff_provider) {
  const Tensor& xv = t.value(x);
  Tensor out = broadcast_mul(fwd_coeff, xv);
  return t.emit("decoupled_scale", std::move(out), {x.idx},
                [xi = x.idx, provider = std::move(bwd_coeff_provider)](Tape& t, int self) {
                  const Tensor& g = t.grad_buffer(self);
                  add_broadcast_mul(t.grad_buffer(xi), provider(), g);
                });
}

inline Value sum(Tape& t, Value x) {
  const Tensor& xv = t.value(x);
  Real s = 0.0;
  for (int i = 0; i < xv.numel(); ++i) s += xv[i];
  return t.emit("sum", Tensor::scalar(s), {x.idx}, [xi = x.idx](Tape& t, int self) {
    const Real g = t.grad_buffer(self)[0];
    Tensor& dx = t.grad_buffer(xi);
    for (int i = 0; i < dx.numel(); ++i) dx[i] += g;
  });
}

// ---------------------------------------------------------------------------
// Dense layers
// ---------------------------------------------------------------------------

// input N x D, weight D x K, bias K -> N x K.
inline Value linear(Tape& t, Value input, Value weight, Value bias) {
  const Tensor& x = t.value(input);
  const Tensor& w = t.value(weight);
  const Tensor& b = t.value(bias);
  detail::require(x.ndim() == 2 && w.ndim() == 2 && b.ndim() == 1, "linear: bad ranks");
  const int N = x.dim(0), D = x.dim(1), K = w.dim(1);
  detail::require(w.dim(0) == D, "linear: inner dimensions disagree: input " +
                                     shape_str(x.shape()) + ", weight " + shape_str(w.shape()));
  detail::require(b.dim(0) == K, "linear: bias length mismatch");
  Tensor out(Shape{N, K});
  {
    ConstMatMap xm(x.data(), N, D), wm(w.data(), D, K);
    MatMap om(out.data(), N, K);
    om.noalias() = xm * wm;
    for (int n = 0; n < N; ++n)
      for (int k = 0; k < K; ++k) out[n * K + k] += b[k];
  }
  return t.emit("linear", std::move(out), {input.idx, weight.idx, bias.idx},
                [xi = input.idx, wi = weight.idx, bi = bias.idx, N, D, K](Tape& t, int self) {
                  const Tensor& g = t.grad_buffer(self);
                  ConstMatMap gm(g.data(), N, K);
                  ConstMatMap xm(t.value_at(xi).data(), N, D);
                  ConstMatMap wm(t.value_at(wi).data(), D, K);
                  if (t.requires_grad_at(xi)) {
                    MatMap dxm(t.grad_buffer(xi).data(), N, D);
                    dxm.noalias() += gm * wm.transpose();
                  }
                  if (t.requires_grad_at(wi)) {
                    MatMap dwm(t.grad_buffer(wi).data(), D, K);
                    dwm.noalias() += xm.transpose() * gm;
                  }
                  if (t.requires_grad_at(bi)) {
                    Tensor& db = t.grad_buffer(bi);
                    for (int n = 0; n < N; ++n)
                      for (int k = 0; k < K; ++k) db[k] += g[n * K + k];
                  }
                });
}

// input N x C x H x W, weight O x I x kH x kW (kH == kW), no bias.
inline Value conv2d(Tape& t, Value input, Value weight, int stride, int padding) {
  const Tensor& x = t.value(input);
  const Tensor& w = t.value(weight);
  detail::require_4d(x, "conv2d input");
  detail::require_4d(w, "conv2d weight");
  detail::require(stride >= 1, "conv2d: stride must be >= 1");
  detail::require(padding >= 0, "conv2d: padding must be >= 0");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int O = w.dim(0), kH = w.dim(2), kW = w.dim(3);
  detail::require(w.dim(1) == C, "conv2d: input channels " + std::to_string(C) +
                                     " != weight input channels " + std::to_string(w.dim(1)));
  detail::require(kH == kW, "conv2d: only square kernels supported");
  const int k = kH;
  detail::require(H + 2 * padding >= k && W + 2 * padding >= k, "conv2d: kernel larger than input");
  detail::require((H + 2 * padding - k) % stride == 0 && (W + 2 * padding - k) % stride == 0,
                  "conv2d: output size not exact for input " + shape_str(x.shape()) + ", kernel " +
                      std::to_string(k) + ", stride " + std::to_string(stride) + ", padding " +
                      std::to_string(padding));
  const int Ho = (H + 2 * padding - k) / stride + 1;
  const int Wo = (W + 2 * padding - k) / stride + 1;
  const int P = Ho * Wo, CKK = C * k * k;

  Tensor out(Shape{N, O, Ho, Wo});
  std::vector<Real> cols(static_cast<std::size_t>(CKK) * P);
  ConstMatMap wm(w.data(), O, CKK);
  for (int n = 0; n < N; ++n) {
    detail::im2col(x.data() + static_cast<std::size_t>(n) * C * H * W, C, H, W, k, stride, padding,
                   Ho, Wo, cols.data());
    ConstMatMap cm(cols.data(), CKK, P);
    MatMap om(out.data() + static_cast<std::size_t>(n) * O * P, O, P);
    om.noalias() = wm * cm;
  }

  auto backward = [xi = input.idx, wi = weight.idx, stride, padding, N, C, H, W, O, k, Ho,
                   Wo](Tape& t, int self) {
    const Tensor& g = t.grad_buffer(self);
    const Tensor& x = t.value_at(xi);
    const Tensor& w = t.value_at(wi);
    const int P = Ho * Wo, CKK = C * k * k;
    const bool need_x = t.requires_grad_at(xi);
    const bool need_w = t.requires_grad_at(wi);
    std::vector<Real> cols(static_cast<std::size_t>(CKK) * P);
    ConstMatMap wm(w.data(), O, CKK);
    for (int n = 0; n < N; ++n) {
      ConstMatMap gm(g.data() + static_cast<std::size_t>(n) * O * P, O, P);
      if (need_w) {
        detail::im2col(x.data() + static_cast<std::size_t>(n) * C * H * W, C, H, W, k, stride,
                       padding, Ho, Wo, cols.data());
        ConstMatMap cm(cols.data(), CKK, P);
        MatMap dwm(t.grad_buffer(wi).data(), O, CKK);
        dwm.noalias() += gm * cm.transpose();
      }
      if (need_x) {
        MatMap dcm(cols.data(), CKK, P);
        dcm.noalias() = wm.transpose() * gm;
        detail::col2im_add(cols.data(), C, H, W, k, stride, padding, Ho, Wo,
                           t.grad_buffer(xi).data() + static_cast<std::size_t>(n) * C * H * W);
      }
    }
  };
  return t.emit("conv2d", std::move(out), {input.idx, weight.idx}, std::move(backward));
}

// ---------------------------------------------------------------------------
// Pooling, shortcuts, channel plumbing
// ---------------------------------------------------------------------------

// N x C x H x W -> N x C (spatial mean).
inline Value global_avg_pool(Tape& t, Value x) {
  const Tensor& xv = t.value(x);
  detail::require_4d(xv, "global_avg_pool");
  const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const Real inv = 1.0 / (H * W);
  Tensor out(Shape{N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      Real s = 0.0;
      const Real* p = xv.data() + ((n * C + c) * H * W);
      for (int i = 0; i < H * W; ++i) s += p[i];
      out[n * C + c] = s * inv;
    }
  return t.emit("global_avg_pool", std::move(out), {x.idx},
                [xi = x.idx, N, C, H, W, inv](Tape& t, int self) {
                  const Tensor& g = t.grad_buffer(self);
                  Tensor& dx = t.grad_buffer(xi);
                  for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c) {
                      const Real gv = g[n * C + c] * inv;
                      Real* p = dx.data() + ((n * C + c) * H * W);
                      for (int i = 0; i < H * W; ++i) p[i] += gv;
                    }
                });
}

// Spatial stride-2 subsampling (picks rows/columns 0, 2, 4, ...). Used by the
// parameter-free shortcut in downsampling blocks.
inline Value subsample2(Tape& t, Value x) {
  const Tensor& xv = t.value(x);
  detail::require_4d(xv, "subsample2");
  const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int Ho = (H + 1) / 2, Wo = (W + 1) / 2;
  Tensor out(Shape{N, C, Ho, Wo});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < Ho; ++h)
        for (int w = 0; w < Wo; ++w) out.at(n, c, h, w) = xv.at(n, c, 2 * h, 2 * w);
  return t.emit("subsample2", std::move(out), {x.idx},
                [xi = x.idx, N, C, Ho, Wo](Tape& t, int self) {
                  const Tensor& g = t.grad_buffer(self);
                  Tensor& dx = t.grad_buffer(xi);
                  for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c)
                      for (int h = 0; h < Ho; ++h)
                        for (int w = 0; w < Wo; ++w)
                          dx.at(n, c, 2 * h, 2 * w) += g.at(n, c, h, w);
                });
}

// Zero-pads channels at the end: N x C x H x W -> N x out_channels x H x W.
inline Value pad_channels(Tape& t, Value x, int out_channels) {
  const Tensor& xv = t.value(x);
  detail::require_4d(xv, "pad_channels");
  const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  detail::require(out_channels >= C, "pad_channels: cannot shrink channels");
  if (out_channels == C) return x;
  Tensor out(Shape{N, out_channels, H, W});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      std::copy_n(xv.data() + ((n * C + c) * H * W), H * W,
                  out.data() + ((n * out_channels + c) * H * W));
  return t.emit("pad_channels", std::move(out), {x.idx},
                [xi = x.idx, N, C, H, W, out_channels](Tape& t, int self) {
                  const Tensor& g = t.grad_buffer(self);
                  Tensor& dx = t.grad_buffer(xi);
                  for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c) {
                      const Real* gp = g.data() + ((n * out_channels + c) * H * W);
                      Real* dp = dx.data() + ((n * C + c) * H * W);
                      for (int i = 0; i < H * W; ++i) dp[i] += gp[i];
                    }
                });
}

// Channel slice [c0, c1) of an NCHW tensor (used for grouped convolutions).
inline Value slice_channels(Tape& t, Value x, int c0, int c1) {
  const Tensor& xv = t.value(x);
  detail::require_4d(xv, "slice_channels");
  const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  detail::require(0 <= c0 && c0 < c1 && c1 <= C, "slice_channels: bad range");
  const int Cs = c1 - c0;
  Tensor out(Shape{N, Cs, H, W});
  for (int n = 0; n < N; ++n)
    std::copy_n(xv.data() + ((n * C + c0) * H * W), static_cast<std::size_t>(Cs) * H * W,
                out.data() + (static_cast<std::size_t>(n) * Cs * H * W));
  return t.emit("slice_channels", std::move(out), {x.idx},
                [xi = x.idx, N, C, H, W, c0, Cs](Tape& t, int self) {
                  const Tensor& g = t.grad_buffer(self);
                  Tensor& dx = t.grad_buffer(xi);
                  for (int n = 0; n < N; ++n) {
                    const Real* gp = g.data() + (static_cast<std::size_t>(n) * Cs * H * W);
                    Real* dp = dx.data() + ((n * C + c0) * H * W);
                    for (int i = 0; i < Cs * H * W; ++i) dp[i] += gp[i];
                  }
                });
}

inline Value concat_channels(Tape& t, const std::vector<Value>& xs) {
  detail::require(!xs.empty(), "concat_channels: empty input list");
  if (xs.size() == 1) return xs[0];
  const Tensor& first = t.value(xs[0]);
  detail::require_4d(first, "concat_channels");
  const int N = first.dim(0), H = first.dim(2), W = first.dim(3);
  int Ctot = 0;
  std::vector<int> channels;
  std::vector<int> idxs;
  for (Value v : xs) {
    const Tensor& tv = t.value(v);
    detail::require(tv.ndim() == 4 && tv.dim(0) == N && tv.dim(2) == H && tv.dim(3) == W,
                    "concat_channels: incompatible part shapes");
    channels.push_back(tv.dim(1));
    idxs.push_back(v.idx);
    Ctot += tv.dim(1);
  }
  Tensor out(Shape{N, Ctot, H, W});
  int off = 0;
  for (std::size_t p = 0; p < xs.size(); ++p) {
    const Tensor& tv = t.value(xs[p]);
    const int Cp = channels[p];
    for (int n = 0; n < N; ++n)
      std::copy_n(tv.data() + (static_cast<std::size_t>(n) * Cp * H * W),
                  static_cast<std::size_t>(Cp) * H * W, out.data() + ((n * Ctot + off) * H * W));
    off += Cp;
  }
  return t.emit("concat_channels", std::move(out), idxs,
                [idxs, channels, N, H, W, Ctot](Tape& t, int self) {
                  const Tensor& g = t.grad_buffer(self);
                  int off = 0;
                  for (std::size_t p = 0; p < idxs.size(); ++p) {
                    const int Cp = channels[p];
                    if (t.requires_grad_at(idxs[p])) {
                      Tensor& dx = t.grad_buffer(idxs[p]);
                      for (int n = 0; n < N; ++n) {
                        const Real* gp = g.data() + ((n * Ctot + off) * H * W);
                        Real* dp = dx.data() + (static_cast<std::size_t>(n) * Cp * H * W);
                        for (int i = 0; i < Cp * H * W; ++i) dp[i] += gp[i];
                      }
                    }
                    off += Cp;
                  }
                });
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

// Mean cross entropy over the batch from logits N x K and one-hot (or soft)
// targets N x K; targets must be rows summing to 1.
inline Value softmax_cross_entropy_soft(Tape& t, Value logits, const Tensor& targets) {
  const Tensor& z = t.value(logits);
  detail::require(z.ndim() == 2, "softmax_cross_entropy: logits must be N x K");
  detail::require(targets.same_shape(z), "softmax_cross_entropy: target shape mismatch");
  const int N = z.dim(0), K = z.dim(1);
  Tensor probs(Shape{N, K});
  Real loss = 0.0;
  for (int n = 0; n < N; ++n) {
    const Real* row = z.data() + n * K;
    Real m = row[0];
    for (int k = 1; k < K; ++k) m = std::max(m, row[k]);
    Real denom = 0.0;
    for (int k = 0; k < K; ++k) denom += std::exp(row[k] - m);
    const Real log_denom = std::log(denom);
    for (int k = 0; k < K; ++k) {
      const Real logp = row[k] - m - log_denom;
      probs[n * K + k] = std::exp(logp);
      loss -= targets[n * K + k] * logp;
    }
  }
  loss /= N;
  return t.emit("softmax_cross_entropy", Tensor::scalar(loss), {logits.idx},
                [zi = logits.idx, probs = std::move(probs), targets, N, K](Tape& t, int self) {
                  const Real g = t.grad_buffer(self)[0];
                  Tensor& dz = t.grad_buffer(zi);
                  const Real scale = g / N;
                  for (int i = 0; i < N * K; ++i) dz[i] += scale * (probs[i] - targets[i]);
                });
}

inline Value softmax_cross_entropy(Tape& t, Value logits, const std::vector<int>& labels) {
  const Tensor& z = t.value(logits);
  detail::require(z.ndim() == 2, "softmax_cross_entropy: logits must be N x K");
  const int N = z.dim(0), K = z.dim(1);
  detail::require(static_cast<int>(labels.size()) == N, "softmax_cross_entropy: label count mismatch");
  Tensor onehot(Shape{N, K});
  for (int n = 0; n < N; ++n) {
    detail::require(labels[static_cast<std::size_t>(n)] >= 0 && labels[static_cast<std::size_t>(n)] < K,
                    "softmax_cross_entropy: label " + std::to_string(labels[static_cast<std::size_t>(n)]) +
                        " out of range [0," + std::to_string(K) + ")");
    onehot[n * K + labels[static_cast<std::size_t>(n)]] = 1.0;
  }
  return softmax_cross_entropy_soft(t, logits, onehot);
}

}  // namespace shakedrop

#endif  // SHAKEDROP_OPS_HPP_
