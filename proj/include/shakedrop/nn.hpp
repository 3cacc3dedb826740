#ifndef SHAKEDROP_NN_HPP_
#define SHAKEDROP_NN_HPP_

#include <cmath>
#include <utility>

#include "shakedrop/autograd.hpp"
#include "shakedrop/ops.hpp"
#include "shakedrop/tensor.hpp"

namespace shakedrop {

// Batch normalization over N, H, W per channel. Train phase normalizes by
// batch statistics and updates the running estimates; Eval normalizes by the
// running estimates and mutates nothing. The backward rule differentiates
// through the batch statistics.
inline Value batchnorm2d(Tape& t, Value x, Value gamma, Value shift, Tensor& running_mean,
                         Tensor& running_var, Real eps, Real momentum, Phase phase) {
  const Tensor& xv = t.value(x);
  detail::require_4d(xv, "batchnorm2d");
  const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const Tensor& gv = t.value(gamma);
  const Tensor& sv = t.value(shift);
  detail::require(gv.numel() == C && sv.numel() == C, "batchnorm2d: parameter length != channels");
  const int M = N * H * W;
  const int HW = H * W;

  if (phase == Phase::Eval) {
    Tensor out = Tensor::zeros_like(xv);
    Tensor invstd(Shape{C});
    for (int c = 0; c < C; ++c) invstd[c] = 1.0 / std::sqrt(running_var[c] + eps);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const Real* xp = xv.data() + ((n * C + c) * HW);
        Real* op = out.data() + ((n * C + c) * HW);
        const Real mu = running_mean[c], is = invstd[c], g = gv[c], b = sv[c];
        for (int i = 0; i < HW; ++i) op[i] = g * (xp[i] - mu) * is + b;
      }
    return t.emit("batchnorm2d_eval", std::move(out), {x.idx, gamma.idx, shift.idx},
                  [xi = x.idx, gi = gamma.idx, si = shift.idx, invstd, mean = running_mean, N, C,
                   HW](Tape& t, int self) {
                    const Tensor& g = t.grad_buffer(self);
                    const Tensor& xv = t.value_at(xi);
                    const Tensor& gv = t.value_at(gi);
                    for (int n = 0; n < N; ++n)
                      for (int c = 0; c < C; ++c) {
                        const Real* gp = g.data() + ((n * C + c) * HW);
                        const Real* xp = xv.data() + ((n * C + c) * HW);
                        const Real is = invstd[c];
                        if (t.requires_grad_at(xi)) {
                          Real* dp = t.grad_buffer(xi).data() + ((n * C + c) * HW);
                          const Real s = gv[c] * is;
                          for (int i = 0; i < HW; ++i) dp[i] += s * gp[i];
                        }
                        if (t.requires_grad_at(gi)) {
                          Real acc = 0.0;
                          for (int i = 0; i < HW; ++i) acc += gp[i] * (xp[i] - mean[c]) * is;
                          t.grad_buffer(gi)[c] += acc;
                        }
                        if (t.requires_grad_at(si)) {
                          Real acc = 0.0;
                          for (int i = 0; i < HW; ++i) acc += gp[i];
                          t.grad_buffer(si)[c] += acc;
                        }
                      }
                  });
  }

  detail::require(M >= 2, "batchnorm2d: Train phase needs at least 2 elements per channel");
  Tensor mean(Shape{C}), var(Shape{C}), invstd(Shape{C});
  for (int c = 0; c < C; ++c) {
    Real s = 0.0;
    for (int n = 0; n < N; ++n) {
      const Real* xp = xv.data() + ((n * C + c) * HW);
      for (int i = 0; i < HW; ++i) s += xp[i];
    }
    mean[c] = s / M;
    Real v = 0.0;
    for (int n = 0; n < N; ++n) {
      const Real* xp = xv.data() + ((n * C + c) * HW);
      for (int i = 0; i < HW; ++i) {
        const Real d = xp[i] - mean[c];
        v += d * d;
      }
    }
    var[c] = v / M;
    invstd[c] = 1.0 / std::sqrt(var[c] + eps);
  }
  // Running stats: EMA with the batch estimate weighted by momentum; variance
  // stored unbiased (M/(M-1)) as is conventional.
  for (int c = 0; c < C; ++c) {
    running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mean[c];
    running_var[c] = (1.0 - momentum) * running_var[c] + momentum * var[c] * M / (M - 1);
  }

  Tensor xhat(Shape{N, C, H, W});
  Tensor out(Shape{N, C, H, W});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const Real* xp = xv.data() + ((n * C + c) * HW);
      Real* hp = xhat.data() + ((n * C + c) * HW);
      Real* op = out.data() + ((n * C + c) * HW);
      const Real mu = mean[c], is = invstd[c], g = gv[c], b = sv[c];
      for (int i = 0; i < HW; ++i) {
        hp[i] = (xp[i] - mu) * is;
        op[i] = g * hp[i] + b;
      }
    }
  return t.emit(
      "batchnorm2d_train", std::move(out), {x.idx, gamma.idx, shift.idx},
      [xi = x.idx, gi = gamma.idx, si = shift.idx, xhat = std::move(xhat), invstd, N, C,
       HW, M](Tape& t, int self) {
        const Tensor& g = t.grad_buffer(self);
        const Tensor& gv = t.value_at(gi);
        // Channel reductions first.
        Tensor sum_g(Shape{C}), sum_gx(Shape{C});
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < C; ++c) {
            const Real* gp = g.data() + ((n * C + c) * HW);
            const Real* hp = xhat.data() + ((n * C + c) * HW);
            Real sg = 0.0, sgx = 0.0;
            for (int i = 0; i < HW; ++i) {
              sg += gp[i];
              sgx += gp[i] * hp[i];
            }
            sum_g[c] += sg;
            sum_gx[c] += sgx;
          }
        if (t.requires_grad_at(gi))
          for (int c = 0; c < C; ++c) t.grad_buffer(gi)[c] += sum_gx[c];
        if (t.requires_grad_at(si))
          for (int c = 0; c < C; ++c) t.grad_buffer(si)[c] += sum_g[c];
        if (t.requires_grad_at(xi)) {
          Tensor& dx = t.grad_buffer(xi);
          for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
              const Real* gp = g.data() + ((n * C + c) * HW);
              const Real* hp = xhat.data() + ((n * C + c) * HW);
              Real* dp = dx.data() + ((n * C + c) * HW);
              const Real s = gv[c] * invstd[c] / M;
              for (int i = 0; i < HW; ++i)
                dp[i] += s * (M * gp[i] - sum_g[c] - hp[i] * sum_gx[c]);
            }
        }
      });
}

// Convolution layer (bias-free; blocks pair convolutions with BN).
struct Conv2d {
  int in_channels, out_channels, kernel, stride, padding;
  Parameter weight;

  Conv2d(int in_ch, int out_ch, int k, int stride_, int padding_)
      : in_channels(in_ch),
        out_channels(out_ch),
        kernel(k),
        stride(stride_),
        padding(padding_),
        weight(Tensor(Shape{out_ch, in_ch, k, k})) {}

  Value forward(Tape& t, Value x) { return conv2d(t, x, t.leaf(weight), stride, padding); }
};

struct BatchNorm2d {
  int channels;
  Real eps, momentum;
  Parameter gamma, shift;
  Tensor running_mean, running_var;

  explicit BatchNorm2d(int c, Real eps_ = 1e-5, Real momentum_ = 0.1)
      : channels(c),
        eps(eps_),
        momentum(momentum_),
        gamma(Tensor(Shape{c}, 1.0)),
        shift(Tensor(Shape{c}, 0.0)),
        running_mean(Shape{c}, 0.0),
        running_var(Shape{c}, 1.0) {}

  void reset_running_stats() {
    running_mean.fill(0.0);
    running_var.fill(1.0);
  }

  Value forward(Tape& t, Value x, Phase phase) {
    return batchnorm2d(t, x, t.leaf(gamma), t.leaf(shift), running_mean, running_var, eps,
                       momentum, phase);
  }
};

struct Linear {
  int in_features, out_features;
  Parameter weight, bias;

  Linear(int in_f, int out_f)
      : in_features(in_f),
        out_features(out_f),
        weight(Tensor(Shape{in_f, out_f})),
        bias(Tensor(Shape{out_f})) {}

  Value forward(Tape& t, Value x) { return linear(t, x, t.leaf(weight), t.leaf(bias)); }
};

}  // namespace shakedrop

#endif  // SHAKEDROP_NN_HPP_
