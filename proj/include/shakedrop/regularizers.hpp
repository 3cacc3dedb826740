#ifndef SHAKEDROP_REGULARIZERS_HPP_
#define SHAKEDROP_REGULARIZERS_HPP_

#include <functional>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "shakedrop/autograd.hpp"
#include "shakedrop/ops.hpp"
#include "shakedrop/rng.hpp"
#include "shakedrop/tensor.hpp"

namespace shakedrop {

// ---------------------------------------------------------------------------
// Coefficient specification
// ---------------------------------------------------------------------------

// A scalar draw: either a fixed value or uniform on [lo, hi].
struct ScalarDist {
  Real lo = 0.0;
  Real hi = 0.0;

  static ScalarDist fixed(Real v) { return ScalarDist{v, v}; }
  static ScalarDist range(Real lo, Real hi) { return ScalarDist{lo, hi}; }

  bool is_fixed() const { return lo == hi; }
  Real mean() const { return is_fixed() ? lo : (lo + hi) / 2.0; }
  Real sample(RngStream& rng) const { return is_fixed() ? lo : rng.next_uniform(lo, hi); }
  void validate(const char* what) const {
    if (!(lo <= hi))
      throw std::invalid_argument(std::string(what) + ": range must satisfy lo <= hi");
  }
};

// How alpha and beta are drawn. When the discrete pool is nonempty it replaces
// the independent alpha/beta draws: one pool index is drawn per granularity
// cell and the pair's components are used for the forward alpha and the
// matching backward beta.
struct CoefficientSpec {
  ScalarDist alpha = ScalarDist::fixed(1.0);
  ScalarDist beta = ScalarDist::fixed(1.0);
  std::vector<std::pair<Real, Real>> pool;

  bool has_pool() const { return !pool.empty(); }

  Real expected_alpha() const {
    if (has_pool()) {
      Real s = 0.0;
      for (const auto& p : pool) s += p.first;
      return s / static_cast<Real>(pool.size());
    }
    return alpha.mean();
  }

  Real expected_beta() const {
    if (has_pool()) {
      Real s = 0.0;
      for (const auto& p : pool) s += p.second;
      return s / static_cast<Real>(pool.size());
    }
    return beta.mean();
  }

  void validate() const {
    alpha.validate("coefficient spec alpha");
    beta.validate("coefficient spec beta");
  }
};

inline CoefficientSpec preset_shakedrop_original() {
  CoefficientSpec s;
  s.alpha = ScalarDist::fixed(0.0);
  s.beta = ScalarDist::range(0.0, 1.0);
  return s;
}

inline CoefficientSpec preset_shakedrop_bn_end() {
  CoefficientSpec s;
  s.alpha = ScalarDist::range(-1.0, 1.0);
  s.beta = ScalarDist::range(0.0, 1.0);
  return s;
}

// ---------------------------------------------------------------------------
// Survival schedule
// ---------------------------------------------------------------------------

// Linear decay of the survival probability over block depth:
// p_l = 1 - (l/L)(1 - p_L), evaluated in the algebraically equivalent form
// p_L + ((L-l)/L)(1 - p_L) so that p(L) == p_L holds exactly.
struct DecaySchedule {
  int total_blocks = 1;  // L
  Real terminal_prob = 0.5;  // p_L

  void validate() const {
    if (total_blocks < 1) throw std::invalid_argument("decay schedule: L must be >= 1");
    if (!(terminal_prob >= 0.0 && terminal_prob <= 1.0))
      throw std::invalid_argument("decay schedule: p_L must lie in [0, 1]");
  }
};

inline Real linear_decay(int l, const DecaySchedule& s) {
  s.validate();
  if (l < 1 || l > s.total_blocks)
    throw std::invalid_argument("linear_decay: block index " + std::to_string(l) +
                                " outside 1.." + std::to_string(s.total_blocks));
  return s.terminal_prob +
         (static_cast<Real>(s.total_blocks - l) / static_cast<Real>(s.total_blocks)) *
             (1.0 - s.terminal_prob);
}

// ---------------------------------------------------------------------------
// Granularity
// ---------------------------------------------------------------------------

// Scope of independent coefficient draws for a branch output of shape NxCxHxW.
enum class Granularity { Batch, Image, Channel, Pixel };

inline Shape coeff_shape(Granularity g, const Shape& target) {
  if (target.size() != 4)
    throw std::invalid_argument("granularity: target shape must be NCHW, got " + shape_str(target));
  switch (g) {
    case Granularity::Batch:
      return Shape{1, 1, 1, 1};
    case Granularity::Image:
      return Shape{target[0], 1, 1, 1};
    case Granularity::Channel:
      return Shape{target[0], target[1], 1, 1};
    case Granularity::Pixel:
      return target;
  }
  throw std::logic_error("granularity: unreachable");
}

inline int draw_count(Granularity g, const Shape& target) {
  return shape_numel(coeff_shape(g, target));
}

// ---------------------------------------------------------------------------
// Draws
// ---------------------------------------------------------------------------

enum class Which { Alpha, Beta };

// Independent random streams for the three roles of one regularizer node.
// Beta has its own stream so its draws are independent of alpha's and can
// happen at backward time.
struct RegularizerRng {
  RngStream gate, alpha, beta;

  explicit RegularizerRng(const RngStream& root)
      : gate(root.child("gate")), alpha(root.child("alpha")), beta(root.child("beta")) {}
  RegularizerRng(RngStream g, RngStream a, RngStream b)
      : gate(std::move(g)), alpha(std::move(a)), beta(std::move(b)) {}
};

// Test hook: freezes individual draws. gate must be 0 or 1; alpha/beta are
// broadcast scalars.
struct FrozenDraws {
  std::optional<int> gate;
  std::optional<Real> alpha;
  std::optional<Real> beta;
};

namespace detail {

inline Tensor draw_dist(const ScalarDist& d, const Shape& cshape, RngStream& rng) {
  Tensor out(cshape);
  if (d.is_fixed()) {
    out.fill(d.lo);
  } else {
    for (int i = 0; i < out.numel(); ++i) out[i] = rng.next_uniform(d.lo, d.hi);
  }
  return out;
}

}  // namespace detail

inline std::vector<int> draw_pool_indices(std::size_t pool_size, Granularity gran,
                                          const Shape& target, RngStream& rng) {
  if (pool_size == 0) throw std::invalid_argument("coefficient pool: empty pool");
  const int n = draw_count(gran, target);
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    idx[static_cast<std::size_t>(i)] = static_cast<int>(rng.next_below(pool_size));
  return idx;
}

inline Tensor pool_component(const CoefficientSpec& spec, const std::vector<int>& indices,
                             Which which, const Shape& cshape) {
  if (!spec.has_pool()) throw std::invalid_argument("coefficient pool: spec has no pool");
  Tensor out(cshape);
  if (out.numel() != static_cast<int>(indices.size()))
    throw std::invalid_argument("coefficient pool: index count mismatch");
  for (int i = 0; i < out.numel(); ++i) {
    const auto& pair = spec.pool[static_cast<std::size_t>(indices[static_cast<std::size_t>(i)])];
    out[i] = which == Which::Alpha ? pair.first : pair.second;
  }
  return out;
}

// One tensor of coefficient draws, broadcastable to target_shape, with exactly
// draw_count(gran, target_shape) independent draws. In pool mode this draws
// fresh pair indices; regularizers that must reuse the forward pair for the
// backward pass draw indices once and use pool_component directly.
inline Tensor draw_coefficients(const CoefficientSpec& spec, Granularity gran,
                                const Shape& target_shape, Which which, RngStream& rng) {
  const Shape cshape = coeff_shape(gran, target_shape);
  if (spec.has_pool()) {
    const auto idx = draw_pool_indices(spec.pool.size(), gran, target_shape, rng);
    return pool_component(spec, idx, which, cshape);
  }
  return detail::draw_dist(which == Which::Alpha ? spec.alpha : spec.beta, cshape, rng);
}

namespace detail {

// Exact evaluation of b + c - b*c for a 0/1 gate: 1 when the gate fires,
// otherwise the coefficient tensor itself. Keeps the b=1 case bitwise equal
// to the unregularized branch for any coefficient draw.
inline Tensor gate_mix(int b, Tensor coeff) {
  if (b == 1) return Tensor(coeff.shape(), 1.0);
  return coeff;
}

inline int draw_gate(Real p, RngStream& gate_stream, const FrozenDraws& frozen) {
  if (frozen.gate) {
    if (*frozen.gate != 0 && *frozen.gate != 1)
      throw std::invalid_argument("frozen gate must be 0 or 1");
    return *frozen.gate;
  }
  return gate_stream.next_bernoulli(p) ? 1 : 0;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Regularizers
// ---------------------------------------------------------------------------

// Test-time coefficient E[b + alpha - b*alpha] = p + (1 - p) E[alpha].
inline Real shakedrop_eval_coefficient(Real p, const CoefficientSpec& spec) {
  return p + (1.0 - p) * spec.expected_alpha();
}

// ShakeDrop on one residual branch. Train forward scales by (b + a - b*a)
// with the gate b ~ Bernoulli(p_l) drawn once per call and alpha drawn at the
// given granularity; the backward rule scales the upstream gradient by
// (b + beta - b*beta), with beta drawn from its own stream when backward()
// runs. Eval scales by the closed-form expectation and draws nothing.
//
// The rng bundle must outlive the tape's backward pass.
inline Value shakedrop_apply(Tape& t, Value branch, int l, const DecaySchedule& sched,
                             const CoefficientSpec& spec, Granularity gran, Phase phase,
                             RegularizerRng& rng, const FrozenDraws& frozen = {}) {
  spec.validate();
  const Real p = linear_decay(l, sched);
  if (phase == Phase::Eval)
    return scale_by_const(t, branch, Tensor::scalar(shakedrop_eval_coefficient(p, spec)));

  const Shape& target = t.value(branch).shape();
  const Shape cshape = coeff_shape(gran, target);
  const int b = detail::draw_gate(p, rng.gate, frozen);

  std::vector<int> pool_idx;
  Tensor alpha;
  if (frozen.alpha) {
    alpha = Tensor(Shape{1, 1, 1, 1}, *frozen.alpha);
  } else if (spec.has_pool()) {
    pool_idx = draw_pool_indices(spec.pool.size(), gran, target, rng.alpha);
    alpha = pool_component(spec, pool_idx, Which::Alpha, cshape);
  } else {
    alpha = detail::draw_dist(spec.alpha, cshape, rng.alpha);
  }

  auto bwd_provider = [b, &rng, spec, cshape, pool_idx = std::move(pool_idx),
                       frozen_beta = frozen.beta]() -> Tensor {
    Tensor beta;
    if (frozen_beta)
      beta = Tensor(Shape{1, 1, 1, 1}, *frozen_beta);
    else if (spec.has_pool())
      beta = pool_component(spec, pool_idx, Which::Beta, cshape);
    else
      beta = detail::draw_dist(spec.beta, cshape, rng.beta);
    return detail::gate_mix(b, std::move(beta));
  };
  return decoupled_scale(t, branch, detail::gate_mix(b, std::move(alpha)), std::move(bwd_provider));
}

// RandomDrop (stochastic depth): the same Bernoulli gate scales the branch in
// both passes. Eval scales by p_l.
inline Value randomdrop_apply(Tape& t, Value branch, int l, const DecaySchedule& sched, Phase phase,
                              RegularizerRng& rng, const FrozenDraws& frozen = {}) {
  const Real p = linear_decay(l, sched);
  if (phase == Phase::Eval) return scale_by_const(t, branch, Tensor::scalar(p));
  const int b = detail::draw_gate(p, rng.gate, frozen);
  return scale_by_const(t, branch, Tensor::scalar(static_cast<Real>(b)));
}

// Single-branch Shake: alpha forward / beta backward with no gate. Realized
// as ShakeDrop with the survival probability forced to zero, which pins the
// gate to 0 and reduces the scaling to plain alpha / beta.
inline Value single_branch_shake_apply(Tape& t, Value branch, const CoefficientSpec& spec,
                                       Granularity gran, Phase phase, RegularizerRng& rng,
                                       const FrozenDraws& frozen = {}) {
  return shakedrop_apply(t, branch, 1, DecaySchedule{1, 0.0}, spec, gran, phase, rng, frozen);
}

// Shake-Shake: out = x + a(*)f1 + (1-a)(*)f2 in the training forward pass;
// the backward pass distributes beta(*)g to f1, (1-beta)(*)g to f2 and g
// unchanged to x, with beta drawn at backward time. Eval interpolates with
// E[alpha].
inline Value shake_shake_combine(Tape& t, Value x, Value f1, Value f2, const CoefficientSpec& spec,
                                 Granularity gran, Phase phase, RegularizerRng& rng,
                                 const FrozenDraws& frozen = {}) {
  spec.validate();
  const Tensor& xv = t.value(x);
  const Tensor& f1v = t.value(f1);
  const Tensor& f2v = t.value(f2);
  detail::require(xv.same_shape(f1v) && xv.same_shape(f2v),
                  "shake_shake_combine: x, f1, f2 must share a shape");

  auto combine = [&](const Tensor& coeff) {
    Tensor out = xv;
    detail::for_each_broadcast(coeff, f1v, [&](int i, Real c) { out[i] += c * f1v[i]; });
    detail::for_each_broadcast(coeff, f2v, [&](int i, Real c) { out[i] += (1.0 - c) * f2v[i]; });
    return out;
  };
  auto emit_node = [&](Tensor out, std::function<Tensor()> beta_provider) {
    return t.emit("shake_shake", std::move(out), {x.idx, f1.idx, f2.idx},
                  [xi = x.idx, i1 = f1.idx, i2 = f2.idx,
                   provider = std::move(beta_provider)](Tape& t, int self) {
                    const Tensor& g = t.grad_buffer(self);
                    const Tensor beta = provider();
                    if (t.requires_grad_at(xi)) {
                      Tensor& dx = t.grad_buffer(xi);
                      for (int i = 0; i < g.numel(); ++i) dx[i] += g[i];
                    }
                    if (t.requires_grad_at(i1))
                      add_broadcast_mul(t.grad_buffer(i1), beta, g);
                    if (t.requires_grad_at(i2)) {
                      Tensor one_minus = beta;
                      for (int i = 0; i < one_minus.numel(); ++i) one_minus[i] = 1.0 - one_minus[i];
                      add_broadcast_mul(t.grad_buffer(i2), one_minus, g);
                    }
                  });
  };

  if (phase == Phase::Eval) {
    const Real ea = spec.expected_alpha();
    Tensor coeff = Tensor::scalar(ea);
    return emit_node(combine(coeff), [ea]() { return Tensor::scalar(ea); });
  }

  const Shape cshape = coeff_shape(gran, xv.shape());
  std::vector<int> pool_idx;
  Tensor alpha;
  if (frozen.alpha) {
    alpha = Tensor(Shape{1, 1, 1, 1}, *frozen.alpha);
  } else if (spec.has_pool()) {
    pool_idx = draw_pool_indices(spec.pool.size(), gran, xv.shape(), rng.alpha);
    alpha = pool_component(spec, pool_idx, Which::Alpha, cshape);
  } else {
    alpha = detail::draw_dist(spec.alpha, cshape, rng.alpha);
  }
  auto beta_provider = [&rng, spec, cshape, pool_idx = std::move(pool_idx),
                        frozen_beta = frozen.beta]() -> Tensor {
    if (frozen_beta) return Tensor(Shape{1, 1, 1, 1}, *frozen_beta);
    if (spec.has_pool()) return pool_component(spec, pool_idx, Which::Beta, cshape);
    return detail::draw_dist(spec.beta, cshape, rng.beta);
  };
  return emit_node(combine(alpha), std::move(beta_provider));
}

}  // namespace shakedrop

#endif  // SHAKEDROP_REGULARIZERS_HPP_
