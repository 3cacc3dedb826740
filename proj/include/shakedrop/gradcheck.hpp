#ifndef SHAKEDROP_GRADCHECK_HPP_
#define SHAKEDROP_GRADCHECK_HPP_

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "shakedrop/autograd.hpp"
#include "shakedrop/rng.hpp"
#include "shakedrop/tensor.hpp"

namespace shakedrop {

// A differentiable scalar function expressed as a tape program: it receives a
// fresh tape and the input as a differentiable node and returns a scalar loss
// node. The builder must be pure in the input (same x, same loss).
using TapeFn = std::function<Value(Tape&, Value)>;

struct FiniteDiffReport {
  Real max_rel_error = 0.0;
  int kinks_skipped = 0;
  int elements_checked = 0;
};

namespace detail {

// One finite-difference probe along one coordinate: Richardson-extrapolated
// central difference, or a kink flag. Two detectors run: grossly disagreeing
// one-sided slopes (a kink at the point itself), and central differences that
// fail to agree across step sizes eps and eps/2 (a kink inside the probe
// interval; smooth functions agree to O(eps^2), far below the threshold).
struct FdProbe {
  Real derivative = 0.0;
  bool kink = false;
};

template <typename Eval>
inline FdProbe fd_probe(Eval&& eval_at, Real f0, Real eps) {
  const Real fp = eval_at(eps);
  const Real fm = eval_at(-eps);
  FdProbe probe;
  const Real d_plus = (fp - f0) / eps;
  const Real d_minus = (f0 - fm) / eps;
  if (std::abs(d_plus - d_minus) > 0.05 * std::max(1.0, std::abs(d_plus) + std::abs(d_minus))) {
    probe.kink = true;
    return probe;
  }
  const Real fp_half = eval_at(eps / 2.0);
  const Real fm_half = eval_at(-eps / 2.0);
  const Real c1 = (fp - fm) / (2.0 * eps);
  const Real c2 = (fp_half - fm_half) / eps;
  if (std::abs(c1 - c2) > 3e-5 * std::max(1.0, std::abs(c2))) {
    probe.kink = true;
    return probe;
  }
  probe.derivative = (4.0 * c2 - c1) / 3.0;
  return probe;
}

}  // namespace detail

// Finite-difference check of the analytic gradient of f at x.
// Relative error per element is |analytic - numeric| / max(1, |analytic|).
// Elements whose probe interval crosses a kink of f are skipped (counted in
// the report) rather than failed.
inline FiniteDiffReport finite_diff_check(const TapeFn& f, const Tensor& x, Real eps = 1e-5) {
  Tensor analytic;
  Real f0;
  {
    Tape t;
    Value xin = t.input(x);
    Value loss = f(t, xin);
    f0 = t.value(loss)[0];
    t.backward(loss);
    analytic = t.grad(xin);
  }

  FiniteDiffReport report;
  Tensor probe = x;
  for (int i = 0; i < x.numel(); ++i) {
    const Real orig = probe[i];
    auto eval_at = [&](Real delta) {
      probe[i] = orig + delta;
      Tape t;
      const Real v = t.value(f(t, t.constant(probe)))[0];
      probe[i] = orig;
      return v;
    };
    const detail::FdProbe p = detail::fd_probe(eval_at, f0, eps);
    if (p.kink) {
      ++report.kinks_skipped;
      continue;
    }
    const Real rel = std::abs(analytic[i] - p.derivative) / std::max(1.0, std::abs(analytic[i]));
    report.max_rel_error = std::max(report.max_rel_error, rel);
    ++report.elements_checked;
  }
  return report;
}

// Gradient check against a whole parameterized program. build must construct
// the forward pass on a fresh tape, reading current parameter values through
// Tape::leaf, and return a scalar loss; the probed inputs are the listed
// Parameters (model inputs can be wrapped as Parameters to include them).
// max_probes > 0 samples that many coordinates with the given stream instead
// of sweeping every element.
inline FiniteDiffReport finite_diff_check_params(const std::function<Value(Tape&)>& build,
                                                 const std::vector<Parameter*>& params,
                                                 Real eps = 1e-5, int max_probes = 0,
                                                 RngStream* sampler = nullptr) {
  for (Parameter* p : params) p->zero_grad();
  Real f0;
  std::vector<Tensor> analytic;
  {
    Tape t;
    Value loss = build(t);
    f0 = t.value(loss)[0];
    t.backward(loss);
    analytic.reserve(params.size());
    for (Parameter* p : params) analytic.push_back(p->grad);
  }
  for (Parameter* p : params) p->zero_grad();

  std::vector<std::pair<int, int>> probes;  // (param index, element)
  int total = 0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) total += params[pi]->value.numel();
  if (max_probes > 0 && sampler && max_probes < total) {
    for (int k = 0; k < max_probes; ++k) {
      int flat = static_cast<int>(sampler->next_below(static_cast<std::uint64_t>(total)));
      for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const int n = params[pi]->value.numel();
        if (flat < n) {
          probes.emplace_back(static_cast<int>(pi), flat);
          break;
        }
        flat -= n;
      }
    }
  } else {
    for (std::size_t pi = 0; pi < params.size(); ++pi)
      for (int i = 0; i < params[pi]->value.numel(); ++i)
        probes.emplace_back(static_cast<int>(pi), i);
  }

  FiniteDiffReport report;
  for (const auto& [pi, i] : probes) {
    Tensor& v = params[static_cast<std::size_t>(pi)]->value;
    const Real orig = v[i];
    auto eval_at = [&](Real delta) {
      v[i] = orig + delta;
      Tape t;
      const Real value = t.value(build(t))[0];
      v[i] = orig;
      return value;
    };
    const detail::FdProbe p = detail::fd_probe(eval_at, f0, eps);
    if (p.kink) {
      ++report.kinks_skipped;
      continue;
    }
    const Real a = analytic[static_cast<std::size_t>(pi)][i];
    const Real rel = std::abs(a - p.derivative) / std::max(1.0, std::abs(a));
    report.max_rel_error = std::max(report.max_rel_error, rel);
    ++report.elements_checked;
  }
  return report;
}

}  // namespace shakedrop

#endif  // SHAKEDROP_GRADCHECK_HPP_
