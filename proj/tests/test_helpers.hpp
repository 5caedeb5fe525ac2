#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "safesign/nn.hpp"
#include "safesign/rng.hpp"
#include "safesign/tensor.hpp"

namespace safesign::testing {

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (long i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

struct GradCheckResult {
  long checked = 0;
  double worst_rel = 0.0;
  std::string worst_at;
  bool ok(double tol = 1e-3) const { return checked > 0 && worst_rel < tol; }
};

// Central-difference check of d(loss)/d(params). `compute` must zero grads,
// run forward+backward and return the loss; it is re-invoked for the
// perturbed evaluations (its gradients are then ignored).
//
// Coordinates are drawn at random and, per parameter, the one with the
// largest analytic gradient among a few candidates is probed. Objectives with
// |.| or ReLU terms are only piecewise smooth: a kink inside the probe step
// shifts the difference quotient by an amount independent of the gradient
// size, so near-zero coordinates say nothing about gradient correctness.
inline GradCheckResult check_param_gradients(const std::vector<nn::ParamPtr>& params,
                                             const std::function<double()>& compute,
                                             int samples_per_param, uint64_t seed,
                                             double step = 1e-4) {
  GradCheckResult res;
  Rng rng(seed);
  compute();
  // snapshot analytic gradients
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p->grad);

  const double base = compute();
  for (size_t pi = 0; pi < params.size(); ++pi) {
    nn::Param& p = *params[pi];
    for (int s = 0; s < samples_per_param; ++s) {
      for (int attempt = 0; attempt < 8; ++attempt) {
        long i = static_cast<long>(rng.uniform_int(static_cast<int>(p.value.size())));
        for (int cand = 0; cand < 4; ++cand) {
          const long j = static_cast<long>(rng.uniform_int(static_cast<int>(p.value.size())));
          if (std::abs(analytic[pi][j]) > std::abs(analytic[pi][i])) i = j;
        }
        const double saved = p.value[i];
        p.value[i] = saved + step;
        const double lp = compute();
        p.value[i] = saved - step;
        const double lm = compute();
        p.value[i] = saved;
        // second-difference kink detector: a hinge inside the probe interval
        // shows up as curvature of order step * |slope jump|
        const double lin = std::abs(lp - lm) / 2.0;
        const double curv = std::abs(lp + lm - 2.0 * base);
        if (curv > 0.05 * std::max(lin, 1e-12)) continue;  // non-smooth here, resample
        const double numeric = (lp - lm) / (2.0 * step);
        const double a = analytic[pi][i];
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
        ++res.checked;
        if (rel > res.worst_rel) {
          res.worst_rel = rel;
          res.worst_at = p.name + "[" + std::to_string(i) + "]";
        }
        break;
      }
    }
  }
  // leave gradients in their base state
  compute();
  return res;
}

// Same idea for d(loss)/d(input) when the analytic gradient is handed back
// directly by the callee.
inline GradCheckResult check_input_gradient(Tensor& input, const Tensor& analytic,
                                            const std::function<double()>& loss_only, int samples,
                                            uint64_t seed, double step = 1e-4) {
  GradCheckResult res;
  Rng rng(seed);
  for (int s = 0; s < samples; ++s) {
    const long i = static_cast<long>(rng.uniform_int(static_cast<int>(input.size())));
    const double saved = input[i];
    input[i] = saved + step;
    const double lp = loss_only();
    input[i] = saved - step;
    const double lm = loss_only();
    input[i] = saved;
    const double numeric = (lp - lm) / (2.0 * step);
    const double a = analytic[i];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
    ++res.checked;
    if (rel > res.worst_rel) {
      res.worst_rel = rel;
      res.worst_at = "input[" + std::to_string(i) + "]";
    }
  }
  return res;
}

}  // namespace safesign::testing
