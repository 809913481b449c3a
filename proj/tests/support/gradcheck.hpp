#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "geomatch/ops.hpp"
#include "geomatch/random.hpp"
#include "geomatch/tensor.hpp"

namespace geomatch::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, Scalar lo = -1, Scalar hi = 1,
                            bool requires_grad = true) {
  std::vector<Scalar> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

struct GradCheckResult {
  // Worst per-tensor norm-wise relative error:
  //   |g_analytic - g_numeric| / max(|g_analytic|, |g_numeric|, floor)
  double max_rel_error = 0;
  std::size_t worst_input = 0;
};

/// Central finite differences of a scalar function against reverse-mode
/// gradients, for every input.
inline GradCheckResult gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                 std::vector<Tensor> inputs, double step = 1e-6,
                                 double floor = 1e-8) {
  for (auto& t : inputs) t.zero_grad();
  Tensor out = f(inputs);
  out.backward();
  GradCheckResult result;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto& t = inputs[i];
    const std::vector<Scalar> analytic = t.grad().empty()
                                             ? std::vector<Scalar>(t.numel(), 0)
                                             : std::vector<Scalar>(t.grad().begin(), t.grad().end());
    std::vector<Scalar> numeric(t.numel());
    auto values = t.mutable_values();
    for (std::size_t k = 0; k < t.numel(); ++k) {
      const Scalar saved = values[k];
      double fp, fm;
      {
        NoGradGuard guard;
        values[k] = saved + step;
        fp = f(inputs).item();
        values[k] = saved - step;
        fm = f(inputs).item();
      }
      values[k] = saved;
      numeric[k] = static_cast<Scalar>((fp - fm) / (2 * step));
    }
    double diff = 0, na = 0, nn = 0;
    for (std::size_t k = 0; k < t.numel(); ++k) {
      diff += (analytic[k] - numeric[k]) * (analytic[k] - numeric[k]);
      na += analytic[k] * analytic[k];
      nn += numeric[k] * numeric[k];
    }
    const double rel = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor});
    if (rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_input = i;
    }
  }
  return result;
}

// Weighted sum with fixed random weights, so every output element matters.
inline Tensor random_projection(const Tensor& t, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(t, random_tensor(t.shape(), rng, -1, 1, false)));
}

}  // namespace geomatch::testing
