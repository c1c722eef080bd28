#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "cyclewalk/common.hpp"
#include "cyclewalk/params.hpp"

namespace cyclewalk {

// A differentiable scalar loss: rebuilds its graph on every call so the same
// parameter values always give the same loss (any internal randomness must be
// re-derived from a fixed seed). When `grads` is non-null the call also runs
// backward and fills one gradient matrix per parameter, in parameter order.
template <class Scalar>
using LossFn = std::function<Scalar(const ParamSet<Scalar>&, std::vector<Matrix<Scalar>>* grads)>;

// Central-difference gradient check. Samples up to `coords_per_tensor`
// coordinates from every parameter tensor and returns
//   max |analytic - central| / max(|analytic|, |central|, 1e-8).
// Meaningful only in 64-bit; recommended h in [1e-6, 1e-4].
inline double finite_diff_check(const LossFn<double>& loss_fn, ParamSet<double> params, double h,
                                int coords_per_tensor, std::uint64_t seed) {
  if (h <= 0) throw ConfigError("finite_diff_check: h must be positive");
  std::vector<Matrix<double>> grads;
  loss_fn(params, &grads);

  std::mt19937_64 rng(splitmix64(seed));
  double worst = 0.0;
  for (int p = 0; p < params.count(); ++p) {
    auto& theta = params.value(p);
    const long n = static_cast<long>(theta.size());
    std::vector<long> coords(static_cast<std::size_t>(n));
    for (long k = 0; k < n; ++k) coords[static_cast<std::size_t>(k)] = k;
    if (n > coords_per_tensor) {
      for (long k = 0; k < coords_per_tensor; ++k) {
        const long j = k + uniform_int(rng, 0, n - 1 - k);
        std::swap(coords[static_cast<std::size_t>(k)], coords[static_cast<std::size_t>(j)]);
      }
      coords.resize(static_cast<std::size_t>(coords_per_tensor));
    }
    for (long flat : coords) {
      double* entry = theta.data() + flat;
      const double saved = *entry;
      *entry = saved + h;
      const double up = loss_fn(params, nullptr);
      *entry = saved - h;
      const double down = loss_fn(params, nullptr);
      *entry = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("finite_diff_check: non-finite loss at perturbed point");
      }
      const double central = (up - down) / (2.0 * h);
      const double analytic = *(grads[static_cast<std::size_t>(p)].data() + flat);
      const double denom = std::max({std::abs(analytic), std::abs(central), 1e-8});
      worst = std::max(worst, std::abs(analytic - central) / denom);
    }
  }
  return worst;
}

}  // namespace cyclewalk
