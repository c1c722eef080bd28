#pragma once

#include <cmath>
#include <vector>

#include "cyclewalk/params.hpp"

namespace cyclewalk {

template <class Scalar>
struct AdamState {
  std::vector<Matrix<Scalar>> m, v;  // aligned with ParamSet order
  long step = 0;

  static AdamState zeros_like(const ParamSet<Scalar>& params) {
    AdamState s;
    s.m.reserve(static_cast<std::size_t>(params.count()));
    s.v.reserve(static_cast<std::size_t>(params.count()));
    for (int i = 0; i < params.count(); ++i) {
      s.m.push_back(Matrix<Scalar>::Zero(params.value(i).rows(), params.value(i).cols()));
      s.v.push_back(Matrix<Scalar>::Zero(params.value(i).rows(), params.value(i).cols()));
    }
    return s;
  }
};

// Standard Adam with bias correction: theta <- theta - lr * m_hat / (sqrt(v_hat) + eps).
template <class Scalar>
void adam_update(ParamSet<Scalar>& params, const std::vector<Matrix<Scalar>>& grads,
                 AdamState<Scalar>& state, Scalar lr, Scalar beta1 = Scalar(0.9),
                 Scalar beta2 = Scalar(0.999), Scalar eps = Scalar(1e-8)) {
  if (static_cast<int>(grads.size()) != params.count()) {
    throw UsageError("adam_update: gradient count does not match parameter count");
  }
  state.step += 1;
  const Scalar c1 = Scalar(1) - std::pow(beta1, static_cast<Scalar>(state.step));
  const Scalar c2 = Scalar(1) - std::pow(beta2, static_cast<Scalar>(state.step));
  for (int i = 0; i < params.count(); ++i) {
    auto& m = state.m[static_cast<std::size_t>(i)];
    auto& v = state.v[static_cast<std::size_t>(i)];
    const auto& g = grads[static_cast<std::size_t>(i)];
    if (g.rows() != m.rows() || g.cols() != m.cols()) {
      throw ShapeError("adam_update: gradient shape mismatch for " + params.name(i));
    }
    m = beta1 * m + (Scalar(1) - beta1) * g;
    v = beta2 * v + (Scalar(1) - beta2) * g.cwiseProduct(g);
    const Matrix<Scalar> m_hat = m / c1;
    const Matrix<Scalar> v_hat = v / c2;
    params.value(i).array() -= lr * m_hat.array() / (v_hat.array().sqrt() + eps);
  }
}

}  // namespace cyclewalk
