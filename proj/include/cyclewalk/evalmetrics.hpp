#pragma once

#include <cmath>
#include <set>
#include <vector>

#include "cyclewalk/walk.hpp"

namespace cyclewalk {

struct WalkAccuracy {
  long correct = 0;
  long valid = 0;

  double fraction() const {
    if (valid == 0) throw UsageError("walk accuracy: no valid rows");
    return static_cast<double>(correct) / static_cast<double>(valid);
  }
};

// Fraction of valid rows whose row argmax (ties toward the lower index)
// matches the ground-truth target.
template <class Scalar>
WalkAccuracy walk_accuracy_counts(const Matrix<Scalar>& walk_matrix,
                                  const CorrespondenceLabels& y) {
  if (static_cast<Eigen::Index>(y.target.size()) != walk_matrix.rows()) {
    throw ShapeError("walk_accuracy: label count does not match walk rows");
  }
  WalkAccuracy acc;
  for (std::size_t i = 0; i < y.target.size(); ++i) {
    if (!y.valid[i]) continue;
    ++acc.valid;
    if (argmax_row(walk_matrix, static_cast<int>(i)) == y.target[i]) ++acc.correct;
  }
  return acc;
}

template <class Scalar>
double walk_accuracy(const Matrix<Scalar>& walk_matrix, const CorrespondenceLabels& y) {
  return walk_accuracy_counts(walk_matrix, y).fraction();
}

// Mean per-class IoU of hard node labels, pooled over all frames except
// frame 0 (which is given), over classes present in the ground truth.
inline double propagation_score(const std::vector<std::vector<int>>& predicted,
                                const std::vector<std::vector<int>>& ground_truth) {
  if (predicted.size() != ground_truth.size()) {
    throw ShapeError("propagation_score: frame counts disagree");
  }
  std::set<int> classes;
  for (std::size_t t = 1; t < ground_truth.size(); ++t) {
    for (int c : ground_truth[t]) classes.insert(c);
  }
  if (classes.empty()) throw UsageError("propagation_score: nothing to score");
  double total = 0;
  for (int c : classes) {
    long inter = 0, unified = 0;
    for (std::size_t t = 1; t < ground_truth.size(); ++t) {
      if (predicted[t].size() != ground_truth[t].size()) {
        throw ShapeError("propagation_score: node counts disagree at frame " + std::to_string(t));
      }
      for (std::size_t i = 0; i < ground_truth[t].size(); ++i) {
        const bool in_pred = predicted[t][i] == c;
        const bool in_gt = ground_truth[t][i] == c;
        inter += (in_pred && in_gt) ? 1 : 0;
        unified += (in_pred || in_gt) ? 1 : 0;
      }
    }
    total += unified > 0 ? static_cast<double>(inter) / static_cast<double>(unified) : 1.0;
  }
  return total / static_cast<double>(classes.size());
}

// Shannon entropy of each row of a stochastic matrix; bounded by ln N.
template <class Scalar>
std::vector<double> row_entropies(const Matrix<Scalar>& stochastic) {
  std::vector<double> h(static_cast<std::size_t>(stochastic.rows()), 0.0);
  for (Eigen::Index i = 0; i < stochastic.rows(); ++i) {
    double acc = 0;
    for (Eigen::Index j = 0; j < stochastic.cols(); ++j) {
      const double p = static_cast<double>(stochastic(i, j));
      if (p > 0) acc -= p * std::log(p);
    }
    h[static_cast<std::size_t>(i)] = acc;
  }
  return h;
}

template <class Scalar>
double mean_row_entropy(const Matrix<Scalar>& stochastic) {
  const auto h = row_entropies(stochastic);
  double acc = 0;
  for (double v : h) acc += v;
  return h.empty() ? 0.0 : acc / static_cast<double>(h.size());
}

}  // namespace cyclewalk
