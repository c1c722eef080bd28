// Test-only oracles, independent of the library's computation paths.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "cyclewalk/labelprop.hpp"

namespace oracles {

// Brute-force walk probability: explicit sum over all N^{k-1} intermediate
// paths of per-step probability products.
inline double walk_entry(const std::vector<cyclewalk::Matrix<double>>& steps, int start,
                         int end) {
  const int k = static_cast<int>(steps.size());
  const int n = static_cast<int>(steps[0].rows());
  std::vector<int> path(static_cast<std::size_t>(std::max(k - 1, 0)), 0);
  double total = 0.0;
  while (true) {
    double p = 1.0;
    int prev = start;
    for (int s = 0; s < k - 1; ++s) {
      p *= steps[static_cast<std::size_t>(s)](prev, path[static_cast<std::size_t>(s)]);
      prev = path[static_cast<std::size_t>(s)];
    }
    p *= steps[static_cast<std::size_t>(k - 1)](prev, end);
    total += p;
    int carry = k - 2;
    while (carry >= 0 && ++path[static_cast<std::size_t>(carry)] == n) {
      path[static_cast<std::size_t>(carry)] = 0;
      --carry;
    }
    if (carry < 0) break;
  }
  return total;
}

struct KernelEntry {
  int frame_index, node;
  double weight;
};

// Dense label-propagation kernel: scores every (target, source) pair, full
// stable sort, top-k, softmax over the selected entries.
inline std::vector<std::vector<KernelEntry>> dense_kernel(
    const cyclewalk::Matrix<double>& q_target,
    const std::vector<const cyclewalk::SourceFrame<double>*>& sources,
    const cyclewalk::GridGeometry& geom, const cyclewalk::PropagationConfig& cfg) {
  std::vector<std::vector<KernelEntry>> rows;
  for (int i = 0; i < q_target.rows(); ++i) {
    struct Scored {
      double sim;
      int frame_index, node;
    };
    std::vector<Scored> all, in_radius;
    for (const auto* src : sources) {
      for (int j = 0; j < src->embeddings.rows(); ++j) {
        const double sim = q_target.row(i).dot(src->embeddings.row(j)) / cfg.tau;
        all.push_back({sim, src->frame_index, j});
        const int dist = std::max(std::abs(geom.node_row(i) - geom.node_row(j)),
                                  std::abs(geom.node_col(i) - geom.node_col(j)));
        if (dist <= cfg.radius) in_radius.push_back({sim, src->frame_index, j});
      }
    }
    auto& pool = in_radius.empty() ? all : in_radius;
    std::stable_sort(pool.begin(), pool.end(), [](const Scored& a, const Scored& b) {
      if (a.sim != b.sim) return a.sim > b.sim;
      if (a.frame_index != b.frame_index) return a.frame_index < b.frame_index;
      return a.node < b.node;
    });
    const int k = std::min<int>(cfg.k_nn, static_cast<int>(pool.size()));
    double zmax = pool[0].sim, z = 0;
    std::vector<KernelEntry> row;
    for (int c = 0; c < k; ++c) {
      const double w = std::exp(pool[static_cast<std::size_t>(c)].sim - zmax);
      z += w;
      row.push_back({pool[static_cast<std::size_t>(c)].frame_index,
                     pool[static_cast<std::size_t>(c)].node, w});
    }
    for (auto& e : row) e.weight /= z;
    rows.push_back(std::move(row));
  }
  return rows;
}

inline cyclewalk::Matrix<double> random_unit_rows(std::mt19937_64& rng, int n, int d) {
  cyclewalk::Matrix<double> q(n, d);
  for (Eigen::Index k = 0; k < q.size(); ++k) {
    *(q.data() + k) = 2.0 * cyclewalk::uniform01(rng) - 1.0;
  }
  for (int i = 0; i < n; ++i) q.row(i).normalize();
  return q;
}

inline cyclewalk::Matrix<double> random_stochastic(std::mt19937_64& rng, int n) {
  cyclewalk::Matrix<double> a(n, n);
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    *(a.data() + k) = cyclewalk::uniform01(rng) + 1e-3;
  }
  for (int i = 0; i < n; ++i) a.row(i) /= a.row(i).sum();
  return a;
}

}  // namespace oracles
