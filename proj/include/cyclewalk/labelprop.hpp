#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <vector>

#include "cyclewalk/patches.hpp"
#include "cyclewalk/walk.hpp"

namespace cyclewalk {

struct PropagationConfig {
  int k_nn = 10;
  int context = 4;      // m: FIFO length of auto-regressive source frames
  double radius = 12;   // Chebyshev radius in grid units
  double tau = 0.07;

  void validate() const {
    if (k_nn < 1) throw ConfigError("k_nn must be >= 1");
    if (context < 1) throw ConfigError("context length must be >= 1");
    if (radius <= 0) throw ConfigError("spatial radius must be positive");
    if (tau <= 0) throw ConfigError("temperature must be positive");
  }
};

template <class Scalar>
struct SourceFrame {
  Matrix<Scalar> embeddings;  // N x d, unit rows
  Matrix<Scalar> labels;      // N x C soft label distributions
  int frame_index = 0;
};

// The first labeled frame plus the last `capacity` predicted frames.
template <class Scalar>
class ContextQueue {
 public:
  ContextQueue(SourceFrame<Scalar> first_labeled, int capacity)
      : anchor_(std::move(first_labeled)), capacity_(capacity) {
    if (capacity_ < 1) throw ConfigError("context capacity must be >= 1");
  }

  void push(SourceFrame<Scalar> predicted) {
    recent_.push_back(std::move(predicted));
    if (static_cast<int>(recent_.size()) > capacity_) recent_.pop_front();
  }

  // Anchor first, then oldest to newest. Size is at most capacity + 1.
  std::vector<const SourceFrame<Scalar>*> snapshot() const {
    std::vector<const SourceFrame<Scalar>*> out;
    out.reserve(recent_.size() + 1);
    out.push_back(&anchor_);
    for (const auto& f : recent_) out.push_back(&f);
    return out;
  }

  int size() const { return static_cast<int>(recent_.size()) + 1; }

 private:
  SourceFrame<Scalar> anchor_;
  std::deque<SourceFrame<Scalar>> recent_;
  int capacity_;
};

struct KernelEntry {
  int slot = 0;         // index into the source snapshot
  int frame_index = 0;  // temporal index, used for order-independent ties
  int node = 0;
  double weight = 0;
};

struct KernelRow {
  std::vector<KernelEntry> entries;
  bool fallback = false;  // radius produced no candidates; used all sources
};

template <class Scalar>
struct Kernel {
  std::vector<KernelRow> rows;

  int fallback_count() const {
    int n = 0;
    for (const auto& r : rows) n += r.fallback ? 1 : 0;
    return n;
  }
};

// Top-k attention from each target node to the union of radius-restricted
// source nodes across the queue. Selection is global over the union; the
// softmax runs over exactly the selected entries. Ties break by similarity,
// then lower frame index, then lower node index, making the result
// independent of snapshot concatenation order.
template <class Scalar>
Kernel<Scalar> build_kernel(const Matrix<Scalar>& q_target,
                            const std::vector<const SourceFrame<Scalar>*>& sources,
                            const GridGeometry& geom, const PropagationConfig& cfg) {
  cfg.validate();
  if (sources.empty()) throw UsageError("build_kernel: no source frames");
  const int n_target = static_cast<int>(q_target.rows());

  struct Candidate {
    double sim;
    int frame_index, node, slot;
  };

  Kernel<Scalar> kernel;
  kernel.rows.resize(static_cast<std::size_t>(n_target));

  std::vector<Candidate> candidates;
  for (int i = 0; i < n_target; ++i) {
    const int gr = geom.node_row(i), gc = geom.node_col(i);
    candidates.clear();
    const bool restricted[2] = {true, false};
    for (bool use_radius : restricted) {
      for (std::size_t s = 0; s < sources.size(); ++s) {
        const SourceFrame<Scalar>& src = *sources[s];
        for (int j = 0; j < src.embeddings.rows(); ++j) {
          if (use_radius) {
            const int dist =
                std::max(std::abs(gr - geom.node_row(j)), std::abs(gc - geom.node_col(j)));
            if (dist > cfg.radius) continue;
          }
          const double sim =
              static_cast<double>(q_target.row(i).dot(src.embeddings.row(j))) / cfg.tau;
          candidates.push_back({sim, src.frame_index, j, static_cast<int>(s)});
        }
      }
      if (!candidates.empty()) {
        kernel.rows[static_cast<std::size_t>(i)].fallback = !use_radius;
        break;
      }
    }

    const int k = std::min<int>(cfg.k_nn, static_cast<int>(candidates.size()));
    auto better = [](const Candidate& a, const Candidate& b) {
      if (a.sim != b.sim) return a.sim > b.sim;
      if (a.frame_index != b.frame_index) return a.frame_index < b.frame_index;
      return a.node < b.node;
    };
    std::partial_sort(candidates.begin(), candidates.begin() + k, candidates.end(), better);

    double max_sim = candidates[0].sim;
    double z = 0;
    auto& row = kernel.rows[static_cast<std::size_t>(i)];
    row.entries.reserve(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) {
      const double w = std::exp(candidates[static_cast<std::size_t>(c)].sim - max_sim);
      z += w;
      row.entries.push_back({candidates[static_cast<std::size_t>(c)].slot,
                             candidates[static_cast<std::size_t>(c)].frame_index,
                             candidates[static_cast<std::size_t>(c)].node, w});
    }
    for (auto& e : row.entries) e.weight /= z;
  }
  return kernel;
}

template <class Scalar>
Matrix<Scalar> apply_kernel(const Kernel<Scalar>& kernel,
                            const std::vector<const SourceFrame<Scalar>*>& sources) {
  if (sources.empty() || kernel.rows.empty()) throw UsageError("apply_kernel: empty inputs");
  const Eigen::Index classes = sources[0]->labels.cols();
  Matrix<Scalar> out =
      Matrix<Scalar>::Zero(static_cast<Eigen::Index>(kernel.rows.size()), classes);
  for (std::size_t i = 0; i < kernel.rows.size(); ++i) {
    for (const KernelEntry& e : kernel.rows[i].entries) {
      out.row(static_cast<Eigen::Index>(i)) +=
          static_cast<Scalar>(e.weight) * sources[static_cast<std::size_t>(e.slot)]->labels.row(e.node);
    }
  }
  return out;
}

template <class Scalar>
struct PropagationResult {
  std::vector<Matrix<Scalar>> soft;        // per frame, N x C
  std::vector<std::vector<int>> hard;      // per frame, argmax class per node
  int fallback_count = 0;
};

// Auto-regressive propagation: frames in temporal order, predicted soft
// labels re-enter the queue as sources. Hard labels are argmax with ties
// toward the lower class index; only the final scoring hardens.
template <class Scalar>
PropagationResult<Scalar> propagate_video(const std::vector<Matrix<Scalar>>& frame_embeddings,
                                          const Matrix<Scalar>& first_frame_labels,
                                          const GridGeometry& geom,
                                          const PropagationConfig& cfg) {
  cfg.validate();
  if (frame_embeddings.empty()) throw UsageError("propagate_video: no frames");

  auto harden = [](const Matrix<Scalar>& soft) {
    std::vector<int> hard(static_cast<std::size_t>(soft.rows()));
    for (Eigen::Index i = 0; i < soft.rows(); ++i) {
      hard[static_cast<std::size_t>(i)] = argmax_row(soft, static_cast<int>(i));
    }
    return hard;
  };

  PropagationResult<Scalar> result;
  result.soft.push_back(first_frame_labels);
  result.hard.push_back(harden(first_frame_labels));

  ContextQueue<Scalar> queue(SourceFrame<Scalar>{frame_embeddings[0], first_frame_labels, 0},
                             cfg.context);
  for (std::size_t t = 1; t < frame_embeddings.size(); ++t) {
    const auto sources = queue.snapshot();
    Kernel<Scalar> kernel = build_kernel(frame_embeddings[t], sources, geom, cfg);
    result.fallback_count += kernel.fallback_count();
    Matrix<Scalar> soft = apply_kernel(kernel, sources);
    result.hard.push_back(harden(soft));
    queue.push(SourceFrame<Scalar>{frame_embeddings[t], soft, static_cast<int>(t)});
    result.soft.push_back(std::move(soft));
  }
  return result;
}

}  // namespace cyclewalk
