#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cyclewalk/tape.hpp"

namespace cyclewalk {

// Edge dropout placement. pre_softmax writes -1e10 into energies before the
// softmax (the practical form); renormalized zeroes transition probabilities
// after the softmax and divides rows by their new sums (the formal form).
enum class DropoutForm { pre_softmax, renormalized };

constexpr double kDroppedEnergy = -1e10;

struct WalkConfig {
  double tau = 0.07;
  double delta = 0.1;
  int clip_len = 4;  // T; a clip supports sub-cycles 1..T-1
  DropoutForm dropout_form = DropoutForm::pre_softmax;

  void validate() const {
    if (tau <= 0) throw ConfigError("temperature must be positive");
    if (delta < 0 || delta >= 1) throw ConfigError("edge dropout rate must lie in [0,1)");
    if (clip_len < 2) throw ConfigError("clip length must be >= 2");
  }
};

// Correspondence targets: node i at the source time maps to target[i] at the
// target time; rows with valid[i] == 0 are excluded from losses and accuracy.
struct CorrespondenceLabels {
  std::vector<int> target;
  std::vector<std::uint8_t> valid;

  int valid_count() const {
    int n = 0;
    for (auto v : valid) n += v ? 1 : 0;
    return n;
  }
};

// E(i,j) = <row_i(Qa), row_j(Qb)> / tau.
template <class Scalar>
Matrix<Scalar> transition_energies(const Matrix<Scalar>& q_a, const Matrix<Scalar>& q_b,
                                   Scalar tau) {
  if (tau <= Scalar(0)) throw ConfigError("temperature must be positive");
  if (q_a.cols() != q_b.cols()) {
    throw ShapeError("transition_energies: embedding dims disagree");
  }
  return (q_a * q_b.transpose()) / tau;
}

template <class Scalar>
Matrix<Scalar> row_softmax(const Matrix<Scalar>& energies) {
  return row_softmax_values(energies);
}

// Each entry is dropped independently with probability delta, row-major draw
// order.
inline BoolMask edge_dropout_mask(int rows, int cols, double delta, std::mt19937_64& rng) {
  if (delta < 0 || delta >= 1) throw ConfigError("edge dropout rate must lie in [0,1)");
  BoolMask mask(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) mask(i, j) = delta > 0 && uniform01(rng) < delta;
  }
  return mask;
}

template <class Scalar>
Matrix<Scalar> apply_edge_dropout(Matrix<Scalar> energies, const BoolMask& mask) {
  for (Eigen::Index i = 0; i < energies.rows(); ++i) {
    for (Eigen::Index j = 0; j < energies.cols(); ++j) {
      if (mask(i, j)) energies(i, j) = Scalar(kDroppedEnergy);
    }
  }
  return energies;
}

// [E_1 .. E_{T-1}, E_{T-1}^T .. E_1^T]: the 2T-2 hop energies of the
// palindrome graph. Dropout (if any) is applied afterwards, to each list
// entry independently.
template <class Scalar>
std::vector<Matrix<Scalar>> palindrome_energies(const std::vector<Matrix<Scalar>>& forward) {
  if (forward.empty()) throw ConfigError("palindrome needs at least one hop (T >= 2)");
  std::vector<Matrix<Scalar>> out = forward;
  for (auto it = forward.rbegin(); it != forward.rend(); ++it) {
    out.push_back(it->transpose());
  }
  return out;
}

// Multi-step walk: left-to-right product of one-hop transition matrices.
// Entry (i,j) is the probability that a walker starting at node i arrives at
// node j.
template <class Scalar>
Matrix<Scalar> walk(const std::vector<Matrix<Scalar>>& transitions) {
  if (transitions.empty()) throw UsageError("walk: empty transition list");
  Matrix<Scalar> acc = transitions.front();
  for (std::size_t k = 1; k < transitions.size(); ++k) {
    if (acc.cols() != transitions[k].rows()) {
      throw ShapeError("walk: step " + std::to_string(k) + " has incompatible dims");
    }
    acc = acc * transitions[k];
  }
  return acc;
}

// Mean over valid query nodes of -log A(i, Y(i)).
template <class Scalar>
Scalar supervised_walk_loss(const Matrix<Scalar>& walk_matrix, const CorrespondenceLabels& y) {
  if (static_cast<Eigen::Index>(y.target.size()) != walk_matrix.rows()) {
    throw ShapeError("supervised_walk_loss: label count does not match walk rows");
  }
  Scalar total = 0;
  int n = 0;
  for (std::size_t i = 0; i < y.target.size(); ++i) {
    if (!y.valid[i]) continue;
    if (y.target[i] < 0 || y.target[i] >= walk_matrix.cols()) {
      throw ShapeError("supervised_walk_loss: target outside node range");
    }
    total += -std::log(walk_matrix(static_cast<Eigen::Index>(i), y.target[i]));
    ++n;
  }
  if (n == 0) throw UsageError("supervised_walk_loss: no valid rows");
  return total / static_cast<Scalar>(n);
}

struct LossReport {
  std::vector<double> subcycle;  // L^1 .. L^{T-1}
  double total = 0;
  double mean_return_probability = 0;  // diagonal mean of the full round trip
};

// Tape node ids of the palindrome cycle objective.
struct CycleGraph {
  std::vector<int> transition_ids;  // 2T-2 row-stochastic steps
  std::vector<int> subcycle_loss_ids;
  int total_loss_id = -1;
  int full_roundtrip_id = -1;
};

// Builds sub-cycle losses L^k = mean_i -log R_k(i,i) with
// R_k = A_1...A_k * B_k...B_1 over the palindrome steps, for k = 1..T-1,
// sharing the per-hop transition matrices across sub-cycles. `dropout_rng`
// enables edge dropout (training); null disables it (evaluation).
template <class Scalar>
CycleGraph build_cycle_loss(Tape<Scalar>& tape, const std::vector<int>& forward_energy_ids,
                            const WalkConfig& cfg, std::mt19937_64* dropout_rng) {
  cfg.validate();
  const int hops = static_cast<int>(forward_energy_ids.size());
  if (hops < 1) throw ConfigError("cycle loss needs T >= 2 (at least one hop)");
  const int n = static_cast<int>(tape.value(forward_energy_ids[0]).rows());

  std::vector<int> energy_ids = forward_energy_ids;
  for (int k = hops - 1; k >= 0; --k) {
    energy_ids.push_back(tape.transpose(forward_energy_ids[static_cast<std::size_t>(k)]));
  }

  CycleGraph g;
  g.transition_ids.reserve(energy_ids.size());
  for (int e : energy_ids) {
    if (dropout_rng != nullptr && cfg.delta > 0) {
      BoolMask mask = edge_dropout_mask(n, n, cfg.delta, *dropout_rng);
      if (cfg.dropout_form == DropoutForm::pre_softmax) {
        g.transition_ids.push_back(
            tape.row_softmax(tape.mask_fill(e, std::move(mask), Scalar(kDroppedEnergy))));
      } else {
        g.transition_ids.push_back(
            tape.row_l1_normalize(tape.mask_fill(tape.row_softmax(e), std::move(mask), Scalar(0))));
      }
    } else {
      g.transition_ids.push_back(tape.row_softmax(e));
    }
  }

  std::vector<int> diag(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) diag[static_cast<std::size_t>(i)] = i;

  int prefix = -1;  // A_1...A_k
  int suffix = -1;  // B_k...B_1
  int total = -1;
  for (int k = 1; k <= hops; ++k) {
    const int fwd = g.transition_ids[static_cast<std::size_t>(k - 1)];
    const int bwd = g.transition_ids[static_cast<std::size_t>(2 * hops - k)];
    prefix = (k == 1) ? fwd : tape.matmul(prefix, fwd);
    suffix = (k == 1) ? bwd : tape.matmul(bwd, suffix);
    const int roundtrip = tape.matmul(prefix, suffix);
    const int loss = tape.scale(tape.mean(tape.log(tape.gather(roundtrip, diag, diag))), Scalar(-1));
    g.subcycle_loss_ids.push_back(loss);
    total = (k == 1) ? loss : tape.add(total, loss);
    if (k == hops) g.full_roundtrip_id = roundtrip;
  }
  g.total_loss_id = total;
  return g;
}

// Evaluates the cycle objective on fixed energies (no gradients).
template <class Scalar>
LossReport cycle_and_subcycle_losses(const std::vector<Matrix<Scalar>>& forward_energies,
                                     const WalkConfig& cfg, std::mt19937_64* dropout_rng = nullptr) {
  Tape<Scalar> tape;
  std::vector<int> ids;
  ids.reserve(forward_energies.size());
  for (const auto& e : forward_energies) ids.push_back(tape.input(e));
  CycleGraph g = build_cycle_loss(tape, ids, cfg, dropout_rng);
  LossReport report;
  for (int id : g.subcycle_loss_ids) {
    report.subcycle.push_back(static_cast<double>(tape.value(id)(0, 0)));
  }
  report.total = static_cast<double>(tape.value(g.total_loss_id)(0, 0));
  report.mean_return_probability =
      static_cast<double>(tape.value(g.full_roundtrip_id).diagonal().mean());
  return report;
}

// Appendix-style false-negative analysis for InfoNCE with duplicated
// positives: q is contrasted against [u, u x duplicates, distractors], and
// the combined coefficient on the positive direction
//   lambda_u = 1 - (1 + |dups|) exp(u^T q) / Z
// stays nonnegative. Returns both the closed-form quantities and the
// autodiff route for comparison.
struct FalseNegativeCheck {
  double lambda_analytic = 0;
  double lambda_autodiff = 0;
  Matrix<double> grad_q_analytic;  // gradient of the log-likelihood L wrt q
  Matrix<double> grad_q_autodiff;  // -d(CE)/dq read off the tape
  double max_grad_abs_diff = 0;
};

inline FalseNegativeCheck false_negative_check(const Matrix<double>& q, const Matrix<double>& u,
                                               const Matrix<double>& distractors,
                                               int duplicate_count) {
  if (q.rows() != 1 || u.rows() != 1) throw UsageError("q and u must be row vectors");
  if (duplicate_count < 0) throw UsageError("duplicate_count must be >= 0");
  const int dim = static_cast<int>(q.cols());
  const int extras = static_cast<int>(distractors.rows());
  const int total = 1 + duplicate_count + extras;

  Matrix<double> bank(total, dim);
  bank.row(0) = u.row(0);
  for (int k = 0; k < duplicate_count; ++k) bank.row(1 + k) = u.row(0);
  for (int k = 0; k < extras; ++k) bank.row(1 + duplicate_count + k) = distractors.row(k);

  FalseNegativeCheck out;

  // Closed form (temperature 1): Z = (1+m) e^{u.q} + sum e^{v.q}.
  const double pos_logit = u.row(0).dot(q.row(0));
  double z = (1.0 + duplicate_count) * std::exp(pos_logit);
  for (int k = 0; k < extras; ++k) {
    z += std::exp(distractors.row(k).dot(q.row(0)));
  }
  out.lambda_analytic = 1.0 - (1.0 + duplicate_count) * std::exp(pos_logit) / z;
  out.grad_q_analytic = out.lambda_analytic * u;
  for (int k = 0; k < extras; ++k) {
    out.grad_q_analytic -=
        (std::exp(distractors.row(k).dot(q.row(0))) / z) * distractors.row(k);
  }

  // Autodiff route: cross-entropy of the softmax over the bank logits with
  // the positive as target; CE = -L.
  Tape<double> tape;
  const int qn = tape.param(q, "q");
  const int logits = tape.matmul(qn, tape.transpose(tape.input(bank, "bank")));
  const int loss = tape.softmax_xent(logits, std::vector<int>{0});
  tape.backward(loss);

  const Matrix<double>& logit_grad = tape.grad(logits);  // probs - onehot
  double coeff = logit_grad(0, 0);
  for (int k = 0; k < duplicate_count; ++k) coeff += logit_grad(0, 1 + k);
  out.lambda_autodiff = -coeff;

  out.grad_q_autodiff = -tape.grad(qn);
  out.max_grad_abs_diff = (out.grad_q_autodiff - out.grad_q_analytic).cwiseAbs().maxCoeff();
  return out;
}

}  // namespace cyclewalk
