#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "cyclewalk/common.hpp"

namespace cyclewalk {

enum class Op {
  input,
  matmul,
  transpose,
  add,       // same shape, or rhs is a 1xC bias row added to every row
  mul,       // elementwise
  relu,
  scale,
  l2_normalize_rows,
  row_softmax,
  row_l1_normalize,
  log,
  mask_fill,
  gather,  // (rows[k], cols[k]) entries as a Kx1 column
  sum,     // full reduction to 1x1
  softmax_xent,  // fused row-softmax + cross-entropy, mean over valid rows
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::input: return "input";
    case Op::matmul: return "matmul";
    case Op::transpose: return "transpose";
    case Op::add: return "add";
    case Op::mul: return "mul";
    case Op::relu: return "relu";
    case Op::scale: return "scale";
    case Op::l2_normalize_rows: return "l2-normalize-rows";
    case Op::row_softmax: return "row-softmax";
    case Op::row_l1_normalize: return "row-l1-normalize";
    case Op::log: return "log";
    case Op::mask_fill: return "mask-fill";
    case Op::gather: return "gather";
    case Op::sum: return "sum";
    case Op::softmax_xent: return "softmax-xent";
  }
  return "?";
}

// Numerically stable row softmax: max-subtracted, so softmax(z) == softmax(z + c).
template <class Scalar>
Matrix<Scalar> row_softmax_values(const Matrix<Scalar>& logits) {
  Matrix<Scalar> out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Scalar mx = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - mx).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

// Reverse-mode tape over row-major matrices. Nodes are created eagerly with
// their forward value cached; backward() walks the tape in reverse creation
// order, which is a reverse topological order by construction.
template <class Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;

  int input(Mat value, std::string name = {}) {
    return push(Op::input, -1, -1, std::move(value), std::move(name), /*is_param=*/false);
  }

  // A parameter is an input whose gradient is requested.
  int param(Mat value, std::string name = {}) {
    return push(Op::input, -1, -1, std::move(value), std::move(name), /*is_param=*/true);
  }

  int matmul(int a, int b) {
    const Mat& A = at(a).value;
    const Mat& B = at(b).value;
    if (A.cols() != B.rows()) {
      throw ShapeError("matmul at node " + std::to_string(nodes_.size()) + ": lhs " +
                       shape_str(A) + " vs rhs " + shape_str(B));
    }
    return push(Op::matmul, a, b, A * B);
  }

  int transpose(int a) { return push(Op::transpose, a, -1, at(a).value.transpose()); }

  int add(int a, int b) {
    const Mat& A = at(a).value;
    const Mat& B = at(b).value;
    if (A.rows() == B.rows() && A.cols() == B.cols()) {
      return push(Op::add, a, b, A + B);
    }
    if (B.rows() == 1 && B.cols() == A.cols()) {  // bias row broadcast over rows
      Mat v = A;
      v.rowwise() += B.row(0);
      return push(Op::add, a, b, std::move(v));
    }
    throw ShapeError("add at node " + std::to_string(nodes_.size()) + ": " + shape_str(A) +
                     " vs " + shape_str(B));
  }

  int mul(int a, int b) {
    const Mat& A = at(a).value;
    const Mat& B = at(b).value;
    if (A.rows() != B.rows() || A.cols() != B.cols()) {
      throw ShapeError("mul at node " + std::to_string(nodes_.size()) + ": " + shape_str(A) +
                       " vs " + shape_str(B));
    }
    return push(Op::mul, a, b, A.cwiseProduct(B));
  }

  int relu(int a) { return push(Op::relu, a, -1, at(a).value.cwiseMax(Scalar(0))); }

  int scale(int a, Scalar c) {
    int id = push(Op::scale, a, -1, at(a).value * c);
    nodes_[id].c = c;
    return id;
  }

  int l2_normalize_rows(int a) {
    const Mat& A = at(a).value;
    Mat v(A.rows(), A.cols());
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
      const Scalar n = A.row(i).norm();
      v.row(i) = A.row(i) / (n + norm_eps());
    }
    return push(Op::l2_normalize_rows, a, -1, std::move(v));
  }

  int row_softmax(int a) { return push(Op::row_softmax, a, -1, row_softmax_values(at(a).value)); }

  // Divides each row by its sum; an all-zero row becomes uniform (and blocks
  // gradient), matching the behavior of a fully dropped row in the
  // pre-softmax dropout form.
  int row_l1_normalize(int a) {
    const Mat& A = at(a).value;
    Mat v(A.rows(), A.cols());
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
      const Scalar s = A.row(i).sum();
      if (s > Scalar(0)) {
        v.row(i) = A.row(i) / s;
      } else {
        v.row(i).setConstant(Scalar(1) / Scalar(A.cols()));
      }
    }
    return push(Op::row_l1_normalize, a, -1, std::move(v));
  }

  int log(int a) { return push(Op::log, a, -1, at(a).value.array().log().matrix()); }

  int mask_fill(int a, BoolMask mask, Scalar fill) {
    const Mat& A = at(a).value;
    if (mask.rows() != A.rows() || mask.cols() != A.cols()) {
      throw ShapeError("mask-fill at node " + std::to_string(nodes_.size()) + ": value " +
                       shape_str(A) + " vs mask " + std::to_string(mask.rows()) + "x" +
                       std::to_string(mask.cols()));
    }
    Mat v = A;
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      for (Eigen::Index j = 0; j < v.cols(); ++j) {
        if (mask(i, j)) v(i, j) = fill;
      }
    }
    int id = push(Op::mask_fill, a, -1, std::move(v));
    nodes_[id].mask = std::move(mask);
    return id;
  }

  int gather(int a, std::vector<int> rows, std::vector<int> cols) {
    const Mat& A = at(a).value;
    if (rows.size() != cols.size() || rows.empty()) {
      throw UsageError("gather needs equal-length non-empty index lists");
    }
    Mat v(static_cast<Eigen::Index>(rows.size()), 1);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      if (rows[k] < 0 || rows[k] >= A.rows() || cols[k] < 0 || cols[k] >= A.cols()) {
        throw ShapeError("gather index (" + std::to_string(rows[k]) + "," +
                         std::to_string(cols[k]) + ") outside " + shape_str(A));
      }
      v(static_cast<Eigen::Index>(k), 0) = A(rows[k], cols[k]);
    }
    int id = push(Op::gather, a, -1, std::move(v));
    nodes_[id].rows = std::move(rows);
    nodes_[id].cols = std::move(cols);
    return id;
  }

  int sum(int a) {
    Mat v(1, 1);
    v(0, 0) = at(a).value.sum();
    return push(Op::sum, a, -1, std::move(v));
  }

  int mean(int a) {
    const auto n = at(a).value.size();
    return scale(sum(a), Scalar(1) / static_cast<Scalar>(n));
  }

  // Fused softmax + cross-entropy over rows of `logits`: mean over rows with
  // targets[i] >= 0 of -log softmax(logits[i])[targets[i]]. The backward rule
  // is (probabilities - onehot) / count, which never touches log of a tiny
  // probability.
  int softmax_xent(int logits, std::vector<int> targets) {
    const Mat& Z = at(logits).value;
    if (static_cast<Eigen::Index>(targets.size()) != Z.rows()) {
      throw ShapeError("softmax-xent: " + std::to_string(targets.size()) + " targets for " +
                       shape_str(Z));
    }
    int valid = 0;
    Scalar total = 0;
    Mat probs = row_softmax_values(Z);
    for (Eigen::Index i = 0; i < Z.rows(); ++i) {
      const int t = targets[static_cast<std::size_t>(i)];
      if (t < 0) continue;
      if (t >= Z.cols()) {
        throw ShapeError("softmax-xent target " + std::to_string(t) + " outside " + shape_str(Z));
      }
      const Scalar mx = Z.row(i).maxCoeff();
      const Scalar lse = std::log((Z.row(i).array() - mx).exp().sum()) + mx;
      total += lse - Z(i, t);
      ++valid;
    }
    if (valid == 0) throw UsageError("softmax-xent: no valid target rows");
    Mat v(1, 1);
    v(0, 0) = total / static_cast<Scalar>(valid);
    int id = push(Op::softmax_xent, logits, -1, std::move(v));
    nodes_[id].targets = std::move(targets);
    nodes_[id].cached = std::move(probs);
    nodes_[id].c = Scalar(1) / static_cast<Scalar>(valid);
    return id;
  }

  const Mat& value(int id) const { return at(id).value; }

  const Mat& grad(int id) const {
    if (!backward_done_) throw UsageError("grad requested before backward");
    const Node& n = at(id);
    if (!n.needs_grad) throw UsageError("grad requested for a node without gradient tracking");
    return n.grad;
  }

  bool needs_grad(int id) const { return at(id).needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Accumulates gradients of a scalar loss into every parameter-reachable
  // node. Call once per tape.
  void backward(int loss) {
    Node& L = at(loss);
    if (L.value.rows() != 1 || L.value.cols() != 1) {
      throw UsageError("backward requires a scalar loss node, got " + shape_str(L.value));
    }
    if (backward_done_) throw UsageError("backward already run on this tape");
    backward_done_ = true;
    for (Node& n : nodes_) {
      if (n.needs_grad) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    }
    if (!L.needs_grad) return;  // loss does not depend on any parameter
    L.grad(0, 0) = Scalar(1);
    for (int id = loss; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.needs_grad || n.op == Op::input) continue;
      propagate(n);
    }
  }

 private:
  struct Node {
    Op op;
    int a = -1, b = -1;
    Scalar c = 0;  // scale factor / xent 1/count
    Mat value;
    Mat grad;
    Mat cached;  // softmax probabilities for fused xent
    BoolMask mask;
    std::vector<int> rows, cols, targets;
    std::string name;
    bool needs_grad = false;
  };

  static constexpr Scalar norm_eps() { return Scalar(1e-12); }

  static std::string shape_str(const Mat& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
  }

  Node& at(int id) {
    if (id < 0 || id >= static_cast<int>(nodes_.size())) {
      throw UsageError("node id " + std::to_string(id) + " out of range");
    }
    return nodes_[static_cast<std::size_t>(id)];
  }
  const Node& at(int id) const { return const_cast<Tape*>(this)->at(id); }

  int push(Op op, int a, int b, Mat value, std::string name = {}, bool is_param = false) {
    if (!value.allFinite()) {
      throw NumericError("non-finite output of " + std::string(op_name(op)) + " at node " +
                         std::to_string(nodes_.size()) + (name.empty() ? "" : " (" + name + ")"));
    }
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.value = std::move(value);
    n.name = std::move(name);
    n.needs_grad = is_param || (a >= 0 && at(a).needs_grad) || (b >= 0 && at(b).needs_grad);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  void accumulate(int id, const Mat& g) {
    Node& n = at(id);
    if (n.needs_grad) n.grad += g;
  }

  void propagate(Node& n) {
    const Mat& g = n.grad;
    switch (n.op) {
      case Op::input:
        break;
      case Op::matmul:
        accumulate(n.a, g * at(n.b).value.transpose());
        accumulate(n.b, at(n.a).value.transpose() * g);
        break;
      case Op::transpose:
        accumulate(n.a, g.transpose());
        break;
      case Op::add: {
        accumulate(n.a, g);
        const Mat& B = at(n.b).value;
        if (B.rows() == g.rows()) {
          accumulate(n.b, g);
        } else {
          accumulate(n.b, g.colwise().sum());
        }
        break;
      }
      case Op::mul:
        accumulate(n.a, g.cwiseProduct(at(n.b).value));
        accumulate(n.b, g.cwiseProduct(at(n.a).value));
        break;
      case Op::relu: {
        const Mat& x = at(n.a).value;
        Mat dx = ((x.array() > Scalar(0)).template cast<Scalar>() * g.array()).matrix();
        accumulate(n.a, dx);
        break;
      }
      case Op::scale:
        accumulate(n.a, g * n.c);
        break;
      case Op::l2_normalize_rows: {
        const Mat& x = at(n.a).value;
        Mat dx(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
          const Scalar norm = x.row(i).norm();
          const Scalar d = norm + norm_eps();
          const Scalar s = g.row(i).dot(x.row(i));
          const Scalar coeff = norm > Scalar(0) ? s / (d * d * norm) : Scalar(0);
          dx.row(i) = g.row(i) / d - coeff * x.row(i);
        }
        accumulate(n.a, dx);
        break;
      }
      case Op::row_softmax: {
        const Mat& y = n.value;
        Mat dx(y.rows(), y.cols());
        for (Eigen::Index i = 0; i < y.rows(); ++i) {
          const Scalar s = g.row(i).dot(y.row(i));
          dx.row(i) = y.row(i).cwiseProduct((g.row(i).array() - s).matrix());
        }
        accumulate(n.a, dx);
        break;
      }
      case Op::row_l1_normalize: {
        const Mat& x = at(n.a).value;
        const Mat& y = n.value;
        Mat dx = Mat::Zero(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
          const Scalar rowsum = x.row(i).sum();
          if (rowsum <= Scalar(0)) continue;  // uniform fallback row: no gradient
          const Scalar s = g.row(i).dot(y.row(i));
          dx.row(i) = (g.row(i).array() - s).matrix() / rowsum;
        }
        accumulate(n.a, dx);
        break;
      }
      case Op::log:
        accumulate(n.a, g.cwiseQuotient(at(n.a).value));
        break;
      case Op::mask_fill: {
        Mat dx = g;
        for (Eigen::Index i = 0; i < dx.rows(); ++i) {
          for (Eigen::Index j = 0; j < dx.cols(); ++j) {
            if (n.mask(i, j)) dx(i, j) = Scalar(0);
          }
        }
        accumulate(n.a, dx);
        break;
      }
      case Op::gather: {
        const Mat& x = at(n.a).value;
        Mat dx = Mat::Zero(x.rows(), x.cols());
        for (std::size_t k = 0; k < n.rows.size(); ++k) {
          dx(n.rows[k], n.cols[k]) += g(static_cast<Eigen::Index>(k), 0);
        }
        accumulate(n.a, dx);
        break;
      }
      case Op::sum:
        accumulate(n.a, Mat::Constant(at(n.a).value.rows(), at(n.a).value.cols(), g(0, 0)));
        break;
      case Op::softmax_xent: {
        const Mat& probs = n.cached;
        Mat dz = Mat::Zero(probs.rows(), probs.cols());
        for (Eigen::Index i = 0; i < probs.rows(); ++i) {
          const int t = n.targets[static_cast<std::size_t>(i)];
          if (t < 0) continue;
          dz.row(i) = probs.row(i) * n.c * g(0, 0);
          dz(i, t) -= n.c * g(0, 0);
        }
        accumulate(n.a, dz);
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace cyclewalk
