#pragma once

// Matrix-granular reverse-mode differentiation.
//
// Every value on the tape is a dense Eigen matrix. Row vectors (1 x k) are
// used for single embeddings and n x k matrices for per-node features.
// Constants never receive gradients and their backward closures are skipped.

#include <Eigen/Dense>

#include <deque>
#include <functional>
#include <span>
#include <utility>
#include <vector>

namespace dtgba::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  const Matrix& value() const;
  /// Gradient accumulated by the last backward pass (zeros if none reached it).
  Matrix grad() const;
  double scalar() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;
  Tape* tape() const noexcept { return tape_; }
  int index() const noexcept { return index_; }

 private:
  friend class Tape;
  Var(Tape* tape, int index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  int index_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var parameter(Matrix value);

  /// Records an op output. The op requires a gradient iff any input does.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Matrix value, std::span<const Var> inputs, Backward backward);

  /// Seeds d(root)/d(root) = 1 and propagates to every reachable node.
  void backward(const Var& root);

  const Matrix& value(int i) const { return nodes_[i].value; }
  bool requires_grad(int i) const { return nodes_[i].requires_grad; }
  bool has_grad(int i) const { return nodes_[i].has_grad; }
  const Matrix& grad(int i) const { return nodes_[i].grad; }

  /// Accumulation target for input `i`; allocated to zeros on first touch.
  Matrix& grad_slot(int i);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
    bool has_grad = false;
  };
  std::deque<Node> nodes_;
};

// ---- elementwise and linear algebra ----------------------------------------

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// a (n x k) + row (1 x k) broadcast over rows.
Var add_row(const Var& a, const Var& row);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);
/// Sum of all entries, 1 x 1.
Var sum(const Var& a);
/// Column-wise mean over rows, 1 x k.
Var mean_rows(const Var& a);
/// Row i of `a` multiplied by r(i, 0).
Var scale_rows(const Var& a, const Var& r);
/// a * s where s is 1 x 1.
Var mul_scalar(const Var& a, const Var& s);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var row(const Var& a, Eigen::Index i);
Var transpose(const Var& a);
/// Each row scaled to unit L2 norm (zero rows stay zero).
Var normalize_rows(const Var& a);
/// Gathers rows of `a` by index, in the given order.
Var gather_rows(const Var& a, std::span<const int> indices);
/// Sum of 1 x 1 scalars (empty span gives a constant zero on `tape`).
Var add_scalars(Tape& tape, std::span<const Var> parts);

// ---- similarity and losses --------------------------------------------------

/// Cosine similarity of two row vectors, 1 x 1. Zero-norm inputs give 0
/// with zero gradient.
Var cosine(const Var& a, const Var& b);
/// Per-row cosine of a (n x k) with a single row b (1 x k); result n x 1.
Var cosine_rows(const Var& a, const Var& b);
/// scale * cosine(z, E.row(c)) for every row of the constant matrix E; 1 x C.
Var cosine_logits(const Var& z, const Matrix& label_embeddings, double scale);
/// -log softmax(logits)[target], 1 x 1.
Var nll(const Var& logits, int target);
/// Mean over rows of -log softmax(row i)[targets[i]], 1 x 1.
Var mean_nll_rows(const Var& logits, std::span<const int> targets);

// ---- graph aggregation ------------------------------------------------------

struct EdgeIndex {
  int u = 0;
  int v = 0;
};

/// Row-normalized weighted adjacency with unit self-loops:
/// A = I + sum_fixed (e_u e_v^T + e_v e_u^T) + sum_var w_e (...), returns D^-1 A.
/// `weights` is m x 1 for the m variable edges (may be invalid when m = 0).
Var normalized_adjacency(Tape& tape, int n, std::span<const EdgeIndex> fixed,
                         std::span<const EdgeIndex> variable, const Var& weights);

}  // namespace dtgba::ad
