#include "dtgba/autodiff.hpp"

#include "dtgba/errors.hpp"

#include <cmath>
#include <string>

namespace dtgba::ad {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw ShapeError("autodiff: use of an unbound variable");
  return *a.tape();
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(index_); }

Matrix Var::grad() const {
  if (tape_->has_grad(index_)) return tape_->grad(index_);
  const Matrix& v = value();
  return Matrix::Zero(v.rows(), v.cols());
}

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ShapeError("autodiff: scalar() on a non 1x1 value");
  return v(0, 0);
}

bool Var::requires_grad() const { return tape_->requires_grad(index_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), nullptr, false, false});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::parameter(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), nullptr, true, false});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, Backward backward) {
  bool needs = false;
  for (const Var& in : inputs) needs = needs || (in.valid() && in.requires_grad());
  nodes_.push_back(Node{std::move(value), Matrix(), needs ? std::move(backward) : nullptr, needs, false});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix& Tape::grad_slot(int i) {
  Node& n = nodes_[i];
  if (!n.has_grad) {
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(const Var& root) {
  if (root.tape() != this) throw ShapeError("autodiff: root belongs to another tape");
  if (value(root.index()).size() != 1) throw ShapeError("autodiff: backward needs a 1x1 root");
  for (Node& n : nodes_) {
    n.has_grad = false;
  }
  grad_slot(root.index()).setOnes();
  for (int i = root.index(); i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.has_grad && n.backward) n.backward(*this, i);
  }
}

// ---- elementwise and linear algebra ----------------------------------------

Var matmul(const Var& a, const Var& b) {
  Tape& t = tape_of(a);
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  int ia = a.index(), ib = b.index();
  return t.record(a.value() * b.value(), {a, b}, [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.grad_slot(ia).noalias() += g * tp.value(ib).transpose();
    if (tp.requires_grad(ib)) tp.grad_slot(ib).noalias() += tp.value(ia).transpose() * g;
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  int ia = a.index(), ib = b.index();
  return tape_of(a).record(a.value() + b.value(), {a, b}, [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.grad_slot(ia) += g;
    if (tp.requires_grad(ib)) tp.grad_slot(ib) += g;
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  int ia = a.index(), ib = b.index();
  return tape_of(a).record(a.value() - b.value(), {a, b}, [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.grad_slot(ia) += g;
    if (tp.requires_grad(ib)) tp.grad_slot(ib) -= g;
  });
}

Var hadamard(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "hadamard");
  int ia = a.index(), ib = b.index();
  return tape_of(a).record(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.grad_slot(ia) += g.cwiseProduct(tp.value(ib));
    if (tp.requires_grad(ib)) tp.grad_slot(ib) += g.cwiseProduct(tp.value(ia));
  });
}

Var scale(const Var& a, double s) {
  int ia = a.index();
  return tape_of(a).record(a.value() * s, {a}, [ia, s](Tape& tp, int self) {
    tp.grad_slot(ia) += tp.grad(self) * s;
  });
}

Var add_row(const Var& a, const Var& r) {
  if (r.rows() != 1 || r.cols() != a.cols()) throw ShapeError("add_row: row shape mismatch");
  int ia = a.index(), ir = r.index();
  Matrix out = a.value().rowwise() + r.value().row(0);
  return tape_of(a).record(std::move(out), {a, r}, [ia, ir](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.grad_slot(ia) += g;
    if (tp.requires_grad(ir)) tp.grad_slot(ir) += g.colwise().sum();
  });
}

Var tanh(const Var& a) {
  int ia = a.index();
  Matrix out = a.value().array().tanh().matrix();
  return tape_of(a).record(std::move(out), {a}, [ia](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    tp.grad_slot(ia).array() += tp.grad(self).array() * (1.0 - y.array().square());
  });
}

Var sigmoid(const Var& a) {
  int ia = a.index();
  Matrix out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return tape_of(a).record(std::move(out), {a}, [ia](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    tp.grad_slot(ia).array() += tp.grad(self).array() * y.array() * (1.0 - y.array());
  });
}

Var relu(const Var& a) {
  int ia = a.index();
  Matrix out = a.value().cwiseMax(0.0);
  return tape_of(a).record(std::move(out), {a}, [ia](Tape& tp, int self) {
    const Matrix& x = tp.value(ia);
    tp.grad_slot(ia).array() += (x.array() > 0.0).select(tp.grad(self).array(), 0.0);
  });
}

Var sum(const Var& a) {
  int ia = a.index();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return tape_of(a).record(std::move(out), {a}, [ia](Tape& tp, int self) {
    tp.grad_slot(ia).array() += tp.grad(self)(0, 0);
  });
}

Var mean_rows(const Var& a) {
  int ia = a.index();
  const double n = static_cast<double>(a.rows());
  if (a.rows() == 0) throw ShapeError("mean_rows: empty input");
  Matrix out = a.value().colwise().mean();
  return tape_of(a).record(std::move(out), {a}, [ia, n](Tape& tp, int self) {
    tp.grad_slot(ia).rowwise() += tp.grad(self).row(0) / n;
  });
}

Var scale_rows(const Var& a, const Var& r) {
  if (r.rows() != a.rows() || r.cols() != 1) throw ShapeError("scale_rows: scale shape mismatch");
  int ia = a.index(), ir = r.index();
  Matrix out = r.value().col(0).asDiagonal() * a.value();
  return tape_of(a).record(std::move(out), {a, r}, [ia, ir](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.grad_slot(ia) += tp.value(ir).col(0).asDiagonal() * g;
    if (tp.requires_grad(ir)) tp.grad_slot(ir).col(0) += g.cwiseProduct(tp.value(ia)).rowwise().sum();
  });
}

Var mul_scalar(const Var& a, const Var& s) {
  if (s.value().size() != 1) throw ShapeError("mul_scalar: scale must be 1x1");
  int ia = a.index(), is = s.index();
  Matrix out = a.value() * s.scalar();
  return tape_of(a).record(std::move(out), {a, s}, [ia, is](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.grad_slot(ia) += g * tp.value(is)(0, 0);
    if (tp.requires_grad(is)) tp.grad_slot(is)(0, 0) += g.cwiseProduct(tp.value(ia)).sum();
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Tape& t = tape_of(parts[0]);
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> layout;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    layout.emplace_back(p.index(), at);
    at += p.rows();
  }
  return t.record(std::move(out), parts, [layout](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    for (const auto& [idx, offset] : layout) {
      if (tp.requires_grad(idx)) tp.grad_slot(idx) += g.middleRows(offset, tp.value(idx).rows());
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Tape& t = tape_of(parts[0]);
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> layout;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    layout.emplace_back(p.index(), at);
    at += p.cols();
  }
  return t.record(std::move(out), parts, [layout](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    for (const auto& [idx, offset] : layout) {
      if (tp.requires_grad(idx)) tp.grad_slot(idx) += g.middleCols(offset, tp.value(idx).cols());
    }
  });
}

Var row(const Var& a, Eigen::Index i) {
  if (i < 0 || i >= a.rows()) throw ShapeError("row: index out of range");
  int ia = a.index();
  Matrix out = a.value().row(i);
  return tape_of(a).record(std::move(out), {a}, [ia, i](Tape& tp, int self) {
    tp.grad_slot(ia).row(i) += tp.grad(self).row(0);
  });
}

Var transpose(const Var& a) {
  int ia = a.index();
  Matrix out = a.value().transpose();
  return tape_of(a).record(std::move(out), {a}, [ia](Tape& tp, int self) {
    tp.grad_slot(ia) += tp.grad(self).transpose();
  });
}

Var normalize_rows(const Var& a) {
  int ia = a.index();
  Eigen::VectorXd norms = a.value().rowwise().norm();
  Matrix out = a.value();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    if (norms(i) > 0.0) out.row(i) /= norms(i);
  }
  return tape_of(a).record(std::move(out), {a}, [ia, norms](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    const Matrix& y = tp.value(self);
    Matrix& ga = tp.grad_slot(ia);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      if (norms(i) == 0.0) continue;
      const double proj = g.row(i).dot(y.row(i));
      ga.row(i) += (g.row(i) - proj * y.row(i)) / norms(i);
    }
  });
}

Var gather_rows(const Var& a, std::span<const int> indices) {
  int ia = a.index();
  std::vector<int> idx(indices.begin(), indices.end());
  Matrix out(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= a.rows()) throw ShapeError("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(r)) = a.value().row(idx[r]);
  }
  return tape_of(a).record(std::move(out), {a}, [ia, idx](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Matrix& ga = tp.grad_slot(ia);
    for (std::size_t r = 0; r < idx.size(); ++r) ga.row(idx[r]) += g.row(static_cast<Eigen::Index>(r));
  });
}

Var add_scalars(Tape& tape, std::span<const Var> parts) {
  Matrix out = Matrix::Zero(1, 1);
  std::vector<int> ids;
  for (const Var& p : parts) {
    if (p.value().size() != 1) throw ShapeError("add_scalars: non-scalar input");
    out(0, 0) += p.scalar();
    ids.push_back(p.index());
  }
  if (parts.empty()) return tape.constant(std::move(out));
  return tape.record(std::move(out), parts, [ids](Tape& tp, int self) {
    const double g = tp.grad(self)(0, 0);
    for (int id : ids) {
      if (tp.requires_grad(id)) tp.grad_slot(id)(0, 0) += g;
    }
  });
}

// ---- similarity and losses --------------------------------------------------

Var cosine(const Var& a, const Var& b) {
  if (a.rows() != 1 || b.rows() != 1 || a.cols() != b.cols()) throw ShapeError("cosine: expects equal row vectors");
  int ia = a.index(), ib = b.index();
  const double na = a.value().norm(), nb = b.value().norm();
  Matrix out = Matrix::Zero(1, 1);
  const bool degenerate = na == 0.0 || nb == 0.0;
  if (!degenerate) out(0, 0) = a.value().row(0).dot(b.value().row(0)) / (na * nb);
  return tape_of(a).record(std::move(out), {a, b}, [ia, ib, na, nb, degenerate](Tape& tp, int self) {
    if (degenerate) return;
    const double g = tp.grad(self)(0, 0);
    const double c = tp.value(self)(0, 0);
    const Matrix& av = tp.value(ia);
    const Matrix& bv = tp.value(ib);
    if (tp.requires_grad(ia)) tp.grad_slot(ia) += g * (bv / (na * nb) - c * av / (na * na));
    if (tp.requires_grad(ib)) tp.grad_slot(ib) += g * (av / (na * nb) - c * bv / (nb * nb));
  });
}

Var cosine_rows(const Var& a, const Var& b) {
  if (b.rows() != 1 || a.cols() != b.cols()) throw ShapeError("cosine_rows: shape mismatch");
  int ia = a.index(), ib = b.index();
  const Eigen::Index n = a.rows();
  Eigen::VectorXd na = a.value().rowwise().norm();
  const double nb = b.value().norm();
  Matrix out = Matrix::Zero(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (na(i) > 0.0 && nb > 0.0) out(i, 0) = a.value().row(i).dot(b.value().row(0)) / (na(i) * nb);
  }
  return tape_of(a).record(std::move(out), {a, b}, [ia, ib, na, nb](Tape& tp, int self) {
    if (nb == 0.0) return;
    const Matrix& g = tp.grad(self);
    const Matrix& c = tp.value(self);
    const Matrix& av = tp.value(ia);
    const Matrix& bv = tp.value(ib);
    const bool ga = tp.requires_grad(ia), gb = tp.requires_grad(ib);
    for (Eigen::Index i = 0; i < av.rows(); ++i) {
      if (na(i) == 0.0) continue;
      const double gi = g(i, 0), ci = c(i, 0);
      if (ga) tp.grad_slot(ia).row(i) += gi * (bv.row(0) / (na(i) * nb) - ci * av.row(i) / (na(i) * na(i)));
      if (gb) tp.grad_slot(ib).row(0) += gi * (av.row(i) / (na(i) * nb) - ci * bv.row(0) / (nb * nb));
    }
  });
}

Var cosine_logits(const Var& z, const Matrix& labels, double s) {
  if (z.rows() != 1 || z.cols() != labels.cols()) throw ShapeError("cosine_logits: shape mismatch");
  int iz = z.index();
  const double nz = z.value().norm();
  Eigen::VectorXd nl = labels.rowwise().norm();
  Matrix cos = Matrix::Zero(1, labels.rows());
  for (Eigen::Index c = 0; c < labels.rows(); ++c) {
    if (nz > 0.0 && nl(c) > 0.0) cos(0, c) = z.value().row(0).dot(labels.row(c)) / (nz * nl(c));
  }
  Matrix out = cos * s;
  return tape_of(z).record(std::move(out), {z}, [iz, labels, nz, nl, cos, s](Tape& tp, int self) {
    if (nz == 0.0) return;
    const Matrix& g = tp.grad(self);
    const Matrix& zv = tp.value(iz);
    Matrix& gz = tp.grad_slot(iz);
    for (Eigen::Index c = 0; c < labels.rows(); ++c) {
      if (nl(c) == 0.0) continue;
      gz += (g(0, c) * s) * (labels.row(c) / (nz * nl(c)) - cos(0, c) * zv / (nz * nz));
    }
  });
}

Var nll(const Var& logits, int target) {
  if (logits.rows() != 1 || target < 0 || target >= logits.cols()) throw ShapeError("nll: bad target or shape");
  int il = logits.index();
  const Eigen::RowVectorXd l = logits.value().row(0);
  const double m = l.maxCoeff();
  Eigen::RowVectorXd e = (l.array() - m).exp().matrix();
  const double z = e.sum();
  Matrix out(1, 1);
  out(0, 0) = (m + std::log(z)) - l(target);
  Eigen::RowVectorXd soft = e / z;
  return tape_of(logits).record(std::move(out), {logits}, [il, soft, target](Tape& tp, int self) {
    const double g = tp.grad(self)(0, 0);
    Matrix& gl = tp.grad_slot(il);
    gl.row(0) += g * soft;
    gl(0, target) -= g;
  });
}

Var mean_nll_rows(const Var& logits, std::span<const int> targets) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows() || logits.rows() == 0) {
    throw ShapeError("mean_nll_rows: target count mismatch");
  }
  int il = logits.index();
  const Matrix& l = logits.value();
  const Eigen::Index n = l.rows();
  Matrix soft(n, l.cols());
  double total = 0.0;
  std::vector<int> tgt(targets.begin(), targets.end());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = l.row(i).maxCoeff();
    Eigen::RowVectorXd e = (l.row(i).array() - m).exp().matrix();
    const double z = e.sum();
    soft.row(i) = e / z;
    total += (m + std::log(z)) - l(i, tgt[static_cast<std::size_t>(i)]);
  }
  Matrix out(1, 1);
  out(0, 0) = total / static_cast<double>(n);
  return tape_of(logits).record(std::move(out), {logits}, [il, soft, tgt](Tape& tp, int self) {
    const double g = tp.grad(self)(0, 0) / static_cast<double>(soft.rows());
    Matrix& gl = tp.grad_slot(il);
    gl += g * soft;
    for (std::size_t i = 0; i < tgt.size(); ++i) gl(static_cast<Eigen::Index>(i), tgt[i]) -= g;
  });
}

// ---- graph aggregation ------------------------------------------------------

Var normalized_adjacency(Tape& tape, int n, std::span<const EdgeIndex> fixed,
                         std::span<const EdgeIndex> variable, const Var& weights) {
  if (!variable.empty() && (!weights.valid() || weights.rows() != static_cast<Eigen::Index>(variable.size()))) {
    throw ShapeError("normalized_adjacency: weight count mismatch");
  }
  Matrix a = Matrix::Identity(n, n);
  auto check = [n](const EdgeIndex& e) {
    if (e.u < 0 || e.v < 0 || e.u >= n || e.v >= n || e.u == e.v) {
      throw ShapeError("normalized_adjacency: invalid edge endpoint");
    }
  };
  for (const EdgeIndex& e : fixed) {
    check(e);
    a(e.u, e.v) += 1.0;
    a(e.v, e.u) += 1.0;
  }
  for (std::size_t k = 0; k < variable.size(); ++k) {
    const EdgeIndex& e = variable[k];
    check(e);
    const double w = weights.value()(static_cast<Eigen::Index>(k), 0);
    a(e.u, e.v) += w;
    a(e.v, e.u) += w;
  }
  Eigen::VectorXd deg = a.rowwise().sum();
  Matrix out = deg.cwiseInverse().asDiagonal() * a;
  if (variable.empty()) return tape.constant(std::move(out));
  std::vector<EdgeIndex> var(variable.begin(), variable.end());
  int iw = weights.index();
  return tape.record(std::move(out), {weights}, [iw, var, deg](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    const Matrix& an = tp.value(self);
    // dL/dA_ij = (G_ij - sum_k G_ik Ahat_ik) / d_i
    Eigen::VectorXd q = g.cwiseProduct(an).rowwise().sum();
    Matrix& gw = tp.grad_slot(iw);
    for (std::size_t k = 0; k < var.size(); ++k) {
      const EdgeIndex& e = var[k];
      gw(static_cast<Eigen::Index>(k), 0) +=
          (g(e.u, e.v) - q(e.u)) / deg(e.u) + (g(e.v, e.u) - q(e.v)) / deg(e.v);
    }
  });
}

}  // namespace dtgba::ad
