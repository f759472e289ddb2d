#pragma once

#include "dtgba/gfm.hpp"
#include "dtgba/tag.hpp"

#include <Eigen/Dense>

#include <vector>

namespace dtgba::testkit {

// Independent forward pass with dense matrices, no tape. `weights` holds the
// multiplicity of each edge (1 when empty).
inline Eigen::RowVectorXd reference_encode(const GraphEncoderWeights& w, int n, const std::vector<LocalEdge>& edges,
                                           const Eigen::MatrixXd& x, const std::vector<double>& weights = {}) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const double wt = weights.empty() ? 1.0 : weights[i];
    a(edges[i].u, edges[i].v) += wt;
    a(edges[i].v, edges[i].u) += wt;
  }
  for (int i = 0; i < n; ++i) a.row(i) /= a.row(i).sum();
  Eigen::MatrixXd h1 = ((a * x * w.w1).rowwise() + w.b1.row(0)).array().tanh().matrix();
  Eigen::MatrixXd h2 = ((a * h1 * w.w2).rowwise() + w.b2.row(0)).array().tanh().matrix();
  return h2.colwise().mean() * w.graph_proj;
}

// Argmax over cosine(z, label row), ties to the lower class.
inline int reference_argmax(const Eigen::RowVectorXd& z, const Eigen::MatrixXd& labels) {
  int best = 0;
  double best_score = -2.0;
  for (Eigen::Index c = 0; c < labels.rows(); ++c) {
    const double s = z.dot(labels.row(c)) / (z.norm() * labels.row(c).norm());
    if (s > best_score) {
      best_score = s;
      best = static_cast<int>(c);
    }
  }
  return best;
}

// Prompted prediction: the prompt is added to every node attribute.
inline int reference_predict(const GraphEncoderWeights& w, int n, const std::vector<LocalEdge>& edges,
                             const Eigen::MatrixXd& x, const Eigen::RowVectorXd& prompt,
                             const Eigen::MatrixXd& labels) {
  const Eigen::MatrixXd shifted = x.rowwise() + prompt;
  return reference_argmax(reference_encode(w, n, edges, shifted), labels);
}

}  // namespace dtgba::testkit
