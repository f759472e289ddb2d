#include "dtgba/optim.hpp"

#include "dtgba/errors.hpp"

namespace dtgba {

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "rmsprop") return OptimizerKind::RmsProp;
  throw ValidationError("unknown optimizer '" + name + "'");
}

std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::Sgd: return "sgd";
    case OptimizerKind::Adam: return "adam";
    case OptimizerKind::RmsProp: return "rmsprop";
  }
  return "adam";
}

namespace {

void check(std::span<Eigen::MatrixXd* const> params, std::span<const Eigen::MatrixXd> grads) {
  if (params.size() != grads.size()) throw ShapeError("optimizer: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->rows() != grads[i].rows() || params[i]->cols() != grads[i].cols()) {
      throw ShapeError("optimizer: gradient shape mismatch at slot " + std::to_string(i));
    }
  }
}

}  // namespace

void Sgd::step(std::span<Eigen::MatrixXd* const> params, std::span<const Eigen::MatrixXd> grads) {
  check(params, grads);
  for (std::size_t i = 0; i < params.size(); ++i) *params[i] -= lr_ * grads[i];
}

void Adam::step(std::span<Eigen::MatrixXd* const> params, std::span<const Eigen::MatrixXd> grads) {
  check(params, grads);
  if (m_.empty()) {
    for (auto* p : params) {
      m_.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
      v_.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
    }
  }
  if (m_.size() != params.size()) throw ShapeError("adam: parameter list changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseAbs2();
    params[i]->array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

void RmsProp::step(std::span<Eigen::MatrixXd* const> params, std::span<const Eigen::MatrixXd> grads) {
  check(params, grads);
  if (sq_.empty()) {
    for (auto* p : params) sq_.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    sq_[i] = alpha_ * sq_[i] + (1.0 - alpha_) * grads[i].cwiseAbs2();
    params[i]->array() -= lr_ * grads[i].array() / (sq_[i].array().sqrt() + eps_);
  }
}

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, double lr) {
  switch (kind) {
    case OptimizerKind::Sgd: return std::make_unique<Sgd>(lr);
    case OptimizerKind::Adam: return std::make_unique<Adam>(lr);
    case OptimizerKind::RmsProp: return std::make_unique<RmsProp>(lr);
  }
  return std::make_unique<Adam>(lr);
}

}  // namespace dtgba
