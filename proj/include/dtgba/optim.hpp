#pragma once

#include <Eigen/Dense>

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dtgba {

enum class OptimizerKind { Sgd, Adam, RmsProp };

OptimizerKind parse_optimizer_kind(const std::string& name);
std::string to_string(OptimizerKind kind);

/// First-order optimizer over a fixed list of parameter matrices. State is
/// keyed by position, so the same parameter order must be used every step.
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(std::span<Eigen::MatrixXd* const> params, std::span<const Eigen::MatrixXd> grads) = 0;
  virtual double learning_rate() const = 0;
};

class Sgd final : public Optimizer {
 public:
  explicit Sgd(double lr) : lr_(lr) {}
  void step(std::span<Eigen::MatrixXd* const> params, std::span<const Eigen::MatrixXd> grads) override;
  double learning_rate() const override { return lr_; }

 private:
  double lr_;
};

class Adam final : public Optimizer {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(std::span<Eigen::MatrixXd* const> params, std::span<const Eigen::MatrixXd> grads) override;
  double learning_rate() const override { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Eigen::MatrixXd> m_, v_;
};

class RmsProp final : public Optimizer {
 public:
  explicit RmsProp(double lr, double alpha = 0.99, double eps = 1e-8) : lr_(lr), alpha_(alpha), eps_(eps) {}
  void step(std::span<Eigen::MatrixXd* const> params, std::span<const Eigen::MatrixXd> grads) override;
  double learning_rate() const override { return lr_; }

 private:
  double lr_, alpha_, eps_;
  std::vector<Eigen::MatrixXd> sq_;
};

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, double lr);

}  // namespace dtgba
