#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "retro/core.hpp"
#include "retro/encoder.hpp"

namespace retro {

// The prediction whose sensitivity is measured: P(y | x) of a training
// example (self-influence) or of an external probe.
struct InfluenceTarget {
  enum class Kind { Self, Probe };
  Kind kind = Kind::Self;
  std::size_t probe = 0;
};

// Twice-differentiable model with per-example losses, evaluated at its
// trained parameters.
class InfluenceModel {
 public:
  virtual ~InfluenceModel() = default;

  virtual std::size_t num_params() const = 0;
  virtual std::size_t num_examples() const = 0;
  virtual std::vector<double> loss_grad(std::size_t example) const = 0;
  // Default: central differences of loss_grad, symmetrized.
  virtual Eigen::MatrixXd loss_hessian(std::size_t example) const;
  // Gradient of P(y|x) for training example i (self) or probe j.
  virtual std::vector<double> prob_grad(InfluenceTarget::Kind kind, std::size_t index) const = 0;

 protected:
  // Hook used by the default Hessian: loss gradient at shifted parameters.
  virtual std::vector<double> loss_grad_at(std::size_t example, std::span<const double> params) const;
  virtual std::vector<double> current_params() const;
  double fd_step_ = 1e-5;
};

// L = 0.5 (theta - a_i)^2, P = theta.
class QuadraticModel final : public InfluenceModel {
 public:
  QuadraticModel(std::vector<double> anchors, double theta) : anchors_(std::move(anchors)), theta_(theta) {}
  // theta minimizing the mean loss.
  static QuadraticModel fit(std::vector<double> anchors);

  std::size_t num_params() const override { return 1; }
  std::size_t num_examples() const override { return anchors_.size(); }
  std::vector<double> loss_grad(std::size_t i) const override { return {theta_ - anchors_.at(i)}; }
  Eigen::MatrixXd loss_hessian(std::size_t) const override { return Eigen::MatrixXd::Ones(1, 1); }
  std::vector<double> prob_grad(InfluenceTarget::Kind, std::size_t) const override { return {1.0}; }
  double theta() const noexcept { return theta_; }

 private:
  std::vector<double> anchors_;
  double theta_;
};

// Binary logistic regression with per-example loss
// CE(sigmoid(<w, x_i>), y_i) + (l2 / 2) |w|^2 and analytic derivatives.
class LogisticRegressionModel final : public InfluenceModel {
 public:
  LogisticRegressionModel(Eigen::MatrixXd x, std::vector<int> y, double l2, Eigen::VectorXd w,
                          Eigen::MatrixXd probes = {}, std::vector<int> probe_labels = {});

  // Newton's method to gradient norm < tol.
  static Eigen::VectorXd fit(const Eigen::MatrixXd& x, const std::vector<int>& y, double l2, double tol = 1e-12);

  std::size_t num_params() const override { return static_cast<std::size_t>(w_.size()); }
  std::size_t num_examples() const override { return y_.size(); }
  std::vector<double> loss_grad(std::size_t i) const override;
  Eigen::MatrixXd loss_hessian(std::size_t i) const override;
  std::vector<double> prob_grad(InfluenceTarget::Kind kind, std::size_t index) const override;

  // P(y | x) for the labelled row under weights w.
  static double prob(const Eigen::VectorXd& w, const Eigen::VectorXd& x, int y);
  const Eigen::VectorXd& weights() const noexcept { return w_; }

 private:
  Eigen::MatrixXd x_;
  std::vector<int> y_;
  double l2_;
  Eigen::VectorXd w_;
  Eigen::MatrixXd probes_;
  std::vector<int> probe_labels_;
};

// Toy encoder with each example's loss weight and demonstrations frozen at
// the trained parameters. Each per-example loss carries the training L2 term
// (l2 / 2) |theta|^2. Hessians come from differencing the hand gradient.
class EncoderInfluenceModel final : public InfluenceModel {
 public:
  struct Item {
    TokenSeq templated;
    std::optional<FusedInput> fused;
    ClassId label = 0;
    double weight = 1.0;
  };

  EncoderInfluenceModel(ToyEncoder encoder, LabelSpace labels, std::vector<Item> train, std::vector<Item> probes = {},
                        double l2 = 0.0);

  std::size_t num_params() const override { return encoder_.num_params(); }
  std::size_t num_examples() const override { return train_.size(); }
  std::vector<double> loss_grad(std::size_t i) const override;
  std::vector<double> prob_grad(InfluenceTarget::Kind kind, std::size_t index) const override;

 protected:
  std::vector<double> loss_grad_at(std::size_t example, std::span<const double> params) const override;
  std::vector<double> current_params() const override;

 private:
  ToyEncoder encoder_;
  LabelSpace labels_;
  std::vector<Item> train_;
  std::vector<Item> probes_;
  double l2_;
};

struct InfluenceOptions {
  std::vector<double> damping_sweep{0.0, 1e-4, 1e-3, 1e-2};
  double max_condition = 1e8;
  InfluenceTarget target;
};

struct InfluenceResult {
  std::vector<double> scores;
  std::vector<double> grad_norms;
  double damping = 0.0;
  double condition = 0.0;
  double eigen_min = 0.0;
  double eigen_max = 0.0;
};

// S_delete(a) = -grad P(y|x)^T (H + delta I)^{-1} grad L(a), with H the mean
// per-example loss Hessian and delta the smallest sweep value giving a
// condition number below max_condition.
InfluenceResult memorization_scores(const InfluenceModel& model, const InfluenceOptions& options = {});

struct InfluenceReport {
  std::vector<ExampleId> ids;
  InfluenceResult result;
  std::vector<ExampleId> top_decile;
  std::vector<ExampleId> bottom_decile;
  double mean_score = 0.0;
  bool degenerate = false;

  nlohmann::json to_json() const;
};

// Sorts by score (descending, ties to the lower id) and takes the top and
// bottom tenth.
InfluenceReport decile_report(const InfluenceResult& result, std::span<const ExampleId> ids);

}  // namespace retro
