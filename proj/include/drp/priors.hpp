#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <variant>

#include <Eigen/Cholesky>

#include "drp/linops.hpp"
#include "drp/tensor.hpp"

namespace drp {

/// Restoration map R: R^p -> R^n. The output shape is fixed by the
/// instance regardless of input values. restore() is non-const because
/// some implementations hold a stateful connection.
class RestorationOperator {
 public:
  virtual ~RestorationOperator() = default;
  virtual Shape input_shape() const = 0;
  virtual Shape output_shape() const = 0;
  virtual Image restore(const Image& s) = 0;
};

/// Prior covariance: either variance * identity or an explicit SPD matrix.
struct IsotropicCovariance {
  double variance = 1.0;
};
using CovarianceSpec = std::variant<IsotropicCovariance, DenseMatrix>;

/// Gaussian prior x ~ N(mean, cov) observed through s = Hx + N(0, sigma^2 I).
/// Everything downstream (posterior mean, observation density, the induced
/// regularizer and its gradient) is closed-form, which is what makes the
/// convergence theory machine-checkable.
///
/// The observation covariance C_s = H cov H^T + sigma^2 I is factored once
/// at construction (Cholesky). Non-SPD inputs are construction-time errors.
/// Instances are immutable and safe to share across threads.
class GaussianPriorModel {
 public:
  GaussianPriorModel(Image mean, CovarianceSpec covariance,
                     LinearOperator degradation, double noise_std,
                     long cap = kDefaultMaterializeCap);

  const Shape& domain_shape() const { return degradation_.domain_shape(); }
  const Shape& observation_shape() const { return degradation_.range_shape(); }
  const Image& mean() const { return mean_; }
  const LinearOperator& degradation() const { return degradation_; }
  double noise_std() const { return sigma_; }

  /// Posterior mean E[x | s] = mean + cov H^T C_s^{-1} (s - H mean).
  Image restore(const Image& s) const;

  /// log N(s; H mean, C_s).
  double log_density(const Image& s) const;

  /// h(x) = -tau sigma^2 log p_s(Hx).
  double regularizer(double tau, const Image& x) const;

  /// grad h(x) = tau sigma^2 H^T C_s^{-1} H (x - mean).
  Image regularizer_grad(double tau, const Image& x) const;

  /// Exact Lipschitz constant of grad h: tau sigma^2 lambda_max(H^T C_s^{-1} H).
  /// Requires materializing H; computed once on first use.
  double grad_lipschitz(double tau) const;

  /// cov * v (used by tests that need the prior covariance directly).
  Eigen::VectorXd cov_apply(const Eigen::VectorXd& v) const;

  /// Dense H, materialized lazily under the same cap as construction.
  const DenseMatrix& dense_degradation() const;

  /// C_s^{-1} * rhs via the stored factorization.
  Eigen::MatrixXd observation_cov_solve(const Eigen::MatrixXd& rhs) const;

  double observation_logdet() const { return logdet_cs_; }

 private:
  Image mean_;
  CovarianceSpec cov_;
  LinearOperator degradation_;
  double sigma_;
  long cap_;
  Eigen::LLT<DenseMatrix> llt_cs_;
  double logdet_cs_ = 0.0;

  mutable std::once_flag dense_h_once_;
  mutable std::optional<DenseMatrix> dense_h_;
  mutable std::once_flag eig_once_;
  mutable double top_eig_ = 0.0;  // lambda_max(H^T C_s^{-1} H), tau-free part
};

Image gaussian_mmse_restore(const GaussianPriorModel& model, const Image& s);
double log_observation_density(const GaussianPriorModel& model, const Image& s);
double implicit_regularizer_h(const GaussianPriorModel& model, double tau, const Image& x);
Image grad_implicit_regularizer(const GaussianPriorModel& model, double tau, const Image& x);
double lipschitz_constant_of_grad_h(const GaussianPriorModel& model, double tau);

/// Adapts a Gaussian model to the RestorationOperator interface.
class GaussianMmseRestorer : public RestorationOperator {
 public:
  explicit GaussianMmseRestorer(std::shared_ptr<const GaussianPriorModel> model)
      : model_(std::move(model)) {}

  Shape input_shape() const override { return model_->observation_shape(); }
  Shape output_shape() const override { return model_->domain_shape(); }
  Image restore(const Image& s) override { return model_->restore(s); }

  const GaussianPriorModel& model() const { return *model_; }

 private:
  std::shared_ptr<const GaussianPriorModel> model_;
};

/// R(s) = s. Useful as a no-op prior and in protocol tests.
class IdentityRestorer : public RestorationOperator {
 public:
  explicit IdentityRestorer(Shape shape) : shape_(shape) {}
  Shape input_shape() const override { return shape_; }
  Shape output_shape() const override { return shape_; }
  Image restore(const Image& s) override { return s; }

 private:
  Shape shape_;
};

/// Degradation half of a restoration problem: the operator the prior was
/// built for plus its noise level.
struct RestorationTask {
  LinearOperator H;
  double sigma;

  RestorationTask(LinearOperator h, double s);
};

}  // namespace drp
