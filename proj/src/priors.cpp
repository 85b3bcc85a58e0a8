#include "drp/priors.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

namespace drp {
namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

const DenseMatrix* dense_cov(const CovarianceSpec& cov) {
  return std::get_if<DenseMatrix>(&cov);
}

}  // namespace

GaussianPriorModel::GaussianPriorModel(Image mean, CovarianceSpec covariance,
                                       LinearOperator degradation, double noise_std,
                                       long cap)
    : mean_(std::move(mean)),
      cov_(std::move(covariance)),
      degradation_(std::move(degradation)),
      sigma_(noise_std),
      cap_(cap) {
  if (!(sigma_ > 0.0)) throw std::invalid_argument("prior model: noise_std must be > 0");
  if (!(mean_.shape() == degradation_.domain_shape()))
    throw std::invalid_argument("prior model: mean shape " + mean_.shape().str() +
                                " != degradation domain " + degradation_.domain_shape().str());

  const long n = degradation_.domain_shape().size();
  const long p = degradation_.range_shape().size();
  if (p > cap_)
    throw std::invalid_argument("prior model: observation dim " + std::to_string(p) +
                                " exceeds dense cap " + std::to_string(cap_));

  DenseMatrix cs;
  if (const DenseMatrix* sigma_x = dense_cov(cov_)) {
    if (sigma_x->rows() != n || sigma_x->cols() != n)
      throw std::invalid_argument("prior model: covariance must be n x n");
    if (n > cap_)
      throw std::invalid_argument("prior model: dense covariance dim " + std::to_string(n) +
                                  " exceeds cap " + std::to_string(cap_));
    const double asym = (*sigma_x - sigma_x->transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-12 * (1.0 + sigma_x->cwiseAbs().maxCoeff()))
      throw std::invalid_argument("prior model: covariance not symmetric");
    Eigen::LLT<DenseMatrix> chol(*sigma_x);
    if (chol.info() != Eigen::Success)
      throw std::invalid_argument("prior model: covariance not positive definite");
    const DenseMatrix& h = dense_degradation();
    cs = h * (*sigma_x) * h.transpose();
  } else {
    const double v = std::get<IsotropicCovariance>(cov_).variance;
    if (!(v > 0.0))
      throw std::invalid_argument("prior model: isotropic variance must be > 0");
    // v * H H^T without forming dense H: one basis sweep of H after H^T.
    cs = v * materialize(compose(degradation_, transpose_operator(degradation_)), cap_);
  }
  cs.diagonal().array() += sigma_ * sigma_;
  cs = 0.5 * (cs + cs.transpose().eval());

  llt_cs_.compute(cs);
  if (llt_cs_.info() != Eigen::Success)
    throw std::invalid_argument("prior model: observation covariance not positive definite");
  logdet_cs_ = 2.0 * llt_cs_.matrixLLT().diagonal().array().log().sum();
}

const DenseMatrix& GaussianPriorModel::dense_degradation() const {
  std::call_once(dense_h_once_, [this] { dense_h_ = materialize(degradation_, cap_); });
  return *dense_h_;
}

Image GaussianPriorModel::restore(const Image& s) const {
  if (!(s.shape() == observation_shape()))
    throw std::invalid_argument("restore: expected shape " + observation_shape().str() +
                                ", got " + s.shape().str());
  Image innovation = s - degradation_.forward(mean_);
  Image weighted(s.shape());
  weighted.as_vector() = llt_cs_.solve(innovation.to_vector());
  Image back = degradation_.adjoint(weighted);
  Image out = mean_;
  if (const DenseMatrix* sigma_x = dense_cov(cov_)) {
    out.as_vector() += (*sigma_x) * back.as_vector();
  } else {
    out.as_vector() += std::get<IsotropicCovariance>(cov_).variance * back.as_vector();
  }
  return out;
}

double GaussianPriorModel::log_density(const Image& s) const {
  if (!(s.shape() == observation_shape()))
    throw std::invalid_argument("log_density: expected shape " + observation_shape().str());
  const Eigen::VectorXd d = s.to_vector() - degradation_.forward(mean_).to_vector();
  const Eigen::VectorXd w = llt_cs_.solve(d);
  const double p = static_cast<double>(observation_shape().size());
  return -0.5 * (d.dot(w) + logdet_cs_ + p * std::log(kTwoPi));
}

double GaussianPriorModel::regularizer(double tau, const Image& x) const {
  return -tau * sigma_ * sigma_ * log_density(degradation_.forward(x));
}

Image GaussianPriorModel::regularizer_grad(double tau, const Image& x) const {
  Image centered = x - mean_;
  Image u = degradation_.forward(centered);
  Image w(u.shape());
  w.as_vector() = llt_cs_.solve(u.to_vector());
  Image g = degradation_.adjoint(w);
  g *= tau * sigma_ * sigma_;
  return g;
}

double GaussianPriorModel::grad_lipschitz(double tau) const {
  std::call_once(eig_once_, [this] {
    const DenseMatrix& h = dense_degradation();
    // lambda_max(H^T C_s^{-1} H) via W = L^{-1} H, then W^T W.
    DenseMatrix w = llt_cs_.matrixL().solve(h);
    DenseMatrix b = w.transpose() * w;
    b = 0.5 * (b + b.transpose().eval());
    Eigen::SelfAdjointEigenSolver<DenseMatrix> es(b, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success)
      throw std::runtime_error("grad_lipschitz: eigensolver failed");
    top_eig_ = es.eigenvalues().maxCoeff();
  });
  return tau * sigma_ * sigma_ * top_eig_;
}

Eigen::VectorXd GaussianPriorModel::cov_apply(const Eigen::VectorXd& v) const {
  if (const DenseMatrix* sigma_x = dense_cov(cov_)) return (*sigma_x) * v;
  return std::get<IsotropicCovariance>(cov_).variance * v;
}

Eigen::MatrixXd GaussianPriorModel::observation_cov_solve(const Eigen::MatrixXd& rhs) const {
  return llt_cs_.solve(rhs);
}

Image gaussian_mmse_restore(const GaussianPriorModel& model, const Image& s) {
  return model.restore(s);
}

double log_observation_density(const GaussianPriorModel& model, const Image& s) {
  return model.log_density(s);
}

double implicit_regularizer_h(const GaussianPriorModel& model, double tau, const Image& x) {
  return model.regularizer(tau, x);
}

Image grad_implicit_regularizer(const GaussianPriorModel& model, double tau, const Image& x) {
  return model.regularizer_grad(tau, x);
}

double lipschitz_constant_of_grad_h(const GaussianPriorModel& model, double tau) {
  return model.grad_lipschitz(tau);
}

RestorationTask::RestorationTask(LinearOperator h, double s) : H(std::move(h)), sigma(s) {
  if (!(sigma > 0.0)) throw std::invalid_argument("restoration task: sigma must be > 0");
}

}  // namespace drp
