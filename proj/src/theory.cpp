#include "drp/theory.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Dense>

namespace drp {

double check_tweedie(const GaussianPriorModel& model, double tau, int trials,
                     RngSeed seed) {
  if (trials < 1) throw std::invalid_argument("check_tweedie: trials must be >= 1");
  SplitMix64 rng(seed.seed);
  const LinearOperator& H = model.degradation();
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    Image x(model.domain_shape());
    for (auto& v : x.data()) v = rng.next_gaussian();
    x += model.mean();

    // Left side goes through the restoration path, right side through the
    // density gradient; they share no intermediate results.
    Image residual = x - model.restore(H.forward(x));
    Image lhs = H.adjoint(H.forward(residual));
    lhs *= tau;
    const Image rhs = model.regularizer_grad(tau, x);

    const double rel = norm(lhs - rhs) / (norm(rhs) + 1e-12);
    worst = std::max(worst, rel);
  }
  return worst;
}

int check_descent(const ConvergenceTrace& trace, double big_l, double alpha) {
  if (trace.objective.size() != trace.iterations() || !trace.initial_objective)
    throw std::invalid_argument("check_descent: trace lacks objective values");
  int violations = 0;
  double f_prev = *trace.initial_objective;
  for (size_t k = 0; k < trace.iterations(); ++k) {
    const double required_drop = (alpha - 1.0) * 0.5 * big_l * trace.iterate_change_sq[k];
    const double slack = 1e-9 * (1.0 + std::abs(f_prev));
    if (trace.objective[k] > f_prev - required_drop + slack) ++violations;
    f_prev = trace.objective[k];
  }
  return violations;
}

RateCheck check_rate(const ConvergenceTrace& trace, double f_initial,
                     double f_star, double rate_c) {
  if (trace.subgrad_norm.size() != trace.iterations())
    throw std::invalid_argument("check_rate: trace lacks subgradient norms");
  RateCheck rc;
  double running_min = std::numeric_limits<double>::infinity();
  for (size_t t = 1; t <= trace.iterations(); ++t) {
    const double w = trace.subgrad_norm[t - 1];
    running_min = std::min(running_min, w * w);
    const double bound = rate_c * (f_initial - f_star) / static_cast<double>(t);
    rc.lhs.push_back(running_min);
    rc.bound.push_back(bound);
    if (running_min > bound * (1.0 + 1e-12) + 1e-15) ++rc.violations;
  }
  return rc;
}

AssumptionAudit audit_assumptions(const GaussianPriorModel& model,
                                  const LinearOperator& A, double tau) {
  AssumptionAudit audit;
  // Construction already proved Sigma_x and C_s positive definite.
  audit.prior_covariance_pd = true;
  // Least-squares g(x) = ½‖Ax − y‖² is convex for every A and bounded
  // below by 0; h is bounded below by the Gaussian max-density bound.
  audit.data_term_convex = true;
  audit.objective_bounded_below = true;
  (void)A;

  const auto [mu, lambda] = spectrum_bounds(model.degradation());
  audit.mu = mu;
  audit.lambda = lambda;
  audit.grad_lipschitz = model.grad_lipschitz(tau);
  audit.seminorm_bound_positive = mu > 1e-12 * std::max(1.0, lambda);
  return audit;
}

double rate_constant(double big_l, double alpha, double mu, double lambda) {
  if (!(alpha > 1.0)) throw std::invalid_argument("rate_constant: alpha must be > 1");
  if (!(mu > 0.0)) throw std::invalid_argument("rate_constant: mu must be > 0");
  const double factor = alpha * (lambda / mu) + 1.0;
  return 2.0 * big_l * factor * factor / (alpha - 1.0);
}

Image minimize_objective(const GaussianPriorModel& model, const LinearOperator& A,
                         const Image& y, double tau) {
  // grad f = A^T(Ax − y) + tau sigma² H^T C_s^{-1} H (x − mean) = 0 is one
  // dense SPD solve; no iteration involved.
  const DenseMatrix& hd = model.dense_degradation();
  const double s2 = tau * model.noise_std() * model.noise_std();
  DenseMatrix w = model.observation_cov_solve(hd);
  DenseMatrix prior_term = s2 * (hd.transpose() * w);

  const DenseMatrix ad = materialize(A);
  DenseMatrix system = ad.transpose() * ad + prior_term;
  system = 0.5 * (system + system.transpose().eval());

  Eigen::VectorXd rhs = ad.transpose() * y.to_vector() +
                        prior_term * model.mean().to_vector();
  Eigen::LLT<DenseMatrix> llt(system);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("minimize_objective: quadratic is not positive definite");
  return Image::from_vector(model.domain_shape(), llt.solve(rhs));
}

double objective_value(const GaussianPriorModel& model, const LinearOperator& A,
                       const Image& y, double tau, const Image& x) {
  return 0.5 * squared_norm(A.forward(x) - y) + model.regularizer(tau, x);
}

TheoryReport run_theory_suite(std::shared_ptr<const GaussianPriorModel> model,
                              const LinearOperator& A, const Image& y,
                              const Image& x0, double tau, double alpha,
                              int iterations, RngSeed seed) {
  TheoryReport report;
  report.audit = audit_assumptions(*model, A, tau);
  if (!report.audit.seminorm_bound_positive)
    throw std::invalid_argument("theory suite needs full-rank H (mu > 0)");

  const double big_l = report.audit.grad_lipschitz;
  const double gamma = report.audit.mu / (alpha * big_l);

  SolverConfig config;
  config.gamma = gamma;
  config.tau = tau;
  config.max_iters = iterations;
  config.stop_tol = 0.0;  // the rate check wants the full trajectory
  // Near-exact prox: CG run to numerical convergence, as the guarantees assume.
  config.cg.max_iters = static_cast<int>(model->domain_shape().size()) + 8;
  config.cg.residual_tol = 1e-14;
  config.cg.warm_start = true;
  config.schedule.stages.push_back(
      {std::make_shared<GaussianMmseRestorer>(model), model->degradation(), iterations});

  const SolveResult run = drp_solve(x0, y, A, config);
  if (run.status == SolveStatus::diverged)
    throw DivergenceError("theory suite: " + run.message);
  if (run.status != SolveStatus::ok)
    throw std::runtime_error("theory suite: solver failed: " + run.message);

  report.iterations = static_cast<int>(run.trace.iterations());
  report.f_initial = run.trace.initial_objective.value();
  report.f_star = objective_value(*model, A, y, tau, minimize_objective(*model, A, y, tau));
  report.rate_constant = rate_constant(big_l, alpha, report.audit.mu, report.audit.lambda);

  report.tweedie_max_rel_error = check_tweedie(*model, tau, 100, seed);
  report.descent_violations = check_descent(run.trace, big_l, alpha);
  report.rate = check_rate(run.trace, report.f_initial, report.f_star, report.rate_constant);
  report.fixed_point_residual =
      fixed_point_residual(run.x, *model, tau, least_squares_gradient(A, y));
  return report;
}

nlohmann::json theory_report_json(const TheoryReport& report) {
  nlohmann::json j;
  j["tweedie_max_rel_error"] = report.tweedie_max_rel_error;
  j["descent_violations"] = report.descent_violations;
  j["rate"] = {{"lhs", report.rate.lhs},
               {"bound", report.rate.bound},
               {"violations", report.rate.violations}};
  j["fixed_point_residual"] = report.fixed_point_residual;
  j["assumptions"] = {{"prior_covariance_pd", report.audit.prior_covariance_pd},
                      {"data_term_convex", report.audit.data_term_convex},
                      {"objective_bounded_below", report.audit.objective_bounded_below},
                      {"mu", report.audit.mu},
                      {"lambda", report.audit.lambda},
                      {"grad_lipschitz", report.audit.grad_lipschitz},
                      {"seminorm_bound_positive", report.audit.seminorm_bound_positive}};
  j["f_initial"] = report.f_initial;
  j["f_star"] = report.f_star;
  j["rate_constant"] = report.rate_constant;
  j["iterations"] = report.iterations;
  return j;
}

}  // namespace drp
