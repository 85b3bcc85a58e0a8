#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "drp/priors.hpp"
#include "drp/solver.hpp"

namespace drp {

/// Standing-assumption audit for the analytic Gaussian setting:
/// non-degenerate prior, well-posed prox, objective bounded below, and the
/// two-sided seminorm bound lambda >= H^T H >= mu > 0 plus the gradient
/// Lipschitz constant L.
struct AssumptionAudit {
  bool prior_covariance_pd = false;
  bool data_term_convex = false;
  bool objective_bounded_below = false;
  double mu = 0.0;
  double lambda = 0.0;
  double grad_lipschitz = 0.0;
  bool seminorm_bound_positive = false;  // mu > 0
};

/// Running-min of ‖w(x^k)‖² against the O(1/t) envelope C(f(x^0) − f*)/t.
struct RateCheck {
  std::vector<double> lhs;    // min_{k<=t} ‖w‖²
  std::vector<double> bound;  // C (f0 − f*) / t
  int violations = 0;
};

struct TheoryReport {
  double tweedie_max_rel_error = 0.0;
  int descent_violations = 0;
  RateCheck rate;
  double fixed_point_residual = 0.0;
  AssumptionAudit audit;
  double f_initial = 0.0;
  double f_star = 0.0;
  double rate_constant = 0.0;
  int iterations = 0;
};

/// Max over `trials` random x of
/// ‖tau H^T H (x − R(Hx)) − grad h(x)‖ / (‖grad h(x)‖ + 1e-12),
/// the two sides computed through independent code paths.
double check_tweedie(const GaussianPriorModel& model, double tau, int trials,
                     RngSeed seed);

/// Counts iterations violating
/// f(x^k) <= f(x^{k−1}) − (alpha−1)(L/2)‖x^k − x^{k−1}‖²
/// beyond a slack of 1e-9·(1+|f(x^{k−1})|). Requires the objective column
/// and trace.initial_objective.
int check_descent(const ConvergenceTrace& trace, double big_l, double alpha);

/// Evaluates the rate envelope for every t. Requires the subgrad column.
RateCheck check_rate(const ConvergenceTrace& trace, double f_initial,
                     double f_star, double rate_c);

AssumptionAudit audit_assumptions(const GaussianPriorModel& model,
                                  const LinearOperator& A, double tau);

/// C = 2 L (alpha (lambda/mu) + 1)² / (alpha − 1).
double rate_constant(double big_l, double alpha, double mu, double lambda);

/// Exact minimizer of f(x) = ½‖Ax−y‖² + h(x), found by solving the normal
/// equations of the quadratic directly. Independent of the iterative path.
Image minimize_objective(const GaussianPriorModel& model, const LinearOperator& A,
                         const Image& y, double tau);

double objective_value(const GaussianPriorModel& model, const LinearOperator& A,
                       const Image& y, double tau, const Image& x);

/// Full pipeline on one analytic instance: audits assumptions, runs the
/// solver with gamma = mu/(alpha L) and near-exact CG, then evaluates the
/// Tweedie, descent, rate, and fixed-point checks.
TheoryReport run_theory_suite(std::shared_ptr<const GaussianPriorModel> model,
                              const LinearOperator& A, const Image& y,
                              const Image& x0, double tau, double alpha,
                              int iterations, RngSeed seed);

nlohmann::json theory_report_json(const TheoryReport& report);

}  // namespace drp
