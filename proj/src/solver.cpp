#include "drp/solver.hpp"

#include <cmath>

#include "drp/log.hpp"
#include "drp/protocol.hpp"

namespace drp {
namespace {

void validate(const Image& x0, const Image& y, const LinearOperator& A,
              const SolverConfig& config) {
  if (!(config.gamma > 0.0)) throw std::invalid_argument("solver: gamma must be > 0");
  if (!(config.tau > 0.0)) throw std::invalid_argument("solver: tau must be > 0");
  if (config.alpha && !(*config.alpha > 1.0))
    throw std::invalid_argument("solver: alpha must be > 1");
  if (config.max_iters < 0) throw std::invalid_argument("solver: max_iters must be >= 0");
  if (config.stop_tol < 0.0) throw std::invalid_argument("solver: stop_tol must be >= 0");
  if (!(x0.shape() == A.domain_shape()))
    throw std::invalid_argument("solver: x0 shape " + x0.shape().str() +
                                " != A domain " + A.domain_shape().str());
  if (!(y.shape() == A.range_shape()))
    throw std::invalid_argument("solver: y shape " + y.shape().str() +
                                " != A range " + A.range_shape().str());

  long span_total = 0;
  for (const auto& stage : config.schedule.stages) {
    if (!stage.restorer) throw std::invalid_argument("solver: stage without restorer");
    if (stage.iters < 1) throw std::invalid_argument("solver: stage span must be >= 1");
    if (!(stage.H.domain_shape() == A.domain_shape()))
      throw std::invalid_argument("solver: stage H domain " + stage.H.domain_shape().str() +
                                  " != problem domain " + A.domain_shape().str());
    if (!(stage.restorer->input_shape() == stage.H.range_shape()))
      throw std::invalid_argument("solver: restorer input " +
                                  stage.restorer->input_shape().str() +
                                  " != stage H range " + stage.H.range_shape().str());
    if (!(stage.restorer->output_shape() == A.domain_shape()))
      throw std::invalid_argument("solver: restorer output " +
                                  stage.restorer->output_shape().str() +
                                  " != problem domain " + A.domain_shape().str());
    span_total += stage.iters;
  }
  if (span_total != config.max_iters)
    throw std::invalid_argument("solver: schedule spans cover " + std::to_string(span_total) +
                                " iterations, config says " + std::to_string(config.max_iters));
}

const GaussianPriorModel* analytic_model(const PriorStage& stage) {
  const auto* mmse = dynamic_cast<const GaussianMmseRestorer*>(stage.restorer.get());
  return mmse != nullptr ? &mmse->model() : nullptr;
}

// gamma = mu / (alpha L) when the stage has the constants; otherwise the
// configured value, with a warning since the descent guarantee is then
// unverifiable.
double stage_gamma(const SolverConfig& config, const PriorStage& stage) {
  if (!config.alpha) return config.gamma;
  const GaussianPriorModel* model = analytic_model(stage);
  if (model == nullptr) {
    log_warn("alpha set but the stage prior is not analytic; using configured gamma, "
             "no descent guarantee applies");
    return config.gamma;
  }
  const auto [mu, lambda] = spectrum_bounds(stage.H);
  const double big_l = model->grad_lipschitz(config.tau);
  if (!(mu > 0.0) || !(big_l > 0.0)) {
    log_warn("alpha set but mu or L is not positive (mu=" + std::to_string(mu) +
             ", L=" + std::to_string(big_l) + "); using configured gamma");
    return config.gamma;
  }
  (void)lambda;
  return mu / (*config.alpha * big_l);
}

}  // namespace

Image drp_step(const Image& x_prev, RestorationOperator& restorer,
               const LinearOperator& H, const ScaledProxProblem& problem,
               double gamma, double tau, const CgConfig& cg) {
  Image restored = restorer.restore(H.forward(x_prev));
  Image g = x_prev - restored;
  g *= gamma * tau;
  Image z = x_prev - g;
  return sprox(problem, z, x_prev, cg);
}

SolveResult drp_solve(const Image& x0, const Image& y, const LinearOperator& A,
                      const SolverConfig& config, const Image* ground_truth) {
  validate(x0, y, A, config);

  bool analytic = !config.schedule.stages.empty();
  for (const auto& stage : config.schedule.stages)
    if (analytic_model(stage) == nullptr) analytic = false;

  SolveResult result{x0, {}, SolveStatus::ok, {}};
  ConvergenceTrace& trace = result.trace;

  if (analytic) {
    const auto& first = config.schedule.stages.front();
    trace.initial_objective =
        0.5 * squared_norm(A.forward(x0) - y) +
        analytic_model(first)->regularizer(config.tau, x0);
  }

  Image x = x0;
  // Gradient of the current stage's h at x, valid while stage_model points
  // at the model that produced it.
  Image cached_grad;
  const GaussianPriorModel* cached_for = nullptr;

  try {
    for (const auto& stage : config.schedule.stages) {
      const double gamma = stage_gamma(config, stage);
      const ScaledProxProblem problem(A, stage.H, y, 1.0 / gamma);
      const GaussianPriorModel* model = analytic ? analytic_model(stage) : nullptr;

      for (int i = 0; i < stage.iters; ++i) {
        Image x_next = drp_step(x, *stage.restorer, stage.H, problem,
                                gamma, config.tau, config.cg);
        Image delta = x_next - x;
        const double change_sq = squared_norm(delta);
        trace.iterate_change_sq.push_back(change_sq);

        if (model != nullptr) {
          trace.objective.push_back(0.5 * squared_norm(A.forward(x_next) - y) +
                                    model->regularizer(config.tau, x_next));
          if (cached_for != model) {
            cached_grad = model->regularizer_grad(config.tau, x);
            cached_for = model;
          }
          Image w = stage.H.adjoint(stage.H.forward(delta));
          w *= 1.0 / gamma;
          Image grad_next = model->regularizer_grad(config.tau, x_next);
          w += grad_next;
          w -= cached_grad;
          trace.subgrad_norm.push_back(norm(w));
          cached_grad = std::move(grad_next);
        }
        if (ground_truth != nullptr)
          trace.psnr_db.push_back(psnr(x_next, *ground_truth));

        const double rel =
            std::sqrt(change_sq) / std::max(norm(x_next), 1e-12);
        x = std::move(x_next);
        if (config.stop_tol > 0.0 && rel < config.stop_tol) {
          result.x = x;
          return result;
        }
      }
    }
  } catch (const DivergenceError& e) {
    result.x = x;
    result.status = SolveStatus::diverged;
    result.message = e.what();
    return result;
  } catch (const PeerError& e) {
    result.x = x;
    result.status = SolveStatus::peer_failed;
    result.message = std::string(peer_error_kind_name(e.kind())) + ": " + e.what();
    return result;
  }

  result.x = x;
  return result;
}

Image pnp_pgm_step(const Image& x_prev, RestorationOperator& denoiser,
                   const LinearOperator& A, const Image& y, double gamma,
                   double tau, const CgConfig& cg) {
  const LinearOperator ident = identity_operator(A.domain_shape());
  const ScaledProxProblem problem(A, ident, y, 1.0 / gamma);
  return drp_step(x_prev, denoiser, ident, problem, gamma, tau, cg);
}

SolveResult pnp_pgm_solve(const Image& x0, const Image& y, const LinearOperator& A,
                          const SolverConfig& config, const Image* ground_truth) {
  SolverConfig pnp = config;
  for (auto& stage : pnp.schedule.stages)
    stage.H = identity_operator(A.domain_shape());
  return drp_solve(x0, y, A, pnp, ground_truth);
}

double fixed_point_residual(const Image& x, const GaussianPriorModel& model,
                            double tau,
                            const std::function<Image(const Image&)>& data_grad) {
  return norm(data_grad(x) + model.regularizer_grad(tau, x));
}

std::function<Image(const Image&)> least_squares_gradient(const LinearOperator& A,
                                                          const Image& y) {
  return [A, y](const Image& x) { return A.adjoint(A.forward(x) - y); };
}

}  // namespace drp
