#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "drp/priors.hpp"
#include "drp/sprox.hpp"

namespace drp {

/// One schedule stage: restore through this prior for `iters` iterations.
/// H is the degradation the restorer expects on its input side.
struct PriorStage {
  std::shared_ptr<RestorationOperator> restorer;
  LinearOperator H;
  int iters;
};

/// Stages run in listed order; their iteration spans partition
/// [1, max_iters]. Coarse-to-fine refinement lists the coarser prior first.
struct PriorSchedule {
  std::vector<PriorStage> stages;
};

struct SolverConfig {
  double gamma = 0.0;  // step weight; must be > 0
  double tau = 0.0;    // prior strength; must be > 0
  std::optional<double> alpha;  // when set (> 1), gamma := mu / (alpha L) per stage
  int max_iters = 0;
  double stop_tol = 0.0;  // relative iterate change; 0 disables
  CgConfig cg;
  PriorSchedule schedule;
};

/// Per-iteration history. Optional columns are either empty or exactly
/// iteration-count long: objective and subgrad_norm exist only in the
/// analytic Gaussian setting, psnr_db only when ground truth is supplied.
struct ConvergenceTrace {
  std::vector<double> iterate_change_sq;  // ‖x^k − x^{k−1}‖²
  std::vector<double> objective;          // f(x^k)
  std::vector<double> psnr_db;
  std::vector<double> subgrad_norm;       // ‖w(x^k)‖
  std::optional<double> initial_objective;  // f(x^0)

  size_t iterations() const { return iterate_change_sq.size(); }
};

enum class SolveStatus { ok, diverged, peer_failed };

struct SolveResult {
  Image x;
  ConvergenceTrace trace;
  SolveStatus status = SolveStatus::ok;
  std::string message;  // populated when status != ok
};

/// One iteration: z = x − gamma·tau·(x − R(Hx)), then the scaled prox of
/// the data term at z, warm-started at x_prev. problem.gamma must equal
/// 1/gamma so the prox solves argmin ½‖x−z‖²_{H^T H} + gamma·g(x).
Image drp_step(const Image& x_prev, RestorationOperator& restorer,
               const LinearOperator& H, const ScaledProxProblem& problem,
               double gamma, double tau, const CgConfig& cg);

/// Runs the schedule from x0. Records the trace; stops early when the
/// relative iterate change drops below stop_tol. Divergence and peer
/// failures return a partial trace with the matching status instead of
/// throwing.
SolveResult drp_solve(const Image& x0, const Image& y, const LinearOperator& A,
                      const SolverConfig& config,
                      const Image* ground_truth = nullptr);

/// Proximal-gradient baseline: z = x − gamma·tau·(x − D(x)), then the
/// standard (unweighted) prox of gamma·g. Identical to drp_step with
/// H = identity, and shares its implementation so the two coincide
/// bit-for-bit in that case.
Image pnp_pgm_step(const Image& x_prev, RestorationOperator& denoiser,
                   const LinearOperator& A, const Image& y, double gamma,
                   double tau, const CgConfig& cg);

SolveResult pnp_pgm_solve(const Image& x0, const Image& y, const LinearOperator& A,
                          const SolverConfig& config,
                          const Image* ground_truth = nullptr);

/// ‖data_grad(x) + grad h(x)‖, zero exactly at stationary points of f.
double fixed_point_residual(const Image& x, const GaussianPriorModel& model,
                            double tau,
                            const std::function<Image(const Image&)>& data_grad);

/// x ↦ A^T(Ax − y), the gradient of the least-squares data term.
std::function<Image(const Image&)> least_squares_gradient(const LinearOperator& A,
                                                          const Image& y);

}  // namespace drp
