#pragma once

#include <functional>
#include <stdexcept>

#include "drp/linops.hpp"
#include "drp/tensor.hpp"

namespace drp {

/// CG met a non-positive curvature direction or non-finite values: the
/// normal-equations operator is not SPD on the reachable subspace.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Least-squares data term ½‖Ax − y‖² proximated in the ‖·‖_{H^T H}
/// seminorm. gamma weights the H^T H term in the normal equations
/// (A^T A + gamma H^T H); larger gamma keeps the output closer to z.
struct ScaledProxProblem {
  LinearOperator A;
  LinearOperator H;
  Image y;
  double gamma;

  ScaledProxProblem(LinearOperator a, LinearOperator h, Image obs, double g);
};

struct CgConfig {
  int max_iters = 3;
  double residual_tol = 0.0;  // 0 disables the relative stop; runs max_iters
  bool warm_start = true;
};

struct NormalEquations {
  std::function<Image(const Image&)> apply;  // v -> (A^T A + gamma H^T H) v
  Image rhs;                                 // A^T y + gamma H^T H z
};

NormalEquations sprox_normal_equations(const ScaledProxProblem& problem, const Image& z);

/// Plain CG on an SPD apply. Stops at max_iters, at residual_tol·‖rhs‖, or
/// at the floating-point floor (so a warm start at the solution is returned
/// unchanged). Throws DivergenceError on indefiniteness or non-finite math.
Image conjugate_gradient(const std::function<Image(const Image&)>& apply,
                         const Image& rhs, const Image& x0, const CgConfig& cfg);

/// Approximate argmin over x of ½‖x − z‖²_{H^T H} + data term, by CG on the
/// normal equations, warm-started at x_warm when cfg.warm_start is set.
Image sprox(const ScaledProxProblem& problem, const Image& z, const Image& x_warm,
            const CgConfig& cfg);

}  // namespace drp
