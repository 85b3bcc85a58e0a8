#include "drp/sprox.hpp"

#include <cmath>

namespace drp {

ScaledProxProblem::ScaledProxProblem(LinearOperator a, LinearOperator h, Image obs, double g)
    : A(std::move(a)), H(std::move(h)), y(std::move(obs)), gamma(g) {
  if (!(gamma > 0.0)) throw std::invalid_argument("sprox: gamma must be > 0");
  if (!(A.domain_shape() == H.domain_shape()))
    throw std::invalid_argument("sprox: A and H disagree on the domain: " +
                                A.domain_shape().str() + " vs " + H.domain_shape().str());
  if (!(y.shape() == A.range_shape()))
    throw std::invalid_argument("sprox: y shape " + y.shape().str() +
                                " != A range " + A.range_shape().str());
}

NormalEquations sprox_normal_equations(const ScaledProxProblem& problem, const Image& z) {
  if (!(z.shape() == problem.H.domain_shape()))
    throw std::invalid_argument("sprox: z shape " + z.shape().str() +
                                " != domain " + problem.H.domain_shape().str());
  const LinearOperator& A = problem.A;
  const LinearOperator& H = problem.H;
  const double gamma = problem.gamma;

  NormalEquations ne{
      [A, H, gamma](const Image& v) {
        Image out = A.adjoint(A.forward(v));
        Image hv = H.adjoint(H.forward(v));
        hv *= gamma;
        out += hv;
        return out;
      },
      A.adjoint(problem.y)};
  Image hz = H.adjoint(H.forward(z));
  hz *= gamma;
  ne.rhs += hz;
  return ne;
}

Image conjugate_gradient(const std::function<Image(const Image&)>& apply,
                         const Image& rhs, const Image& x0, const CgConfig& cfg) {
  if (cfg.max_iters < 1) throw std::invalid_argument("cg: max_iters must be >= 1");
  if (!(x0.shape() == rhs.shape()))
    throw std::invalid_argument("cg: x0 shape " + x0.shape().str() +
                                " != rhs shape " + rhs.shape().str());

  const double rhs_norm = norm(rhs);
  // Below this the residual is numerical noise; iterating further would
  // divide by ~0 curvature and spuriously report indefiniteness.
  const double floor = 1e-15 * (1.0 + rhs_norm);

  Image x = x0;
  Image r = rhs - apply(x);
  double rs = squared_norm(r);
  if (!std::isfinite(rs)) throw DivergenceError("cg: non-finite initial residual");
  if (std::sqrt(rs) <= std::max(cfg.residual_tol * rhs_norm, floor)) return x;

  Image p = r;
  for (int k = 0; k < cfg.max_iters; ++k) {
    Image ap = apply(p);
    const double p_ap = dot(p, ap);
    if (!std::isfinite(p_ap)) throw DivergenceError("cg: non-finite curvature");
    if (p_ap <= 0.0)
      throw DivergenceError("cg: non-positive curvature, operator is not SPD");
    const double alpha = rs / p_ap;

    ap *= alpha;
    r -= ap;
    Image step = p;
    step *= alpha;
    x += step;

    const double rs_next = squared_norm(r);
    if (!std::isfinite(rs_next)) throw DivergenceError("cg: non-finite residual");
    if (std::sqrt(rs_next) <= std::max(cfg.residual_tol * rhs_norm, floor)) break;

    p *= rs_next / rs;
    p += r;
    rs = rs_next;
  }
  return x;
}

Image sprox(const ScaledProxProblem& problem, const Image& z, const Image& x_warm,
            const CgConfig& cfg) {
  NormalEquations ne = sprox_normal_equations(problem, z);
  const Image x0 = cfg.warm_start ? x_warm : Image(z.shape());
  return conjugate_gradient(ne.apply, ne.rhs, x0, cfg);
}

}  // namespace drp
