#pragma once

#include <functional>
#include <utility>

#include <Eigen/Core>

#include "drp/tensor.hpp"

namespace drp {

using DenseMatrix = Eigen::MatrixXd;

/// Immutable linear map between image shapes with an exact adjoint.
/// Invariant: <forward(u), v> == <u, adjoint(v)> for all u, v.
class LinearOperator {
 public:
  using Apply = std::function<Image(const Image&)>;

  LinearOperator(Shape domain, Shape range, Apply forward, Apply adjoint)
      : domain_(domain), range_(range),
        forward_(std::move(forward)), adjoint_(std::move(adjoint)) {}

  const Shape& domain_shape() const { return domain_; }
  const Shape& range_shape() const { return range_; }

  Image forward(const Image& x) const;
  Image adjoint(const Image& y) const;

 private:
  Shape domain_;
  Shape range_;
  Apply forward_;
  Apply adjoint_;
};

LinearOperator identity_operator(Shape shape);

/// Circular (periodic) 2-D convolution per channel; the adjoint is
/// correlation with the same kernel.
LinearOperator blur_operator(const Kernel2D& kernel, Shape shape);

/// d-fold decimation keeping pixels (d*i, d*j); the adjoint zero-fills.
/// Height and width must be divisible by d.
LinearOperator decimation_operator(int d, Shape shape);

/// Bicubic downscale by integer factor q >= 2 using the Keys cubic
/// (a = -0.5) stretched by q for antialiasing, separable, edge-clamped,
/// rows renormalized to sum 1. The adjoint is the exact transpose of the
/// same separable weights. Dims must be divisible by q.
LinearOperator bicubic_downsample_operator(int q, Shape shape);

/// outer after inner; adjoint composes in reverse.
LinearOperator compose(const LinearOperator& outer, const LinearOperator& inner);

/// Swaps forward and adjoint.
LinearOperator transpose_operator(const LinearOperator& op);

/// Multiplies the output of op by s (self-adjoint scaling).
LinearOperator scale_operator(double s, const LinearOperator& op);

/// Wraps a dense matrix as an operator between flat vector shapes.
LinearOperator dense_operator(const DenseMatrix& m);

inline constexpr long kDefaultMaterializeCap = 4096;

/// Column j = op(e_j). Throws when the domain dimension exceeds the cap.
DenseMatrix materialize(const LinearOperator& op, long cap = kDefaultMaterializeCap);

/// Smallest and largest eigenvalues of materialize(op)^T * materialize(op),
/// by dense symmetric eigensolve.
std::pair<double, double> spectrum_bounds(const LinearOperator& op,
                                          long cap = kDefaultMaterializeCap);

}  // namespace drp
