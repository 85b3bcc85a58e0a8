#include "drp/linops.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace drp {
namespace {

// Euclidean remainder, valid for negative a as long as m > 0.
inline int wrap(int a, int m) {
  int r = a % m;
  return r < 0 ? r + m : r;
}

// Keys cubic interpolation kernel with a = -0.5. Support is |t| < 2.
double keys_cubic(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return (((t - 5.0) * t + 8.0) * t - 4.0) * a;
  return 0.0;
}

// 1-D downscale-by-q weight matrix, m x n with m = n / q. Sample centers
// sit at (i + 0.5) * q - 0.5 on the source grid, the kernel is stretched
// by q for antialiasing, source indices clamp at the borders, and each
// row is renormalized to sum exactly 1.
DenseMatrix bicubic_matrix(int n, int q) {
  const int m = n / q;
  DenseMatrix w = DenseMatrix::Zero(m, n);
  const int support = 2 * q;
  for (int i = 0; i < m; ++i) {
    const double x = (i + 0.5) * q - 0.5;
    const int lo = static_cast<int>(std::ceil(x - support));
    const int hi = static_cast<int>(std::floor(x + support));
    double row_sum = 0.0;
    for (int j = lo; j <= hi; ++j) {
      const double wj = keys_cubic((x - j) / q);
      if (wj == 0.0) continue;
      const int jc = std::min(std::max(j, 0), n - 1);
      w(i, jc) += wj;
      row_sum += wj;
    }
    w.row(i) /= row_sum;
  }
  return w;
}

}  // namespace

Image LinearOperator::forward(const Image& x) const {
  if (!(x.shape() == domain_))
    throw std::invalid_argument("operator forward: expected shape " + domain_.str() +
                                ", got " + x.shape().str());
  Image y = forward_(x);
  if (!(y.shape() == range_))
    throw std::logic_error("operator forward produced shape " + y.shape().str() +
                           ", expected " + range_.str());
  return y;
}

Image LinearOperator::adjoint(const Image& y) const {
  if (!(y.shape() == range_))
    throw std::invalid_argument("operator adjoint: expected shape " + range_.str() +
                                ", got " + y.shape().str());
  Image x = adjoint_(y);
  if (!(x.shape() == domain_))
    throw std::logic_error("operator adjoint produced shape " + x.shape().str() +
                           ", expected " + domain_.str());
  return x;
}

LinearOperator identity_operator(Shape shape) {
  auto id = [](const Image& x) { return x; };
  return LinearOperator(shape, shape, id, id);
}

LinearOperator blur_operator(const Kernel2D& kernel, Shape shape) {
  if (kernel.size() > shape.height || kernel.size() > shape.width)
    throw std::invalid_argument("blur: kernel size " + std::to_string(kernel.size()) +
                                " exceeds image dims " + shape.str());
  const int r = kernel.radius();
  auto conv = [kernel, r, shape](const Image& x, bool adjoint) {
    Image out(shape);
    const int h = shape.height, w = shape.width;
    for (int c = 0; c < shape.channels; ++c) {
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
          double acc = 0.0;
          for (int a = -r; a <= r; ++a) {
            // Convolution reads x(i-a, j-b); the adjoint flips the kernel,
            // which for these indices means reading x(i+a, j+b).
            const int yi = wrap(adjoint ? i + a : i - a, h);
            for (int b = -r; b <= r; ++b) {
              const int xj = wrap(adjoint ? j + b : j - b, w);
              acc += kernel.at(a + r, b + r) * x.at(c, yi, xj);
            }
          }
          out.at(c, i, j) = acc;
        }
      }
    }
    return out;
  };
  return LinearOperator(
      shape, shape,
      [conv](const Image& x) { return conv(x, false); },
      [conv](const Image& x) { return conv(x, true); });
}

LinearOperator decimation_operator(int d, Shape shape) {
  if (d < 1) throw std::invalid_argument("decimation factor must be >= 1");
  if (shape.height % d != 0 || shape.width % d != 0)
    throw std::invalid_argument("decimation: dims of " + shape.str() +
                                " not divisible by " + std::to_string(d));
  const Shape out_shape{shape.channels, shape.height / d, shape.width / d};
  auto fwd = [d, shape, out_shape](const Image& x) {
    Image y(out_shape);
    for (int c = 0; c < out_shape.channels; ++c)
      for (int i = 0; i < out_shape.height; ++i)
        for (int j = 0; j < out_shape.width; ++j)
          y.at(c, i, j) = x.at(c, d * i, d * j);
    return y;
  };
  auto adj = [d, shape, out_shape](const Image& y) {
    Image x(shape);  // zero-initialized
    for (int c = 0; c < out_shape.channels; ++c)
      for (int i = 0; i < out_shape.height; ++i)
        for (int j = 0; j < out_shape.width; ++j)
          x.at(c, d * i, d * j) = y.at(c, i, j);
    return x;
  };
  return LinearOperator(shape, out_shape, fwd, adj);
}

LinearOperator bicubic_downsample_operator(int q, Shape shape) {
  if (q < 2) throw std::invalid_argument("bicubic downscale factor must be >= 2");
  if (shape.height % q != 0 || shape.width % q != 0)
    throw std::invalid_argument("bicubic: dims of " + shape.str() +
                                " not divisible by " + std::to_string(q));
  const Shape out_shape{shape.channels, shape.height / q, shape.width / q};
  // Shared separable weights; forward is Wh * X * Ww^T per channel.
  auto wh = std::make_shared<DenseMatrix>(bicubic_matrix(shape.height, q));
  auto ww = std::make_shared<DenseMatrix>(bicubic_matrix(shape.width, q));
  auto fwd = [wh, ww, shape, out_shape](const Image& x) {
    Image y(out_shape);
    for (int c = 0; c < shape.channels; ++c) {
      Eigen::Map<const DenseMatrix> xc(
          x.data().data() + static_cast<size_t>(c) * shape.height * shape.width,
          shape.width, shape.height);
      // Column-major map of a row-major image is the transposed plane, so
      // the separable product runs as Ww * X^T * Wh^T.
      DenseMatrix yc = (*ww) * xc * wh->transpose();
      Eigen::Map<DenseMatrix>(
          y.data().data() + static_cast<size_t>(c) * out_shape.height * out_shape.width,
          out_shape.width, out_shape.height) = yc;
    }
    return y;
  };
  auto adj = [wh, ww, shape, out_shape](const Image& y) {
    Image x(shape);
    for (int c = 0; c < shape.channels; ++c) {
      Eigen::Map<const DenseMatrix> yc(
          y.data().data() + static_cast<size_t>(c) * out_shape.height * out_shape.width,
          out_shape.width, out_shape.height);
      DenseMatrix xc = ww->transpose() * yc * (*wh);
      Eigen::Map<DenseMatrix>(
          x.data().data() + static_cast<size_t>(c) * shape.height * shape.width,
          shape.width, shape.height) = xc;
    }
    return x;
  };
  return LinearOperator(shape, out_shape, fwd, adj);
}

LinearOperator compose(const LinearOperator& outer, const LinearOperator& inner) {
  if (!(inner.range_shape() == outer.domain_shape()))
    throw std::invalid_argument("compose: inner range " + inner.range_shape().str() +
                                " != outer domain " + outer.domain_shape().str());
  return LinearOperator(
      inner.domain_shape(), outer.range_shape(),
      [outer, inner](const Image& x) { return outer.forward(inner.forward(x)); },
      [outer, inner](const Image& y) { return inner.adjoint(outer.adjoint(y)); });
}

LinearOperator transpose_operator(const LinearOperator& op) {
  return LinearOperator(
      op.range_shape(), op.domain_shape(),
      [op](const Image& y) { return op.adjoint(y); },
      [op](const Image& x) { return op.forward(x); });
}

LinearOperator scale_operator(double s, const LinearOperator& op) {
  return LinearOperator(
      op.domain_shape(), op.range_shape(),
      [s, op](const Image& x) { Image y = op.forward(x); y *= s; return y; },
      [s, op](const Image& y) { Image x = op.adjoint(y); x *= s; return x; });
}

LinearOperator dense_operator(const DenseMatrix& m) {
  const Shape dom{1, 1, static_cast<int>(m.cols())};
  const Shape rng{1, 1, static_cast<int>(m.rows())};
  auto mat = std::make_shared<DenseMatrix>(m);
  return LinearOperator(
      dom, rng,
      [mat, rng](const Image& x) {
        Image y(rng);
        y.as_vector() = (*mat) * x.as_vector();
        return y;
      },
      [mat, dom](const Image& y) {
        Image x(dom);
        x.as_vector() = mat->transpose() * y.as_vector();
        return x;
      });
}

DenseMatrix materialize(const LinearOperator& op, long cap) {
  const long n = static_cast<long>(op.domain_shape().size());
  const long p = static_cast<long>(op.range_shape().size());
  if (n > cap)
    throw std::invalid_argument("materialize: domain dimension " + std::to_string(n) +
                                " exceeds cap " + std::to_string(cap));
  DenseMatrix m(p, n);
  Image e(op.domain_shape());
  for (long j = 0; j < n; ++j) {
    e.data()[j] = 1.0;
    m.col(j) = op.forward(e).as_vector();
    e.data()[j] = 0.0;
  }
  return m;
}

std::pair<double, double> spectrum_bounds(const LinearOperator& op, long cap) {
  const DenseMatrix m = materialize(op, cap);
  DenseMatrix g = m.transpose() * m;
  g = 0.5 * (g + g.transpose().eval());
  Eigen::SelfAdjointEigenSolver<DenseMatrix> es(g, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("spectrum_bounds: eigensolver failed");
  const auto& ev = es.eigenvalues();
  return {ev(0), ev(ev.size() - 1)};
}

}  // namespace drp
