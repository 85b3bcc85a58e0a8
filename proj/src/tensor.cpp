#include "drp/tensor.hpp"

#include <cmath>

namespace drp {

std::string Shape::str() const {
  return std::to_string(channels) + "x" + std::to_string(height) + "x" +
         std::to_string(width);
}

size_t Image::check_size(const Shape& s) {
  if (s.channels < 1 || s.height < 1 || s.width < 1) {
    throw std::invalid_argument("image shape must be positive, got " + s.str());
  }
  return static_cast<size_t>(s.size());
}

Image::Image(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != check_size(shape)) {
    throw std::invalid_argument("image data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape.str());
  }
}

Image Image::from_vector(Shape shape, const Eigen::VectorXd& v) {
  Image out(shape);
  if (v.size() != out.size()) {
    throw std::invalid_argument("vector length " + std::to_string(v.size()) +
                                " does not match shape " + shape.str());
  }
  out.as_vector() = v;
  return out;
}

namespace {
void require_same_shape(const Image& a, const Image& b, const char* op) {
  if (!(a.shape() == b.shape())) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape().str() +
                                " vs " + b.shape().str());
  }
}
}  // namespace

Image& Image::operator+=(const Image& other) {
  require_same_shape(*this, other, "operator+=");
  as_vector() += other.as_vector();
  return *this;
}

Image& Image::operator-=(const Image& other) {
  require_same_shape(*this, other, "operator-=");
  as_vector() -= other.as_vector();
  return *this;
}

Image& Image::operator*=(double s) {
  as_vector() *= s;
  return *this;
}

Image operator+(Image a, const Image& b) { return a += b; }
Image operator-(Image a, const Image& b) { return a -= b; }
Image operator*(double s, Image a) { return a *= s; }

double dot(const Image& a, const Image& b) {
  require_same_shape(a, b, "dot");
  return a.as_vector().dot(b.as_vector());
}

double squared_norm(const Image& a) { return a.as_vector().squaredNorm(); }
double norm(const Image& a) { return a.as_vector().norm(); }

Kernel2D::Kernel2D(int size, std::vector<double> weights)
    : size_(size), weights_(std::move(weights)) {
  if (size < 1 || size % 2 == 0) {
    throw std::invalid_argument("kernel size must be odd and positive, got " +
                                std::to_string(size));
  }
  if (weights_.size() != static_cast<size_t>(size) * size) {
    throw std::invalid_argument("kernel weights length does not match size");
  }
}

double SplitMix64::next_gaussian() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = next_uniform();
  double u2 = next_uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return r * std::cos(theta);
}

Kernel2D gaussian_kernel(int size, double std) {
  if (size < 1 || size % 2 == 0) {
    throw std::invalid_argument("gaussian_kernel: size must be odd and positive, got " +
                                std::to_string(size));
  }
  if (!(std > 0.0)) {
    throw std::invalid_argument("gaussian_kernel: std must be positive");
  }
  int r = size / 2;
  std::vector<double> w(static_cast<size_t>(size) * size);
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    for (int j = 0; j < size; ++j) {
      double dy = i - r;
      double dx = j - r;
      double v = std::exp(-(dy * dy + dx * dx) / (2.0 * std * std));
      w[static_cast<size_t>(i) * size + j] = v;
      sum += v;
    }
  }
  for (double& v : w) v /= sum;
  return Kernel2D(size, std::move(w));
}

Kernel2D identity_kernel() { return Kernel2D(1, {1.0}); }

Image add_awgn(const Image& x, double sigma, RngSeed seed) {
  if (sigma < 0.0) {
    throw std::invalid_argument("add_awgn: sigma must be nonnegative");
  }
  if (sigma == 0.0) return x;
  Image out = x;
  SplitMix64 rng(seed.seed);
  for (double& v : out.data()) v += sigma * rng.next_gaussian();
  return out;
}

double psnr(const Image& x, const Image& ref) {
  require_same_shape(x, ref, "psnr");
  double mse = (x.as_vector() - ref.as_vector()).squaredNorm() / static_cast<double>(x.size());
  if (mse <= 0.0) return kPsnrCapDb;
  double db = 10.0 * std::log10(1.0 / mse);
  return std::min(db, kPsnrCapDb);
}

}  // namespace drp
