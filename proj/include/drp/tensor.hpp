#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace drp {

/// Tensor extent: channels x height x width. Vectors in R^n are carried as
/// (1, 1, n) or any shape with the right total size.
struct Shape {
  int channels = 1;
  int height = 1;
  int width = 1;

  long size() const { return static_cast<long>(channels) * height * width; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense real image/vector, row-major within each channel, values typically
/// in [0,1]. All arithmetic is shape-checked.
class Image {
 public:
  Image() = default;
  explicit Image(Shape shape, double fill = 0.0)
      : shape_(shape), data_(check_size(shape), fill) {}
  Image(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  long size() const { return static_cast<long>(data_.size()); }

  double& at(int c, int y, int x) {
    return data_[(static_cast<size_t>(c) * shape_.height + y) * shape_.width + x];
  }
  double at(int c, int y, int x) const {
    return data_[(static_cast<size_t>(c) * shape_.height + y) * shape_.width + x];
  }
  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  Eigen::Map<const Eigen::VectorXd> as_vector() const {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }
  Eigen::Map<Eigen::VectorXd> as_vector() {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }
  Eigen::VectorXd to_vector() const { return as_vector(); }
  static Image from_vector(Shape shape, const Eigen::VectorXd& v);

  Image& operator+=(const Image& other);
  Image& operator-=(const Image& other);
  Image& operator*=(double s);

 private:
  static size_t check_size(const Shape& s);

  Shape shape_{};
  std::vector<double> data_;
};

Image operator+(Image a, const Image& b);
Image operator-(Image a, const Image& b);
Image operator*(double s, Image a);

double dot(const Image& a, const Image& b);
double squared_norm(const Image& a);
double norm(const Image& a);

/// Square odd-sized convolution kernel.
class Kernel2D {
 public:
  Kernel2D(int size, std::vector<double> weights);

  int size() const { return size_; }
  int radius() const { return size_ / 2; }
  double at(int i, int j) const { return weights_[static_cast<size_t>(i) * size_ + j]; }
  const std::vector<double>& weights() const { return weights_; }

 private:
  int size_;
  std::vector<double> weights_;
};

/// Seed for the deterministic noise stream. Identical seeds produce
/// bit-identical streams on a given platform.
struct RngSeed {
  uint64_t seed = 0;
};

/// SplitMix64 stream (Steele, Lea & Flood 2014). Used everywhere a
/// reproducible uniform/Gaussian source is needed; Gaussian variates come
/// from the Box-Muller transform on consecutive pairs.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in (0, 1].
  double next_uniform() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; generates in pairs.
  double next_gaussian();

  /// Uniform in [lo, hi).
  double next_in(double lo, double hi) {
    return lo + (hi - lo) * (next_uniform() - 0x1.0p-53);
  }

 private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Normalized (sum-1) sampled Gaussian kernel, centered, `size` odd.
Kernel2D gaussian_kernel(int size, double std);

/// Identity single-tap kernel.
Kernel2D identity_kernel();

/// x + e with e ~ iid N(0, sigma^2), deterministic per seed.
Image add_awgn(const Image& x, double sigma, RngSeed seed);

/// Peak signal-to-noise ratio in dB against a peak value of 1.0, single MSE
/// over all channels jointly. Capped at 300 dB when the MSE underflows it.
double psnr(const Image& x, const Image& ref);

inline constexpr double kPsnrCapDb = 300.0;

}  // namespace drp
