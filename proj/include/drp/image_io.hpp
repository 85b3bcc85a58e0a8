#pragma once

#include <stdexcept>
#include <string>

#include "drp/tensor.hpp"

namespace drp {

/// Filesystem / decode failure.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads an 8-bit PNG (gray -> 1 channel, RGB -> 3; palette expanded, alpha
/// stripped). Pixel p maps to p/255.
Image read_png(const std::string& path);

/// Writes an 8-bit PNG from a 1- or 3-channel image. Value v is written as
/// round(v*255) clamped to [0,255].
void write_png(const Image& img, const std::string& path);

/// Binary PGM (P5), grayscale only, same quantization rule as PNG.
Image read_pgm(const std::string& path);
void write_pgm(const Image& img, const std::string& path);

/// Dispatches on the file extension (.png, .pgm).
Image read_image(const std::string& path);
void write_image(const Image& img, const std::string& path);

}  // namespace drp
