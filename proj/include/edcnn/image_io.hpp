#pragma once

#include <filesystem>
#include <stdexcept>

#include "edcnn/tensor.hpp"

namespace edcnn {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary PGM (P5), 8- or 16-bit. Samples are divided by maxval; returns (1,1,h,w).
Tensor read_pgm(const std::filesystem::path& path);

/// Writes a 16-bit P5 file (maxval 65535). Values are clamped to [0,1] and
/// quantized with round-half-to-even. Accepts (1,1,h,w) tensors only.
void write_pgm(const std::filesystem::path& path, const Tensor& image);

/// The value write_pgm would encode, mapped back to [0,1].
float quantize_unit(float v);

}  // namespace edcnn
