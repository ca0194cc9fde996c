#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>

#include "edcnn/rng.hpp"
#include "edcnn/tensor.hpp"

namespace testing {

template <typename T = float>
edcnn::BasicTensor<T> random_tensor(edcnn::Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  edcnn::Rng rng(seed);
  edcnn::BasicTensor<T> t(s);
  for (T& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
double max_abs_diff(const edcnn::BasicTensor<T>& a, const edcnn::BasicTensor<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
  return m;
}

/// Fresh empty directory under the test working directory.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const std::filesystem::path p = std::filesystem::current_path() / "unit_scratch" / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing
