#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace edcnn {

/// A scalar objective over a set of named parameter buffers. `loss` must read the
/// parameters through the same storage the spans point into; `gradient` returns
/// the analytic gradient for each parameter, in the same order.
template <typename T>
struct DiffProblem {
  std::vector<std::string> names;
  std::vector<std::span<T>> params;
  std::function<double()> loss;
  std::function<std::vector<std::vector<T>>()> gradient;
};

/// Restricts which elements get probed. max_per_param == 0 probes every element.
struct ProbeSelection {
  std::size_t max_per_param = 0;
  std::uint64_t seed = 0;
};

struct ParamDiffResult {
  std::string name;
  std::size_t checked = 0;
  std::size_t worst_index = 0;
  double max_relative_error = 0.0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

struct FiniteDiffReport {
  double max_relative_error = 0.0;
  std::vector<ParamDiffResult> params;
};

/// |a - f| / max(|a|, |f|, 1e-8)
double relative_error(double analytic, double numeric);

/// Central differences (loss(p + eps) - loss(p - eps)) / (2 eps) against the analytic
/// gradient. Parameters are restored bit-exactly after each probe. Throws
/// NonFiniteError if any loss evaluation is NaN/Inf.
template <typename T>
FiniteDiffReport finite_diff_check(const DiffProblem<T>& problem, double eps, const ProbeSelection& selection = {});

}  // namespace edcnn
