#include "edcnn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "edcnn/rng.hpp"
#include "edcnn/tensor.hpp"

namespace edcnn {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace {

std::vector<std::size_t> probe_indices(std::size_t size, const ProbeSelection& sel, std::size_t param_index) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (sel.max_per_param == 0 || size <= sel.max_per_param) return idx;
  Rng rng(derive_seed(sel.seed, 0x67726164ULL, param_index));
  // Partial Fisher-Yates: the first max_per_param entries become the sample.
  for (std::size_t i = 0; i < sel.max_per_param; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(size - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(sel.max_per_param);
  std::sort(idx.begin(), idx.end());
  return idx;
}

double checked_loss(const std::function<double()>& loss, const std::string& name, std::size_t index) {
  const double v = loss();
  if (!std::isfinite(v)) {
    throw NonFiniteError("finite_diff_check: non-finite loss while probing " + name + "[" + std::to_string(index) + "]");
  }
  return v;
}

}  // namespace

template <typename T>
FiniteDiffReport finite_diff_check(const DiffProblem<T>& problem, double eps, const ProbeSelection& selection) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_check: eps must be positive");
  if (problem.names.size() != problem.params.size()) throw std::invalid_argument("finite_diff_check: names/params length differ");

  const double base = problem.loss();
  if (!std::isfinite(base)) throw NonFiniteError("finite_diff_check: non-finite loss at the base point");
  const std::vector<std::vector<T>> analytic = problem.gradient();
  if (analytic.size() != problem.params.size()) throw ShapeError("finite_diff_check: gradient count differs from parameter count");

  FiniteDiffReport report;
  for (std::size_t p = 0; p < problem.params.size(); ++p) {
    std::span<T> values = problem.params[p];
    if (analytic[p].size() != values.size()) {
      throw ShapeError("finite_diff_check: gradient of " + problem.names[p] + " has " +
                       std::to_string(analytic[p].size()) + " elements, parameter has " + std::to_string(values.size()));
    }
    ParamDiffResult result{problem.names[p]};
    for (std::size_t i : probe_indices(values.size(), selection, p)) {
      const T original = values[i];
      const T plus = static_cast<T>(static_cast<double>(original) + eps);
      const T minus = static_cast<T>(static_cast<double>(original) - eps);
      values[i] = plus;
      const double loss_plus = checked_loss(problem.loss, problem.names[p], i);
      values[i] = minus;
      const double loss_minus = checked_loss(problem.loss, problem.names[p], i);
      values[i] = original;
      // Divide by the step actually stored, which equals 2*eps unless T rounds it.
      const double step = static_cast<double>(plus) - static_cast<double>(minus);
      const double numeric = (loss_plus - loss_minus) / step;
      const double a = static_cast<double>(analytic[p][i]);
      const double err = relative_error(a, numeric);
      ++result.checked;
      if (err > result.max_relative_error || result.checked == 1) {
        result.max_relative_error = err;
        result.worst_index = i;
        result.analytic_at_worst = a;
        result.numeric_at_worst = numeric;
      }
    }
    report.max_relative_error = std::max(report.max_relative_error, result.max_relative_error);
    report.params.push_back(std::move(result));
  }
  return report;
}

template FiniteDiffReport finite_diff_check(const DiffProblem<float>&, double, const ProbeSelection&);
template FiniteDiffReport finite_diff_check(const DiffProblem<double>&, double, const ProbeSelection&);

}  // namespace edcnn
