#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bapc/tensor.hpp"

namespace bapc {

// Central differences (f(theta + h e_i) - f(theta - h e_i)) / 2h for every
// coordinate of every parameter. f must be deterministic and read the
// parameters' current values; each coordinate is restored after probing.
std::vector<Tensor<double>> finite_diff_grad(const std::function<double()>& f,
                                             std::span<Parameter<double>* const> params, double h);

// |analytic - numeric| / max(1, |analytic|, |numeric|)
double relative_error(double analytic, double numeric);

struct GradComparison {
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares each parameter's grad buffer (the analytic gradient) against the
// matching numeric tensor.
GradComparison compare_gradients(std::span<Parameter<double>* const> params,
                                 std::span<const Tensor<double>> numeric);

}  // namespace bapc
