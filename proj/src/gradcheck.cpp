#include "bapc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bapc {

std::vector<Tensor<double>> finite_diff_grad(const std::function<double()>& f,
                                             std::span<Parameter<double>* const> params, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: step must be positive");
  std::vector<Tensor<double>> out;
  out.reserve(params.size());
  for (Parameter<double>* p : params) {
    Tensor<double> g(p->value.shape());
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + h;
      const double up = f();
      p->value[i] = saved - h;
      const double down = f();
      p->value[i] = saved;
      g[i] = (up - down) / (2.0 * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}

GradComparison compare_gradients(std::span<Parameter<double>* const> params,
                                 std::span<const Tensor<double>> numeric) {
  if (params.size() != numeric.size()) throw std::invalid_argument("compare_gradients: size mismatch");
  GradComparison result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Parameter<double>& p = *params[k];
    if (numeric[k].size() != p.value.size()) {
      throw std::invalid_argument("compare_gradients: numeric gradient shape differs for " + p.name);
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double analytic = p.grad.empty() ? 0.0 : p.grad[i];
      const double err = relative_error(analytic, numeric[k][i]);
      ++result.coordinates;
      if (result.worst_param.empty() || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = p.name;
        result.worst_index = i;
        result.worst_analytic = analytic;
        result.worst_numeric = numeric[k][i];
      }
    }
  }
  return result;
}

}  // namespace bapc
