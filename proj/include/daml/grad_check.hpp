#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "daml/autodiff.hpp"
#include "daml/parameters.hpp"

namespace daml {

struct GradCheckResult {
  double max_error = 0.0;
  std::string worst_parameter;
  Index worst_coordinate = -1;
  std::size_t coordinates_checked = 0;
};

// Compares analytic gradients against central differences.
//
// `build` maps (graph, leaves) to a scalar loss, where leaves[i] is bound to
// params[i]. Error per coordinate is |analytic - numeric| / max(1, |analytic|).
// With `max_coords` > 0 each parameter is subsampled to at most that many
// coordinates (chosen by `seed`).
template <typename Scalar, typename Builder>
GradCheckResult grad_check_detailed(Builder&& build, ParameterSet<Scalar> params, Scalar eps,
                                    std::size_t max_coords = 0, std::uint64_t seed = 0) {
  if (!(eps > Scalar(0)) || eps > Scalar(1e-2)) throw ContractError("grad_check: eps must lie in (0, 1e-2]");

  const auto evaluate = [&](bool with_grad, std::vector<Matrix<Scalar>>* grads) {
    Graph<Scalar> g(false);
    std::vector<Tensor<Scalar>> leaves;
    leaves.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      leaves.push_back(with_grad ? g.variable(params[i]) : g.constant(params[i]));
    }
    Tensor<Scalar> loss = build(g, leaves);
    if (with_grad) {
      g.backward(loss);
      for (const auto& l : leaves) grads->push_back(l.grad());
    }
    return static_cast<double>(loss.item());
  };

  std::vector<Matrix<Scalar>> analytic;
  evaluate(true, &analytic);

  GradCheckResult result;
  std::mt19937_64 rng(seed);
  for (std::size_t p = 0; p < params.size(); ++p) {
    std::vector<Index> coords(static_cast<std::size_t>(params[p].size()));
    std::iota(coords.begin(), coords.end(), Index{0});
    if (max_coords > 0 && coords.size() > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords);
    }
    for (Index c : coords) {
      Scalar& x = params[p].data()[c];
      const Scalar saved = x;
      x = saved + eps;
      const double up = evaluate(false, nullptr);
      x = saved - eps;
      const double down = evaluate(false, nullptr);
      x = saved;
      const double numeric = (up - down) / (2.0 * static_cast<double>(eps));
      const double a = static_cast<double>(analytic[p].data()[c]);
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      ++result.coordinates_checked;
      if (err > result.max_error || result.worst_coordinate < 0) {
        result.max_error = err;
        result.worst_parameter = params.name(p);
        result.worst_coordinate = c;
      }
    }
  }
  return result;
}

template <typename Scalar, typename Builder>
double grad_check(Builder&& build, ParameterSet<Scalar> params, Scalar eps, std::size_t max_coords = 0,
                  std::uint64_t seed = 0) {
  return grad_check_detailed(std::forward<Builder>(build), std::move(params), eps, max_coords, seed).max_error;
}

}  // namespace daml
