#pragma once

// Test-only finite-difference oracle. Rebuilds the forward pass around
// perturbed parameters and compares central differences against the
// analytic gradients from one backward sweep. Runs in 64-bit.

#include <cmath>
#include <functional>
#include <vector>

#include "sdcl/tensor.hpp"

namespace gradcheck {

struct Result {
  double max_rel_err = 0.0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// forward() must rebuild the graph from the current values of `leaves`
// and return a scalar tensor.
inline Result check(std::vector<sdcl::Tensor<double>> leaves,
                    const std::function<sdcl::Tensor<double>()>& forward,
                    double step = 1e-5) {
  auto loss = forward();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& leaf : leaves)
    analytic.push_back(leaf.has_grad()
                           ? leaf.grad()
                           : std::vector<double>(leaf.numel(), 0.0));

  Result res;
  for (size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = leaves[li];
    for (int64_t i = 0; i < leaf.numel(); ++i) {
      const double orig = leaf.data()[i];
      leaf.data()[i] = orig + step;
      const double up = forward().item();
      leaf.data()[i] = orig - step;
      const double down = forward().item();
      leaf.data()[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[li][i];
      // Floor the denominator so near-zero gradients are judged on a
      // 1e-7-scale absolute criterion instead of blowing up the ratio.
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-3});
      const double rel = std::fabs(a - numeric) / denom;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_analytic = a;
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace gradcheck
