// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "sentfuse/autodiff.hpp"

namespace sentfuse {

// Central-difference gradient verification at 64-bit precision.
//
// f must rebuild its forward graph on every call and return a scalar Var
// that depends on the given parameter leaves. Returns the maximum relative
// error  |analytic − numeric| / max(1e-8, |analytic| + |numeric|)  over all
// parameter entries.
inline double grad_check(const std::function<Var<double>()>& f,
                         const std::vector<Var<double>>& params, double eps = 1e-5) {
  for (const auto& p : params) {
    if (!p.requires_grad()) throw ContractError("grad_check: parameter without grad slot");
  }

  Var<double> loss = f();
  if (loss.value().size() != 1) {
    throw ContractError("grad_check: f must return a scalar, got " +
                        loss.value().shape_str());
  }
  for (const auto& p : params) p.node()->zero_grad();
  backward(loss);

  std::vector<Tensor<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.grad());

  double max_rel = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Var<double> p = params[pi];
    Tensor<double>& v = p.mutable_value();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double keep = v[i];
      v[i] = keep + eps;
      const double fp = f().value()[0];
      v[i] = keep - eps;
      const double fm = f().value()[0];
      v[i] = keep;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace sentfuse
