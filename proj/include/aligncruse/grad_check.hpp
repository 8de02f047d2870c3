// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "aligncruse/autodiff.hpp"

namespace acrs::ad {

struct GradCheckOptions {
  double step = 1e-5;
  // Denominator floor so gradients near zero compare absolutely.
  double floor = 1e-6;
  // Coordinates sampled per input; 0 checks every coordinate.
  int samples_per_input = 0;
  std::uint64_t seed = 1;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  int worst_input = -1;
  Index worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  int checked = 0;

  std::string describe() const;
};

// Builds a scalar from the given leaves on a fresh graph.
using ScalarFn = std::function<Var(Graph&, const std::vector<Var>&)>;

// |a - n| / max(|a|, |n|, floor) over central differences.
double relative_error(double analytic, double numeric, double floor);

GradCheckResult grad_check(const ScalarFn& fn, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& opts = {});

struct OpCheck {
  std::string op;
  GradCheckResult result;
};
// Every differentiable op on small random inputs, each reduced to a scalar
// by a random linear probe.
std::vector<OpCheck> check_all_ops(std::uint64_t seed = 11);

}  // namespace acrs::ad
