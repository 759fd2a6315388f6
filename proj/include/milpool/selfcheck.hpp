// include/milpool/selfcheck.hpp

// Copyright 2026  milpool authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef MILPOOL_SELFCHECK_HPP_
#define MILPOOL_SELFCHECK_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace milpool {

// Gradient and property checks shared by `milpool check` and the
// acceptance runner. Each returns the worst observed deviation.

struct CheckResult {
  std::string name;
  bool pass = false;
  double worst = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

/// Max-norm relative error between two gradient vectors:
/// |a - b|_inf / max(|a|_inf, |b|_inf, floor).
double gradient_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                               double floor = 1e-8);

/// Analytic pooling backward against central differences for every pooling
/// kind, including d/dn and d/dbeta and the attention parameters.
std::vector<CheckResult> check_pooling_gradients(uint64_t seed, size_t vectors_per_length = 100);

/// Power(0) against Mean and Power(1) against Linear (forward and frame
/// gradients), then Power(20) against Max on inputs with a top-two gap >= 0.1.
std::vector<CheckResult> check_interpolation_identities(uint64_t seed, size_t trials = 1000);

/// sign(dy_c/dy_i) == sign(y_i - n/(n+1) y_c), including constructed ties.
CheckResult check_threshold_law(uint64_t seed, size_t instances = 1000);

/// End-to-end stage-one loss gradient on a tiny model, one result per phase.
std::vector<CheckResult> check_model_gradients(uint64_t seed);

/// k EMA steps with a constant student against the geometric-series closed form.
CheckResult check_ema_closed_form(uint64_t seed, size_t steps = 100);

std::vector<CheckResult> run_self_checks(uint64_t seed);

}  // namespace milpool

#endif  // MILPOOL_SELFCHECK_HPP_
