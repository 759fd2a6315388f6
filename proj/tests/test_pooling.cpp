// tests/test_pooling.cpp

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

#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "milpool/pooling.hpp"
#include "milpool/selfcheck.hpp"

using namespace milpool;

namespace {

PoolingSpec power(double n) { return PoolingSpec::make(PoolKind::Power, 1, 1, Sharing::Shared, n); }

// Direct evaluation of sum y^(n+1) / sum y^n, kept separate from the
// log-space implementation.
double power_reference(const std::vector<double>& y, double n) {
  double num = 0.0, den = 0.0;
  for (double v : y) {
    num += std::pow(v, n + 1.0);
    den += std::pow(v, n);
  }
  return num / den;
}

std::vector<double> random_probs(Rng& rng, size_t frames) {
  std::vector<double> y(frames);
  for (double& v : y) v = 0.01 + 0.98 * rng.uniform();
  return y;
}

}  // namespace

TEST_CASE("power pooling examples") {
  const std::vector<double> y{0.2, 0.8};
  CHECK(pool_forward(y, power(2.0)) == doctest::Approx(0.52 / 0.68).epsilon(1e-12));
  CHECK(pool_forward(y, power(0.0)) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(pool_forward(y, power(1.0)) == doctest::Approx(0.68).epsilon(1e-14));
  CHECK(std::abs(pool_forward(y, power(20.0)) - 0.8) < 1e-3);
  CHECK(pool_forward(y, PoolingSpec::make(PoolKind::Mean, 1, 1)) == doctest::Approx(0.5));
  CHECK(pool_forward(y, PoolingSpec::make(PoolKind::Linear, 1, 1)) == doctest::Approx(0.68));
  CHECK(pool_forward(y, PoolingSpec::make(PoolKind::Max, 1, 1)) == 0.8);
}

TEST_CASE("power pooling matches direct evaluation") {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    const auto y = random_probs(rng, 1 + rng.uniform_int(30));
    const double n = 6.0 * rng.uniform();
    CHECK(pool_forward(y, power(n)) == doctest::Approx(power_reference(y, n)).epsilon(1e-10));
  }
}

TEST_CASE("backward examples") {
  const std::vector<double> y{0.2, 0.8};
  const auto lin = pool_backward(y, PoolingSpec::make(PoolKind::Linear, 1, 1), 1.0);
  CHECK(lin.frame_grads[0] == doctest::Approx(-0.28).epsilon(1e-12));
  CHECK(lin.frame_grads[1] == doctest::Approx(0.92).epsilon(1e-12));

  const auto pw = pool_backward(y, power(2.0), 1.0);
  const double yc = 0.52 / 0.68;
  CHECK(pw.frame_grads[0] == doctest::Approx((3 * 0.04 - 2 * 0.2 * yc) / 0.68).epsilon(1e-12));
  CHECK(pw.frame_grads[0] == doctest::Approx(-0.27336).epsilon(1e-4));

  const auto scaled = pool_backward(y, power(2.0), -3.0);
  CHECK(scaled.frame_grads[1] == doctest::Approx(-3.0 * pw.frame_grads[1]));
  CHECK(scaled.d_n == doctest::Approx(-3.0 * pw.d_n));
}

TEST_CASE("constant input pools to itself for every kind") {
  Matrix features(6, 2);
  for (size_t i = 0; i < 6; ++i) features(i, 0) = static_cast<double>(i) * 0.3, features(i, 1) = 1.0;
  for (PoolKind kind : {PoolKind::Max, PoolKind::Mean, PoolKind::Linear, PoolKind::Auto, PoolKind::Attention,
                        PoolKind::Power}) {
    auto spec = PoolingSpec::make(kind, 1, 2, Sharing::Shared, 2.5, 1.5);
    if (kind == PoolKind::Attention) spec.attention = Matrix::from_rows({{0.7}, {-0.2}});
    const std::vector<double> y(6, 0.37);
    CHECK(pool_forward(y, spec, 0, kind == PoolKind::Attention ? &features : nullptr) ==
          doctest::Approx(0.37).epsilon(1e-12));
  }
}

TEST_CASE("power threshold") {
  CHECK(power_threshold(1.0) == 0.5);
  CHECK(power_threshold(0.0) == 0.0);
  CHECK(power_threshold(0.7) == doctest::Approx(0.7 / 1.7).epsilon(1e-14));
  CHECK(power_threshold(0.7) == doctest::Approx(0.41176).epsilon(1e-4));
}

TEST_CASE("permutation invariance and convex envelope") {
  Rng rng(31);
  Matrix feats(12, 3);
  for (double& v : feats.values()) v = rng.gaussian(0.0, 1.0);
  for (PoolKind kind : {PoolKind::Max, PoolKind::Mean, PoolKind::Linear, PoolKind::Auto, PoolKind::Attention,
                        PoolKind::Power}) {
    auto spec = PoolingSpec::make(kind, 1, 3, Sharing::Shared, 1.7, -2.0);
    for (double& v : spec.attention.values()) v = rng.gaussian(0.0, 1.0);
    for (int t = 0; t < 30; ++t) {
      auto y = random_probs(rng, 12);
      const Matrix* f = kind == PoolKind::Attention ? &feats : nullptr;
      const double yc = pool_forward(y, spec, 0, f);
      CHECK(yc >= *std::min_element(y.begin(), y.end()) - 1e-15);
      CHECK(yc <= *std::max_element(y.begin(), y.end()) + 1e-15);

      // Reverse frames (and feature rows with them).
      std::vector<double> r(y.rbegin(), y.rend());
      Matrix rf(12, 3);
      for (size_t i = 0; i < 12; ++i)
        for (size_t j = 0; j < 3; ++j) rf(i, j) = feats(11 - i, j);
      CHECK(pool_forward(r, spec, 0, f ? &rf : nullptr) == doctest::Approx(yc).epsilon(1e-12));
    }
  }
}

TEST_CASE("linear pooling gradient is positive exactly above half the clip value") {
  Rng rng(32);
  const auto spec = PoolingSpec::make(PoolKind::Linear, 1, 1);
  for (int t = 0; t < 300; ++t) {
    const auto y = random_probs(rng, 2 + rng.uniform_int(15));
    const auto r = pool_backward(y, spec, 1.0);
    for (size_t i = 0; i < y.size(); ++i) {
      if (std::abs(y[i] - r.clip_prob / 2.0) < 1e-12) continue;
      CHECK((r.frame_grads[i] > 0.0) == (y[i] > r.clip_prob / 2.0));
    }
  }
}

TEST_CASE("negative exponents push every frame upward") {
  // For n in (-1, 0) the threshold n / (n + 1) is negative.
  auto spec = PoolingSpec::make(PoolKind::Power, 1, 1, Sharing::Shared, -0.5, 0.0, true);
  CHECK(spec.n_min == doctest::Approx(-1.0 + kNegativeExponentMargin));
  Rng rng(33);
  for (int t = 0; t < 100; ++t) {
    const auto y = random_probs(rng, 8);
    for (double g : pool_backward(y, spec, 1.0).frame_grads) CHECK(g > 0.0);
  }
}

TEST_CASE("exponent clamp") {
  auto spec = power(1.2);
  spec.n[0] = 25.0;
  spec.clamp();
  CHECK(spec.n[0] == kDefaultMaxExponent);
  spec.n[0] = -0.5;
  spec.clamp();
  CHECK(spec.n[0] == 0.0);
  auto neg = PoolingSpec::make(PoolKind::Power, 1, 1, Sharing::Shared, 1.2, 0.0, true);
  neg.n[0] = -3.0;
  neg.clamp();
  CHECK(neg.n[0] == doctest::Approx(-0.95));
  CHECK(PoolingSpec::make(PoolKind::Power, 1, 1, Sharing::Shared, -0.5).n[0] == 0.0);
}

TEST_CASE("per-class exponents") {
  auto spec = PoolingSpec::make(PoolKind::Power, 3, 1, Sharing::PerClass, 1.0);
  REQUIRE(spec.n.size() == 3);
  spec.n[2] = 0.0;
  const std::vector<double> y{0.2, 0.8};
  CHECK(pool_forward(y, spec, 0) == doctest::Approx(0.68));
  CHECK(pool_forward(y, spec, 2) == doctest::Approx(0.5));
  CHECK(spec.param_index(2) == 2);
  CHECK(power(1.0).param_index(2) == 0);
}

TEST_CASE("invalid inputs") {
  const std::vector<double> empty;
  CHECK_THROWS_AS(pool_forward(empty, power(1.0)), Error);
  const std::vector<double> bad{0.5, std::nan("")};
  CHECK_THROWS(pool_forward(bad, power(1.0)));
  const std::vector<double> y{0.5, 0.6};
  CHECK_THROWS_AS(pool_forward(y, PoolingSpec::make(PoolKind::Attention, 1, 2)), Error);
  CHECK_THROWS_AS(pool_backward(y, power(1.0), std::nan("")), NumericalError);
}

TEST_CASE("frames below the probability floor") {
  // Power pooling at n = 2 of an exact zero stays finite and gets no gradient.
  const std::vector<double> y{0.0, 0.5};
  const auto r = pool_backward(y, power(2.0), 1.0);
  CHECK(std::isfinite(r.clip_prob));
  CHECK(r.frame_grads[0] == 0.0);
  CHECK(std::isfinite(r.d_n));
}

TEST_CASE("kind names round-trip") {
  for (PoolKind kind : {PoolKind::Max, PoolKind::Mean, PoolKind::Linear, PoolKind::Auto, PoolKind::Attention,
                        PoolKind::Power})
    CHECK(parse_pool_kind(to_string(kind)) == kind);
  CHECK(parse_sharing(to_string(Sharing::PerClass)) == Sharing::PerClass);
  CHECK_THROWS(parse_pool_kind("softmax"));
}

TEST_CASE("analytic gradients against finite differences") {
  for (const CheckResult& r : check_pooling_gradients(99, 25)) {
    INFO(r.name << ": " << r.detail);
    CHECK(r.pass);
  }
}

TEST_CASE("power pooling limits") {
  const auto results = check_interpolation_identities(5, 200);
  CHECK(results[0].pass);
  CHECK(results[1].pass);
}

TEST_CASE("power gradient sign follows the threshold") {
  const CheckResult r = check_threshold_law(17, 300);
  INFO(r.detail);
  CHECK(r.pass);
}
