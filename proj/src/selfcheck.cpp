// src/selfcheck.cpp

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

#include "milpool/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "milpool/frame_model.hpp"
#include "milpool/losses.hpp"
#include "milpool/mean_teacher.hpp"
#include "milpool/pooling.hpp"

namespace milpool {

double gradient_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                               double floor) {
  if (analytic.size() != numeric.size()) throw Error("gradient_relative_error: size mismatch");
  double diff = 0.0, scale = floor;
  for (size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return diff / scale;
}

namespace {

std::vector<double> random_probs(Rng& rng, size_t frames, double lo = 0.02, double hi = 0.98) {
  std::vector<double> y(frames);
  for (double& v : y) v = lo + (hi - lo) * rng.uniform();
  return y;
}

// Top-two gap, used to keep max pooling away from ties.
double top_gap(std::vector<double> y) {
  std::sort(y.begin(), y.end(), std::greater<>());
  return y.size() > 1 ? y[0] - y[1] : 1.0;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << std::scientific << v;
  return s.str();
}

CheckResult finish(std::string name, double worst, double tol, std::string detail = {}) {
  CheckResult r{std::move(name), worst <= tol, worst, tol, std::move(detail)};
  if (r.detail.empty()) r.detail = "worst " + fmt(worst) + " (tol " + fmt(tol) + ")";
  return r;
}

// Gradient of the clip probability for one pooling spec. Layout of the
// parameter vector: frame probabilities, then n or beta, then for attention
// the T x H features and the H attention weights.
double pooling_oracle(const PoolingSpec& base, size_t frames, Rng& rng) {
  const size_t hidden = base.kind == PoolKind::Attention ? base.attention.rows() : 0;
  std::vector<double> y = random_probs(rng, frames);
  if (base.kind == PoolKind::Max)
    while (top_gap(y) < 1e-3) y = random_probs(rng, frames);
  Matrix features(frames, hidden);
  for (double& v : features.values()) v = rng.gaussian(0.0, 1.0);
  PoolingSpec spec = base;
  for (double& v : spec.attention.values()) v = rng.gaussian(0.0, 1.0);

  std::vector<double> x(y);
  const bool has_n = spec.kind == PoolKind::Power, has_beta = spec.kind == PoolKind::Auto;
  if (has_n) x.push_back(spec.n[0]);
  if (has_beta) x.push_back(spec.beta[0]);
  x.insert(x.end(), features.values().begin(), features.values().end());
  for (size_t j = 0; j < hidden; ++j) x.push_back(spec.attention(j, 0));

  auto unpack = [&](std::span<const double> p, PoolingSpec& s, Matrix& f) {
    size_t o = frames;
    if (has_n) s.n[0] = p[o++];
    if (has_beta) s.beta[0] = p[o++];
    std::copy_n(p.begin() + static_cast<std::ptrdiff_t>(o), frames * hidden, f.values().begin());
    o += frames * hidden;
    for (size_t j = 0; j < hidden; ++j) s.attention(j, 0) = p[o++];
  };
  auto f = [&](std::span<const double> p) {
    PoolingSpec s = spec;
    Matrix feat = features;
    unpack(p, s, feat);
    return pool_forward(p.first(frames), s, 0, hidden ? &feat : nullptr);
  };
  const auto numeric = finite_diff_gradient(f, x);
  PoolResult r = pool_backward(y, spec, 1.0, 0, hidden ? &features : nullptr);
  std::vector<double> analytic(r.frame_grads);
  if (has_n) analytic.push_back(r.d_n);
  if (has_beta) analytic.push_back(r.d_beta);
  if (hidden) {
    analytic.insert(analytic.end(), r.d_features.values().begin(), r.d_features.values().end());
    analytic.insert(analytic.end(), r.d_attention.begin(), r.d_attention.end());
  }
  return gradient_relative_error(analytic, numeric);
}

}  // namespace

std::vector<CheckResult> check_pooling_gradients(uint64_t seed, size_t vectors_per_length) {
  struct Case {
    std::string label;
    PoolingSpec spec;
  };
  std::vector<Case> cases;
  cases.push_back({"linear", PoolingSpec::make(PoolKind::Linear, 1, 1)});
  for (double n : {0.4, 1.0, 2.0, 5.0}) {
    std::ostringstream label;
    label << "power(n=" << n << ")";
    cases.push_back({label.str(), PoolingSpec::make(PoolKind::Power, 1, 1, Sharing::Shared, n)});
  }
  cases.push_back({"auto(beta=1.5)", PoolingSpec::make(PoolKind::Auto, 1, 1, Sharing::Shared, 1.2, 1.5)});
  cases.push_back({"attention", PoolingSpec::make(PoolKind::Attention, 1, 3)});
  cases.push_back({"mean", PoolingSpec::make(PoolKind::Mean, 1, 1)});
  cases.push_back({"max", PoolingSpec::make(PoolKind::Max, 1, 1)});

  std::vector<CheckResult> out;
  for (size_t c = 0; c < cases.size(); ++c) {
    Rng rng = Rng::substream(seed, {11, c});
    double worst = 0.0;
    for (size_t frames : {size_t{5}, size_t{20}})
      for (size_t v = 0; v < vectors_per_length; ++v)
        worst = std::max(worst, pooling_oracle(cases[c].spec, frames, rng));
    out.push_back(finish("pooling gradient " + cases[c].label, worst, 1e-5));
  }
  return out;
}

std::vector<CheckResult> check_interpolation_identities(uint64_t seed, size_t trials) {
  Rng rng = Rng::substream(seed, {12});
  const auto power0 = PoolingSpec::make(PoolKind::Power, 1, 1, Sharing::Shared, 0.0);
  const auto power1 = PoolingSpec::make(PoolKind::Power, 1, 1, Sharing::Shared, 1.0);
  const auto power20 = PoolingSpec::make(PoolKind::Power, 1, 1, Sharing::Shared, 20.0);
  const auto mean = PoolingSpec::make(PoolKind::Mean, 1, 1);
  const auto linear = PoolingSpec::make(PoolKind::Linear, 1, 1);
  const auto max = PoolingSpec::make(PoolKind::Max, 1, 1);

  double worst_mean = 0.0, worst_linear = 0.0, worst_max = 0.0;
  std::vector<double> worst_max_input;
  for (size_t t = 0; t < trials; ++t) {
    const size_t frames = 2 + rng.uniform_int(30);
    const auto y = random_probs(rng, frames, 0.001, 1.0);
    auto compare = [&](const PoolingSpec& a, const PoolingSpec& b) {
      PoolResult ra = pool_backward(y, a, 1.0), rb = pool_backward(y, b, 1.0);
      double d = std::abs(ra.clip_prob - rb.clip_prob);
      for (size_t i = 0; i < frames; ++i) d = std::max(d, std::abs(ra.frame_grads[i] - rb.frame_grads[i]));
      return d;
    };
    worst_mean = std::max(worst_mean, compare(power0, mean));
    worst_linear = std::max(worst_linear, compare(power1, linear));
  }
  size_t accepted = 0;
  while (accepted < trials) {
    const size_t frames = 2 + rng.uniform_int(30);
    const auto y = random_probs(rng, frames, 0.001, 1.0);
    if (top_gap(y) < 0.1) continue;
    ++accepted;
    const double d = std::abs(pool_forward(y, power20) - pool_forward(y, max));
    if (d > worst_max) {
      worst_max = d;
      worst_max_input = y;
    }
  }
  std::string max_detail = "worst " + fmt(worst_max) + " (tol 1.000e-03)";
  if (!worst_max_input.empty()) {
    auto sorted = worst_max_input;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    std::ostringstream s;
    s.precision(4);
    s << "; worst input has T=" << sorted.size() << ", top values " << sorted[0] << ", " << sorted[1];
    if (sorted.size() > 2) s << ", " << sorted[2];
    max_detail += s.str();
  }
  return {finish("power(n=0) == mean", worst_mean, 1e-12), finish("power(n=1) == linear", worst_linear, 1e-12),
          finish("power(n=20) ~ max, top-two gap >= 0.1", worst_max, 1e-3, max_detail)};
}

CheckResult check_threshold_law(uint64_t seed, size_t instances) {
  Rng rng = Rng::substream(seed, {13});
  size_t mismatches = 0, frames_checked = 0, ties = 0;
  double worst_tie = 0.0;
  for (size_t t = 0; t < instances; ++t) {
    const size_t frames = 2 + rng.uniform_int(20);
    const double n = 5.0 * rng.uniform();
    PoolingSpec spec = PoolingSpec::make(PoolKind::Power, 1, 1, Sharing::Shared, n);
    auto y = random_probs(rng, frames, 0.01, 1.0);
    const double theta = power_threshold(n);

    // Every fourth instance: move frame 0 onto the threshold by bisection on
    // g(x) = x - theta * y_c(x), which is increasing in x.
    const bool tie = t % 4 == 0;
    if (tie) {
      double lo = kProbFloor, hi = 1.0;
      auto g = [&](double x) {
        y[0] = x;
        return x - theta * pool_forward(y, spec);
      };
      if (g(lo) < 0.0 && g(hi) > 0.0) {
        for (int it = 0; it < 200; ++it) {
          const double mid = 0.5 * (lo + hi);
          (g(mid) < 0.0 ? lo : hi) = mid;
        }
        y[0] = 0.5 * (lo + hi);
      }
    }
    PoolResult r = pool_backward(y, spec, 1.0);
    for (size_t i = 0; i < frames; ++i) {
      ++frames_checked;
      const double margin = y[i] - theta * r.clip_prob;
      if (std::abs(margin) <= 1e-12) {
        ++ties;
        worst_tie = std::max(worst_tie, std::abs(r.frame_grads[i]));
        continue;
      }
      const bool sign_ok = (margin > 0.0) == (r.frame_grads[i] > 0.0) && r.frame_grads[i] != 0.0;
      if (!sign_ok) ++mismatches;
    }
  }
  std::ostringstream detail;
  detail << frames_checked << " frames, " << mismatches << " sign mismatches, " << ties
         << " ties with max |grad| " << fmt(worst_tie);
  CheckResult r{"power gradient sign threshold", mismatches == 0 && worst_tie <= 1e-12 && ties > 0,
                static_cast<double>(mismatches), 0.0, detail.str()};
  return r;
}

std::vector<CheckResult> check_model_gradients(uint64_t seed) {
  ModelConfig cfg;
  cfg.input_dim = 3;
  cfg.hidden_dims = {4};
  cfg.num_classes = 2;
  cfg.context_radius = 1;
  cfg.seed = seed;
  const size_t frames = 6;

  ModelParams student = init_params(cfg);
  ModelConfig tcfg = cfg;
  tcfg.seed = mix_seed(seed + 1);
  ModelParams teacher = init_params(tcfg);
  Rng rng = Rng::substream(seed, {14});
  // Move n off its init and biases off zero so no term is degenerate.
  student.pooling.n[0] = 1.7;
  for (double& b : student.class_head.bias) b = rng.gaussian(0.0, 0.5);
  for (double& b : student.confidence_head.bias) b = rng.gaussian(0.0, 0.5);
  for (double& b : student.hidden[0].bias) b = rng.gaussian(0.0, 0.5);

  Matrix features(frames, cfg.input_dim);
  for (double& v : features.values()) v = rng.gaussian(0.0, 1.0);
  Matrix labels(frames, cfg.num_classes);
  for (double& v : labels.values()) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
  const FrameTargets targets = FrameTargets::strong(labels);
  const PredictionBundle tb = forward(features, teacher);
  LossWeights weights;
  weights.lambda = 0.1;

  std::vector<CheckResult> out;
  for (Phase phase : {Phase::Classification, Phase::Confidence}) {
    const size_t epoch = 8;
    auto loss = [&](std::span<const double> p) {
      ModelParams m = student;
      unflatten(m, p);
      return stage1_loss(forward(features, m), tb, targets, epoch, weights, phase).total;
    };
    const auto x = flatten(student);
    const auto numeric = finite_diff_gradient(loss, x);
    PredictionBundle sb = forward(features, student);
    Stage1Loss l = stage1_loss(sb, tb, targets, epoch, weights, phase);
    const auto analytic = flatten(backward(features, student, sb, l.grads));
    const double err = gradient_relative_error(analytic, numeric);
    out.push_back(finish(std::string("model gradient, ") +
                             (phase == Phase::Classification ? "classification" : "confidence") + " phase",
                         err, 1e-4));
  }
  return out;
}

CheckResult check_ema_closed_form(uint64_t seed, size_t steps) {
  ModelConfig cfg;
  cfg.input_dim = 4;
  cfg.hidden_dims = {5};
  cfg.num_classes = 3;
  cfg.seed = seed;
  const ModelParams student = init_params(cfg);
  ModelConfig tcfg = cfg;
  tcfg.seed = mix_seed(seed + 7);
  TeacherState teacher{init_params(tcfg), 0.99};
  const auto t0 = flatten(teacher.params);
  const auto s = flatten(student);
  for (size_t k = 0; k < steps; ++k) ema_update(teacher, student);
  const double dk = std::pow(teacher.decay, static_cast<double>(steps));
  const auto got = flatten(teacher.params);
  double worst = 0.0;
  for (size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - (dk * t0[i] + (1.0 - dk) * s[i])));
  return finish("EMA closed form", worst, 1e-10);
}

std::vector<CheckResult> run_self_checks(uint64_t seed) {
  std::vector<CheckResult> out = check_pooling_gradients(seed);
  for (auto& r : check_interpolation_identities(seed)) out.push_back(r);
  out.push_back(check_threshold_law(seed));
  for (auto& r : check_model_gradients(seed)) out.push_back(r);
  out.push_back(check_ema_closed_form(seed));
  return out;
}

}  // namespace milpool
