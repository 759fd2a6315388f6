// src/pooling.cpp

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

#include "milpool/pooling.hpp"

#include <algorithm>
#include <cmath>

namespace milpool {

std::string to_string(PoolKind kind) {
  switch (kind) {
    case PoolKind::Max: return "max";
    case PoolKind::Mean: return "mean";
    case PoolKind::Linear: return "linear";
    case PoolKind::Auto: return "auto";
    case PoolKind::Attention: return "attention";
    case PoolKind::Power: return "power";
  }
  return "unknown";
}

std::string to_string(Sharing sharing) {
  return sharing == Sharing::Shared ? "shared" : "per-class";
}

PoolKind parse_pool_kind(std::string_view name) {
  for (PoolKind k : {PoolKind::Max, PoolKind::Mean, PoolKind::Linear, PoolKind::Auto,
                     PoolKind::Attention, PoolKind::Power})
    if (to_string(k) == name) return k;
  throw DataError("unknown pooling kind: " + std::string(name));
}

Sharing parse_sharing(std::string_view name) {
  if (name == "shared") return Sharing::Shared;
  if (name == "per-class") return Sharing::PerClass;
  throw DataError("unknown n sharing mode: " + std::string(name));
}

PoolingSpec PoolingSpec::make(PoolKind kind, size_t num_classes, size_t hidden_dim,
                              Sharing sharing, double n_init, double beta_init,
                              bool allow_negative_n) {
  PoolingSpec spec;
  spec.kind = kind;
  spec.sharing = sharing;
  size_t count = sharing == Sharing::Shared ? 1 : num_classes;
  spec.n.assign(count, n_init);
  spec.beta.assign(count, beta_init);
  spec.attention = Matrix(hidden_dim, num_classes, 0.0);
  spec.n_min = allow_negative_n ? -1.0 + kNegativeExponentMargin : 0.0;
  spec.n_max = kDefaultMaxExponent;
  spec.clamp();
  return spec;
}

void PoolingSpec::clamp() {
  for (double& v : n) v = std::clamp(v, n_min, n_max);
}

void PoolingSpec::validate(size_t num_classes) const {
  size_t expect = sharing == Sharing::Shared ? 1 : num_classes;
  if (n.size() != expect || beta.size() != expect)
    throw DataError("pooling: parameter count does not match sharing mode");
  if (!(n_min > -1.0) || n_max < n_min) throw DataError("pooling: invalid exponent bounds");
  if (attention.cols() != num_classes) throw DataError("pooling: attention head has wrong class count");
}

namespace {

void check_input(std::span<const double> y) {
  if (y.empty()) throw Error("pooling: empty frame vector");
  for (double v : y)
    if (!std::isfinite(v)) throw NumericalError("pooling: non-finite frame probability");
}

double floored(double y) { return std::max(y, kProbFloor); }

// Normalized weights s_i = exp(l_i) / sum_j exp(l_j), computed stably.
std::vector<double> softmax(const std::vector<double>& logits) {
  double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> s(logits.size());
  double total = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    s[i] = std::exp(logits[i] - top);
    total += s[i];
  }
  for (double& v : s) v /= total;
  return s;
}

double weighted_mean(std::span<const double> y, const std::vector<double>& s) {
  double acc = 0.0;
  for (size_t i = 0; i < y.size(); ++i) acc += y[i] * s[i];
  return acc;
}

std::vector<double> attention_logits(const Matrix& features, const PoolingSpec& spec, size_t cls) {
  std::vector<double> a(features.rows(), 0.0);
  for (size_t i = 0; i < features.rows(); ++i) {
    auto h = features.row(i);
    double acc = 0.0;
    for (size_t j = 0; j < h.size(); ++j) acc += h[j] * spec.attention(j, cls);
    a[i] = acc;
  }
  return a;
}

const Matrix& require_features(const Matrix* features, const PoolingSpec& spec, size_t frames) {
  if (features == nullptr) throw Error("attention pooling requires attention features");
  if (features->rows() != frames || features->cols() != spec.attention.rows())
    throw Error("attention pooling: feature shape mismatch");
  return *features;
}

std::vector<double> floored_copy(std::span<const double> y) {
  std::vector<double> out(y.size());
  std::transform(y.begin(), y.end(), out.begin(), floored);
  return out;
}

}  // namespace

double pool_forward(std::span<const double> frame_probs, const PoolingSpec& spec, size_t cls,
                    const Matrix* attention_features) {
  check_input(frame_probs);
  const size_t frames = frame_probs.size();
  switch (spec.kind) {
    case PoolKind::Max:
      return *std::max_element(frame_probs.begin(), frame_probs.end());
    case PoolKind::Mean: {
      double acc = 0.0;
      for (double v : frame_probs) acc += v;
      return acc / static_cast<double>(frames);
    }
    case PoolKind::Linear: {
      auto y = floored_copy(frame_probs);
      double num = 0.0, den = 0.0;
      for (double v : y) {
        num += v * v;
        den += v;
      }
      return num / den;
    }
    case PoolKind::Auto: {
      auto y = floored_copy(frame_probs);
      const double beta = spec.beta_for(cls);
      std::vector<double> logits(frames);
      for (size_t i = 0; i < frames; ++i) logits[i] = beta * y[i];
      return weighted_mean(y, softmax(logits));
    }
    case PoolKind::Power: {
      auto y = floored_copy(frame_probs);
      const double n = spec.n_for(cls);
      std::vector<double> logits(frames);
      for (size_t i = 0; i < frames; ++i) logits[i] = n * std::log(y[i]);
      return weighted_mean(y, softmax(logits));
    }
    case PoolKind::Attention: {
      const Matrix& h = require_features(attention_features, spec, frames);
      return weighted_mean(frame_probs, softmax(attention_logits(h, spec, cls)));
    }
  }
  throw Error("pool_forward: unknown kind");
}

PoolResult pool_backward(std::span<const double> frame_probs, const PoolingSpec& spec,
                         double upstream, size_t cls, const Matrix* attention_features) {
  check_input(frame_probs);
  if (!std::isfinite(upstream)) throw NumericalError("pool_backward: non-finite upstream gradient");
  const size_t frames = frame_probs.size();
  PoolResult out;
  out.frame_grads.assign(frames, 0.0);

  switch (spec.kind) {
    case PoolKind::Max: {
      // Subgradient: all mass on the first maximal frame.
      auto it = std::max_element(frame_probs.begin(), frame_probs.end());
      out.clip_prob = *it;
      out.frame_grads[static_cast<size_t>(it - frame_probs.begin())] = upstream;
      return out;
    }
    case PoolKind::Mean: {
      double acc = 0.0;
      for (double v : frame_probs) acc += v;
      out.clip_prob = acc / static_cast<double>(frames);
      std::fill(out.frame_grads.begin(), out.frame_grads.end(),
                upstream / static_cast<double>(frames));
      return out;
    }
    case PoolKind::Linear: {
      auto y = floored_copy(frame_probs);
      double num = 0.0, den = 0.0;
      for (double v : y) {
        num += v * v;
        den += v;
      }
      const double yc = num / den;
      out.clip_prob = yc;
      for (size_t i = 0; i < frames; ++i)
        if (frame_probs[i] >= kProbFloor) out.frame_grads[i] = upstream * (2.0 * y[i] - yc) / den;
      return out;
    }
    case PoolKind::Auto: {
      // d y_c / d y_i = s_i (1 + beta (y_i - y_c));  d y_c / d beta = sum_i s_i y_i (y_i - y_c)
      auto y = floored_copy(frame_probs);
      const double beta = spec.beta_for(cls);
      std::vector<double> logits(frames);
      for (size_t i = 0; i < frames; ++i) logits[i] = beta * y[i];
      auto s = softmax(logits);
      const double yc = weighted_mean(y, s);
      out.clip_prob = yc;
      double d_beta = 0.0;
      for (size_t i = 0; i < frames; ++i) {
        if (frame_probs[i] >= kProbFloor)
          out.frame_grads[i] = upstream * s[i] * (1.0 + beta * (y[i] - yc));
        d_beta += s[i] * y[i] * (y[i] - yc);
      }
      out.d_beta = upstream * d_beta;
      return out;
    }
    case PoolKind::Power: {
      // With s_i = y_i^n / sum_j y_j^n:
      //   d y_c / d y_i = s_i ((n + 1) - n y_c / y_i)
      //                 = ((n + 1) y_i^n - n y_i^(n-1) y_c) / sum_j y_j^n
      //   d y_c / d n   = sum_i s_i ln(y_i) (y_i - y_c)
      // The second form of d/dn follows from d(y_i^n)/dn = y_i^n ln(y_i)
      // applied to numerator and denominator of the ratio.
      auto y = floored_copy(frame_probs);
      const double n = spec.n_for(cls);
      std::vector<double> logs(frames), logits(frames);
      for (size_t i = 0; i < frames; ++i) {
        logs[i] = std::log(y[i]);
        logits[i] = n * logs[i];
      }
      auto s = softmax(logits);
      const double yc = weighted_mean(y, s);
      out.clip_prob = yc;
      double d_n = 0.0;
      for (size_t i = 0; i < frames; ++i) {
        if (frame_probs[i] >= kProbFloor)
          out.frame_grads[i] = upstream * s[i] * ((n + 1.0) * y[i] - n * yc) / y[i];
        d_n += s[i] * logs[i] * (y[i] - yc);
      }
      out.d_n = upstream * d_n;
      return out;
    }
    case PoolKind::Attention: {
      // d y_c / d y_i = s_i;  d y_c / d a_i = s_i (y_i - y_c)
      const Matrix& h = require_features(attention_features, spec, frames);
      auto s = softmax(attention_logits(h, spec, cls));
      const double yc = weighted_mean(frame_probs, s);
      out.clip_prob = yc;
      const size_t hidden = h.cols();
      out.d_attention.assign(hidden, 0.0);
      out.d_features = Matrix(frames, hidden);
      for (size_t i = 0; i < frames; ++i) {
        out.frame_grads[i] = upstream * s[i];
        const double da = upstream * s[i] * (frame_probs[i] - yc);
        auto hi = h.row(i);
        auto dfi = out.d_features.row(i);
        for (size_t j = 0; j < hidden; ++j) {
          out.d_attention[j] += da * hi[j];
          dfi[j] = da * spec.attention(j, cls);
        }
      }
      return out;
    }
  }
  throw Error("pool_backward: unknown kind");
}

double power_threshold(double n) { return n / (n + 1.0); }

}  // namespace milpool
