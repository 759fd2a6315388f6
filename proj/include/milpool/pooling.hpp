// include/milpool/pooling.hpp

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

#ifndef MILPOOL_POOLING_HPP_
#define MILPOOL_POOLING_HPP_

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "milpool/numerics.hpp"

namespace milpool {

// Clip-level aggregation of frame probabilities (multiple instance pooling).
//
// Every kind except Attention is a self-weighted average
//
//   y_c = sum_i w_i * y_i / sum_i w_i
//
// with w_i = 1 (Mean), y_i (Linear), exp(beta * y_i) (Auto) or y_i^n (Power).
// Attention takes w_i = exp(a_i) with a_i an affine score of the frame's
// hidden state. Max is the n -> infinity limit of Power.
//
// The weights are always evaluated in log space with the maximum subtracted,
// so large n or beta never overflow.

enum class PoolKind { Max, Mean, Linear, Auto, Attention, Power };
enum class Sharing { Shared, PerClass };

std::string to_string(PoolKind kind);
std::string to_string(Sharing sharing);
PoolKind parse_pool_kind(std::string_view name);
Sharing parse_sharing(std::string_view name);

/// Probabilities are floored at this value before y^n and log(y) are taken.
inline constexpr double kProbFloor = 1e-7;
inline constexpr double kDefaultMaxExponent = 20.0;
/// Lower bound on n is -1 + kNegativeExponentMargin when negative n is allowed.
inline constexpr double kNegativeExponentMargin = 0.05;

/// Which aggregator is active, plus its trainable parameters.
///
/// n and beta hold one value (Shared) or one value per class (PerClass).
/// `attention` is H x C; column k scores frames for class k.
struct PoolingSpec {
  PoolKind kind = PoolKind::Power;
  Sharing sharing = Sharing::Shared;
  std::vector<double> n{1.2};
  std::vector<double> beta{0.0};
  Matrix attention;
  double n_min = 0.0;
  double n_max = kDefaultMaxExponent;

  static PoolingSpec make(PoolKind kind, size_t num_classes, size_t hidden_dim,
                          Sharing sharing = Sharing::Shared, double n_init = 1.2,
                          double beta_init = 0.0, bool allow_negative_n = false);

  double n_for(size_t cls) const { return n.size() == 1 ? n[0] : n.at(cls); }
  double beta_for(size_t cls) const { return beta.size() == 1 ? beta[0] : beta.at(cls); }
  size_t param_index(size_t cls) const { return sharing == Sharing::Shared ? 0 : cls; }

  /// Forces n into [n_min, n_max]; applied after every optimizer step.
  void clamp();
  void validate(size_t num_classes) const;
};

/// Output of pool_backward for one class.
struct PoolResult {
  double clip_prob = 0.0;
  /// upstream * d y_c / d y_f(i)
  std::vector<double> frame_grads;
  double d_n = 0.0;
  double d_beta = 0.0;
  /// Gradient w.r.t. this class's attention column (length H), Attention only.
  std::vector<double> d_attention;
  /// Gradient w.r.t. the attention features (T x H), Attention only.
  Matrix d_features;
};

double pool_forward(std::span<const double> frame_probs, const PoolingSpec& spec, size_t cls = 0,
                    const Matrix* attention_features = nullptr);

PoolResult pool_backward(std::span<const double> frame_probs, const PoolingSpec& spec,
                         double upstream, size_t cls = 0,
                         const Matrix* attention_features = nullptr);

/// Frames above power_threshold(n) * y_c get a positive gradient.
double power_threshold(double n);

}  // namespace milpool

#endif  // MILPOOL_POOLING_HPP_
