// include/milpool/frame_model.hpp

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

#ifndef MILPOOL_FRAME_MODEL_HPP_
#define MILPOOL_FRAME_MODEL_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "milpool/numerics.hpp"
#include "milpool/pooling.hpp"

namespace milpool {

struct ModelConfig {
  size_t input_dim = 32;
  std::vector<size_t> hidden_dims{32};
  /// The first layer sees frames [t - r, t + r], zero-padded at clip edges.
  size_t context_radius = 1;
  size_t num_classes = 10;
  uint64_t seed = 0;

  PoolKind pooling = PoolKind::Power;
  Sharing n_sharing = Sharing::Shared;
  double n_init = 1.2;
  double beta_init = 0.0;
  bool allow_negative_n = false;

  size_t context_window() const { return 2 * context_radius + 1; }
  size_t final_hidden_dim() const { return hidden_dims.back(); }
  void validate() const;
};

/// Dense affine map; weights are (fan_in x fan_out), applied as x * W + b.
struct DenseLayer {
  Matrix weights;
  std::vector<double> bias;

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Which optimizer group a parameter block belongs to. Used for freezing.
enum class ParamGroup { Trunk, ClassHead, ConfidenceHead, Pooling };

/// All trainable weights of one model (student or teacher). A gradient
/// record has the same type and shape.
struct ModelParams {
  std::vector<DenseLayer> hidden;
  DenseLayer class_head;
  DenseLayer confidence_head;
  PoolingSpec pooling;
};

/// Visits every parameter block as (name, group, span). With
/// `trainable_only`, pooling fields of inactive kinds are skipped (n only for
/// Power, beta only for Auto, attention only for Attention); otherwise all
/// pooling fields are visited in the fixed order n, beta, attention. This
/// fixed order is the checkpoint blob layout.
template <class Params, class Fn>
void for_each_block(Params& params, bool trainable_only, Fn&& fn) {
  for (size_t l = 0; l < params.hidden.size(); ++l) {
    auto& layer = params.hidden[l];
    const std::string prefix = "hidden" + std::to_string(l);
    fn(prefix + ".weights", ParamGroup::Trunk, layer.weights.values());
    fn(prefix + ".bias", ParamGroup::Trunk, std::span(layer.bias));
  }
  fn(std::string("class_head.weights"), ParamGroup::ClassHead, params.class_head.weights.values());
  fn(std::string("class_head.bias"), ParamGroup::ClassHead, std::span(params.class_head.bias));
  fn(std::string("confidence_head.weights"), ParamGroup::ConfidenceHead,
     params.confidence_head.weights.values());
  fn(std::string("confidence_head.bias"), ParamGroup::ConfidenceHead,
     std::span(params.confidence_head.bias));
  const PoolKind kind = params.pooling.kind;
  if (!trainable_only || kind == PoolKind::Power)
    fn(std::string("pooling.n"), ParamGroup::Pooling, std::span(params.pooling.n));
  if (!trainable_only || kind == PoolKind::Auto)
    fn(std::string("pooling.beta"), ParamGroup::Pooling, std::span(params.pooling.beta));
  if (!trainable_only || kind == PoolKind::Attention)
    fn(std::string("pooling.attention"), ParamGroup::Pooling, params.pooling.attention.values());
}

size_t parameter_count(const ModelParams& params);
std::vector<double> flatten(const ModelParams& params);
void unflatten(ModelParams& params, std::span<const double> values);
/// Same structure, all values zero (pooling kind and bounds copied).
ModelParams zeros_like(const ModelParams& params);
void accumulate(ModelParams& into, const ModelParams& grads, double scale = 1.0);
bool all_finite(const ModelParams& params);
bool bitwise_equal(const ModelParams& a, const ModelParams& b);

ModelParams init_params(const ModelConfig& config);

/// Intermediate values needed by backward.
struct ForwardTrace {
  Matrix context;                 // T x (F * window)
  std::vector<Matrix> pre;        // per hidden layer, before activation
  std::vector<Matrix> post;       // per hidden layer, after activation
};

struct PredictionBundle {
  Matrix frame_probs;             // T x C
  std::vector<double> clip_probs; // C
  Matrix confidence;              // T x C
  Matrix hidden;                  // T x H, final hidden layer
  ForwardTrace trace;
};

/// Gradients of a scalar loss w.r.t. the three model outputs.
struct LossGrads {
  Matrix frame;                   // T x C
  std::vector<double> clip;       // C
  Matrix confidence;              // T x C

  static LossGrads zeros(size_t frames, size_t classes);
  void add(const LossGrads& other, double scale = 1.0);
};

inline constexpr double kLeakySlope = 0.01;

/// Builds the T x (F * window) temporal context matrix.
Matrix build_context(const Matrix& features, size_t radius);

PredictionBundle forward(const Matrix& features, const ModelParams& params);

ModelParams backward(const Matrix& features, const ModelParams& params,
                     const PredictionBundle& bundle, const LossGrads& loss_grads);

struct AdamConfig {
  double lr = 1e-3;
  /// Learning rate for pooling parameters (n, beta, attention head).
  double pooling_lr = 5e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  uint64_t step = 0;
};

/// Which parameter groups the optimizer may move.
struct TrainableGroups {
  bool trunk = true;
  bool class_head = true;
  bool confidence_head = true;
  bool pooling = true;

  bool allows(ParamGroup g) const;
  static TrainableGroups all() { return {}; }
  static TrainableGroups only_confidence() { return {false, false, true, false}; }
  static TrainableGroups all_but_confidence() { return {true, true, false, true}; }
};

/// One Adam step over the trainable blocks, followed by the pooling clamp.
/// Frozen blocks are left untouched bit for bit, including their moments.
void optimizer_step(ModelParams& params, const ModelParams& grads, AdamState& state,
                    const AdamConfig& config, const TrainableGroups& groups = TrainableGroups::all());

}  // namespace milpool

#endif  // MILPOOL_FRAME_MODEL_HPP_
