// src/frame_model.cpp

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

#include "milpool/frame_model.hpp"

#include <cmath>
#include <cstring>

namespace milpool {

void ModelConfig::validate() const {
  if (input_dim == 0 || num_classes == 0 || hidden_dims.empty())
    throw DataError("model config: dimensions must be >= 1");
  for (size_t h : hidden_dims)
    if (h == 0) throw DataError("model config: hidden widths must be >= 1");
}

size_t parameter_count(const ModelParams& params) {
  size_t count = 0;
  for_each_block(params, true, [&](const std::string&, ParamGroup, auto values) { count += values.size(); });
  return count;
}

std::vector<double> flatten(const ModelParams& params) {
  std::vector<double> out;
  out.reserve(parameter_count(params));
  for_each_block(params, true, [&](const std::string&, ParamGroup, auto values) {
    out.insert(out.end(), values.begin(), values.end());
  });
  return out;
}

void unflatten(ModelParams& params, std::span<const double> values) {
  if (values.size() != parameter_count(params)) throw Error("unflatten: length mismatch");
  size_t offset = 0;
  for_each_block(params, true, [&](const std::string&, ParamGroup, std::span<double> block) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(offset), block.size(), block.begin());
    offset += block.size();
  });
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams out = params;
  for_each_block(out, false, [](const std::string&, ParamGroup, std::span<double> block) {
    std::fill(block.begin(), block.end(), 0.0);
  });
  return out;
}

void accumulate(ModelParams& into, const ModelParams& grads, double scale) {
  std::vector<std::span<const double>> src;
  for_each_block(grads, false, [&](const std::string&, ParamGroup, auto block) { src.push_back(block); });
  size_t k = 0;
  for_each_block(into, false, [&](const std::string&, ParamGroup, std::span<double> block) {
    const auto& s = src.at(k++);
    if (s.size() != block.size()) throw Error("accumulate: shape mismatch");
    for (size_t i = 0; i < block.size(); ++i) block[i] += scale * s[i];
  });
}

bool all_finite(const ModelParams& params) {
  bool ok = true;
  for_each_block(params, false, [&](const std::string&, ParamGroup, auto block) {
    for (double v : block) ok = ok && std::isfinite(v);
  });
  return ok;
}

bool bitwise_equal(const ModelParams& a, const ModelParams& b) {
  std::vector<std::span<const double>> lhs, rhs;
  for_each_block(a, false, [&](const std::string&, ParamGroup, auto block) { lhs.push_back(block); });
  for_each_block(b, false, [&](const std::string&, ParamGroup, auto block) { rhs.push_back(block); });
  if (lhs.size() != rhs.size() || a.pooling.kind != b.pooling.kind) return false;
  for (size_t i = 0; i < lhs.size(); ++i) {
    if (lhs[i].size() != rhs[i].size()) return false;
    if (std::memcmp(lhs[i].data(), rhs[i].data(), lhs[i].size() * sizeof(double)) != 0) return false;
  }
  return true;
}

namespace {

DenseLayer make_layer(size_t fan_in, size_t fan_out, Rng& rng) {
  DenseLayer layer{Matrix(fan_in, fan_out), std::vector<double>(fan_out, 0.0)};
  const double stddev = std::sqrt(1.0 / static_cast<double>(fan_in));
  for (double& w : layer.weights.values()) w = rng.gaussian(0.0, stddev);
  return layer;
}

enum InitStream : uint64_t { kTrunkStream = 1, kClassStream, kConfidenceStream, kAttentionStream };

double leaky(double x) { return x > 0.0 ? x : kLeakySlope * x; }
double leaky_grad(double x) { return x > 0.0 ? 1.0 : kLeakySlope; }

Matrix affine(const Matrix& x, const DenseLayer& layer) {
  Matrix out = matmul(x, layer.weights);
  for (size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (size_t c = 0; c < row.size(); ++c) row[c] += layer.bias[c];
  }
  return out;
}

std::vector<double> column_sums(const Matrix& m) {
  std::vector<double> out(m.cols(), 0.0);
  for (size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (size_t c = 0; c < row.size(); ++c) out[c] += row[c];
  }
  return out;
}

}  // namespace

ModelParams init_params(const ModelConfig& config) {
  config.validate();
  ModelParams params;
  size_t fan_in = config.input_dim * config.context_window();
  for (size_t l = 0; l < config.hidden_dims.size(); ++l) {
    Rng rng = Rng::substream(config.seed, {kTrunkStream, l});
    params.hidden.push_back(make_layer(fan_in, config.hidden_dims[l], rng));
    fan_in = config.hidden_dims[l];
  }
  Rng class_rng = Rng::substream(config.seed, {kClassStream});
  Rng conf_rng = Rng::substream(config.seed, {kConfidenceStream});
  params.class_head = make_layer(fan_in, config.num_classes, class_rng);
  params.confidence_head = make_layer(fan_in, config.num_classes, conf_rng);
  params.pooling = PoolingSpec::make(config.pooling, config.num_classes, fan_in, config.n_sharing,
                                     config.n_init, config.beta_init, config.allow_negative_n);
  Rng att_rng = Rng::substream(config.seed, {kAttentionStream});
  const double att_std = std::sqrt(1.0 / static_cast<double>(fan_in));
  for (double& w : params.pooling.attention.values()) w = att_rng.gaussian(0.0, att_std);
  return params;
}

LossGrads LossGrads::zeros(size_t frames, size_t classes) {
  return {Matrix(frames, classes), std::vector<double>(classes, 0.0), Matrix(frames, classes)};
}

void LossGrads::add(const LossGrads& other, double scale) {
  add_in_place(frame, other.frame, scale);
  add_in_place(confidence, other.confidence, scale);
  if (clip.size() != other.clip.size()) throw Error("LossGrads::add: shape mismatch");
  for (size_t k = 0; k < clip.size(); ++k) clip[k] += scale * other.clip[k];
}

Matrix build_context(const Matrix& features, size_t radius) {
  const size_t frames = features.rows();
  const size_t dim = features.cols();
  const size_t window = 2 * radius + 1;
  Matrix ctx(frames, dim * window, 0.0);
  for (size_t t = 0; t < frames; ++t) {
    auto out = ctx.row(t);
    for (size_t k = 0; k < window; ++k) {
      const long src = static_cast<long>(t) + static_cast<long>(k) - static_cast<long>(radius);
      if (src < 0 || src >= static_cast<long>(frames)) continue;
      auto in = features.row(static_cast<size_t>(src));
      std::copy(in.begin(), in.end(), out.begin() + static_cast<std::ptrdiff_t>(k * dim));
    }
  }
  return ctx;
}

PredictionBundle forward(const Matrix& features, const ModelParams& params) {
  if (params.hidden.empty()) throw Error("forward: model has no hidden layers");
  const size_t fan_in = params.hidden[0].weights.rows();
  if (features.cols() == 0 || fan_in % features.cols() != 0)
    throw Error("forward: feature dimension does not match the first layer");
  const size_t window = fan_in / features.cols();
  if (window % 2 == 0) throw Error("forward: context window must be odd");
  if (features.rows() < window) throw Error("forward: clip shorter than the context window");
  features.check_finite("input features");

  PredictionBundle out;
  out.trace.context = build_context(features, window / 2);
  const Matrix* x = &out.trace.context;
  for (const auto& layer : params.hidden) {
    out.trace.pre.push_back(affine(*x, layer));
    out.trace.post.push_back(map_values(out.trace.pre.back(), leaky));
    x = &out.trace.post.back();
  }
  out.hidden = *x;
  out.frame_probs = map_values(affine(out.hidden, params.class_head), sigmoid);
  out.confidence = map_values(affine(out.hidden, params.confidence_head), sigmoid);
  if (!out.frame_probs.all_finite() || !out.confidence.all_finite())
    throw NumericalError("forward: non-finite activations");

  const size_t classes = out.frame_probs.cols();
  out.clip_probs.resize(classes);
  for (size_t k = 0; k < classes; ++k) {
    auto column = out.frame_probs.col(k);
    out.clip_probs[k] = pool_forward(column, params.pooling, k, &out.hidden);
  }
  return out;
}

ModelParams backward(const Matrix& features, const ModelParams& params,
                     const PredictionBundle& bundle, const LossGrads& loss_grads) {
  const size_t frames = bundle.frame_probs.rows();
  const size_t classes = bundle.frame_probs.cols();
  if (features.rows() != frames || !loss_grads.frame.same_shape(bundle.frame_probs) ||
      !loss_grads.confidence.same_shape(bundle.confidence) || loss_grads.clip.size() != classes ||
      bundle.trace.post.size() != params.hidden.size())
    throw Error("backward: shape mismatch");

  ModelParams grads = zeros_like(params);

  // dL/dy_f, including the clip path through pooling.
  Matrix d_frame = loss_grads.frame;
  Matrix d_hidden(frames, bundle.hidden.cols(), 0.0);
  for (size_t k = 0; k < classes; ++k) {
    if (loss_grads.clip[k] == 0.0) continue;
    auto column = bundle.frame_probs.col(k);
    PoolResult pr = pool_backward(column, params.pooling, loss_grads.clip[k], k, &bundle.hidden);
    for (size_t t = 0; t < frames; ++t) d_frame(t, k) += pr.frame_grads[t];
    const size_t idx = params.pooling.param_index(k);
    grads.pooling.n[idx] += pr.d_n;
    grads.pooling.beta[idx] += pr.d_beta;
    if (params.pooling.kind == PoolKind::Attention) {
      for (size_t j = 0; j < pr.d_attention.size(); ++j) grads.pooling.attention(j, k) += pr.d_attention[j];
      add_in_place(d_hidden, pr.d_features);
    }
  }

  // Through the sigmoids of both heads.
  Matrix d_class_logit(frames, classes), d_conf_logit(frames, classes);
  for (size_t i = 0; i < frames * classes; ++i) {
    const double y = bundle.frame_probs.values()[i];
    const double c = bundle.confidence.values()[i];
    d_class_logit.values()[i] = d_frame.values()[i] * y * (1.0 - y);
    d_conf_logit.values()[i] = loss_grads.confidence.values()[i] * c * (1.0 - c);
  }
  grads.class_head.weights = matmul_tn(bundle.hidden, d_class_logit);
  grads.class_head.bias = column_sums(d_class_logit);
  grads.confidence_head.weights = matmul_tn(bundle.hidden, d_conf_logit);
  grads.confidence_head.bias = column_sums(d_conf_logit);
  add_in_place(d_hidden, matmul_nt(d_class_logit, params.class_head.weights));
  add_in_place(d_hidden, matmul_nt(d_conf_logit, params.confidence_head.weights));

  // Down the trunk.
  Matrix d_post = std::move(d_hidden);
  for (size_t l = params.hidden.size(); l-- > 0;) {
    const Matrix& pre = bundle.trace.pre[l];
    Matrix d_pre(pre.rows(), pre.cols());
    for (size_t i = 0; i < pre.size(); ++i)
      d_pre.values()[i] = d_post.values()[i] * leaky_grad(pre.values()[i]);
    const Matrix& input = l == 0 ? bundle.trace.context : bundle.trace.post[l - 1];
    grads.hidden[l].weights = matmul_tn(input, d_pre);
    grads.hidden[l].bias = column_sums(d_pre);
    if (l > 0) d_post = matmul_nt(d_pre, params.hidden[l].weights);
  }
  return grads;
}

bool TrainableGroups::allows(ParamGroup g) const {
  switch (g) {
    case ParamGroup::Trunk: return trunk;
    case ParamGroup::ClassHead: return class_head;
    case ParamGroup::ConfidenceHead: return confidence_head;
    case ParamGroup::Pooling: return pooling;
  }
  return false;
}

void optimizer_step(ModelParams& params, const ModelParams& grads, AdamState& state,
                    const AdamConfig& config, const TrainableGroups& groups) {
  const size_t count = parameter_count(params);
  if (parameter_count(grads) != count || grads.pooling.kind != params.pooling.kind)
    throw Error("optimizer_step: gradient shape mismatch");
  if (state.m.empty()) {
    state.m.assign(count, 0.0);
    state.v.assign(count, 0.0);
  }
  if (state.m.size() != count || state.v.size() != count)
    throw Error("optimizer_step: optimizer state shape mismatch");
  if (!all_finite(grads)) throw NumericalError("optimizer_step: non-finite gradients");

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(config.beta1, t);
  const double bias2 = 1.0 - std::pow(config.beta2, t);

  std::vector<std::span<const double>> grad_blocks;
  for_each_block(grads, true, [&](const std::string&, ParamGroup, auto block) { grad_blocks.push_back(block); });

  size_t offset = 0;
  size_t b = 0;
  for_each_block(params, true, [&](const std::string&, ParamGroup group, std::span<double> block) {
    const auto& g = grad_blocks[b++];
    if (groups.allows(group)) {
      const double lr = group == ParamGroup::Pooling ? config.pooling_lr : config.lr;
      for (size_t i = 0; i < block.size(); ++i) {
        double& m = state.m[offset + i];
        double& v = state.v[offset + i];
        m = config.beta1 * m + (1.0 - config.beta1) * g[i];
        v = config.beta2 * v + (1.0 - config.beta2) * g[i] * g[i];
        const double m_hat = m / bias1;
        const double v_hat = v / bias2;
        block[i] -= lr * m_hat / (std::sqrt(v_hat) + config.eps);
      }
    }
    offset += block.size();
  });
  params.pooling.clamp();
  if (!all_finite(params)) throw NumericalError("optimizer_step: parameters became non-finite");
}

}  // namespace milpool
