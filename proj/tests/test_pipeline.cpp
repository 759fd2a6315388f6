// tests/test_pipeline.cpp

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

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "milpool/pipeline.hpp"

using namespace milpool;
namespace fs = std::filesystem;

namespace {

const Dataset& small_dataset() {
  static const Dataset d = [] {
    DatasetSpec s = DatasetSpec::defaults();
    s.strong_count = 12;
    s.weak_count = 8;
    s.unlabeled_count = 12;
    s.validation_count = 6;
    s.frames_per_clip = 100;
    s.feature_dim = 16;
    s.seed = 3;
    return generate_dataset(s);
  }();
  return d;
}

TrainConfig small_config() {
  TrainConfig c;
  c.model.input_dim = 16;
  c.model.hidden_dims = {12};
  c.model.num_classes = 10;
  c.model.context_radius = 1;
  c.model.seed = 4;
  c.classification_epochs = 2;
  c.confidence_epochs = 2;
  c.stage2_epochs = 2;
  c.batch_size = 8;
  c.seed = 5;
  c.noise.shift_std_frames = 6.0;
  return c;
}

fs::path tmp_dir(const std::string& name) {
  const fs::path p = fs::path(MILPOOL_TEST_TMP) / "pipeline" / name;
  fs::remove_all(p);
  fs::create_directories(p.parent_path());
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

double mean_confidence_on_strong(const ModelParams& p, const std::vector<const FeatureClip*>& clips) {
  double sum = 0.0;
  size_t n = 0;
  for (const FeatureClip* c : clips) {
    if (c->targets.availability != Availability::Strong) continue;
    const Matrix conf = forward(c->features, p).confidence;
    for (double v : conf.values()) sum += v, ++n;
  }
  return sum / static_cast<double>(n);
}

double clip_loss(const ModelParams& p, const std::vector<const FeatureClip*>& clips) {
  double sum = 0.0;
  size_t n = 0;
  for (const FeatureClip* c : clips) {
    if (c->targets.availability == Availability::Unlabeled) continue;
    const auto b = forward(c->features, p);
    for (size_t k = 0; k < b.clip_probs.size(); ++k) sum += bce(b.clip_probs[k], c->targets.clip[k]), ++n;
  }
  return sum / static_cast<double>(n);
}

}  // namespace

TEST_CASE("confidence phase leaves everything but the confidence head untouched") {
  const auto clips = small_dataset().training_clips();
  TrainConfig a = small_config();
  a.confidence_epochs = 0;
  const StageResult only_a = train_stage1(clips, a);
  const StageResult both = train_stage1(clips, small_config());

  CHECK(both.student.class_head == only_a.student.class_head);
  CHECK(both.student.hidden == only_a.student.hidden);
  CHECK(both.student.pooling.n == only_a.student.pooling.n);
  CHECK(both.teacher.params.class_head == only_a.teacher.params.class_head);
  CHECK_FALSE(both.student.confidence_head == only_a.student.confidence_head);
  // The teacher follows the student confidence head exactly.
  CHECK(both.teacher.params.confidence_head == both.student.confidence_head);

  REQUIRE(both.report.epochs.size() == 4);
  CHECK(both.report.epochs[0].phase == "classification");
  CHECK(both.report.epochs[3].phase == "confidence");
  CHECK(both.report.n_trajectory("classification").size() == 2);
  CHECK(both.report.epochs[0].confidence == 0.0);
  CHECK(both.report.epochs[3].confidence > 0.0);
}

TEST_CASE("training is independent of the thread count") {
  const auto clips = small_dataset().training_clips();
  TrainConfig c = small_config();
  const StageResult one = train_stage1(clips, c);
  c.threads = 3;
  const StageResult three = train_stage1(clips, c);
  CHECK(bitwise_equal(one.student, three.student));
  CHECK(bitwise_equal(one.teacher.params, three.teacher.params));
  CHECK(same_bits(one.report.step_losses, three.report.step_losses));
}

TEST_CASE("seed changes the run") {
  const auto clips = small_dataset().training_clips();
  TrainConfig c = small_config();
  c.confidence_epochs = 0;
  const StageResult a = train_stage1(clips, c);
  c.seed = 6;
  const StageResult b = train_stage1(clips, c);
  CHECK_FALSE(bitwise_equal(a.student, b.student));
}

TEST_CASE("interrupted runs resume to identical bytes") {
  const auto clips = small_dataset().training_clips();
  const fs::path full = tmp_dir("resume_full"), part = tmp_dir("resume_part");
  TrainConfig c = small_config();
  train_stage1(clips, c, full);

  c.stop_after_epochs = 1;
  CHECK_FALSE(train_stage1(clips, c, part).completed);
  CHECK_FALSE(train_stage1(clips, c, part).completed);
  CHECK_FALSE(train_stage1(clips, c, part).completed);
  c.stop_after_epochs.reset();
  CHECK(train_stage1(clips, c, part).completed);
  for (const char* f : {"student.ckpt", "teacher.ckpt", "losses.csv", "n_trajectory.csv", "report.json", "state.ckpt"})
    CHECK_MESSAGE(slurp(full / f) == slurp(part / f), f);

  // A different config refuses to resume from the same directory.
  TrainConfig other = small_config();
  other.loss.lambda = 0.5;
  CHECK_THROWS_AS(train_stage1(clips, other, part), DataError);
}

TEST_CASE("pseudo-label revision rules") {
  const Dataset& d = small_dataset();
  const auto clips = d.training_clips();
  TrainConfig c = small_config();
  const StageResult s1 = train_stage1(clips, c);
  const PseudoLabelSet pl = generate_pseudo_labels(s1.teacher.params, clips);
  REQUIRE(pl.entries.size() == clips.size());
  for (size_t i = 0; i < clips.size(); ++i) {
    const FeatureClip& clip = *clips[i];
    const PseudoLabel& e = pl.entries[i];
    CHECK(e.clip_index == i);
    switch (clip.targets.availability) {
      case Availability::Strong:
        CHECK(e.provenance == Provenance::StrongGroundTruth);
        CHECK(e.targets == clip.targets.frame);
        for (double v : e.confidence.values()) CHECK(v == 1.0);
        break;
      case Availability::Weak: {
        CHECK(e.provenance == Provenance::WeakRevised);
        const auto raw = forward(clip.features, s1.teacher.params);
        for (size_t t = 0; t < e.targets.rows(); ++t)
          for (size_t k = 0; k < e.targets.cols(); ++k) {
            if (clip.targets.clip[k] == 0.0) {
              CHECK(e.targets(t, k) == 0.0);
              CHECK(e.confidence(t, k) == 1.0);
            } else {
              CHECK(e.targets(t, k) == raw.frame_probs(t, k));
              CHECK(e.confidence(t, k) == raw.confidence(t, k));
            }
          }
        break;
      }
      case Availability::Unlabeled: {
        CHECK(e.provenance == Provenance::UnlabeledRaw);
        const auto raw = forward(clip.features, s1.teacher.params);
        CHECK(e.targets == raw.frame_probs);
        CHECK(e.confidence == raw.confidence);
        for (double v : e.revised.values()) CHECK(v == 0.0);
        break;
      }
    }
  }
  // Threads do not change the labels.
  const PseudoLabelSet again = generate_pseudo_labels(s1.teacher.params, clips, 3);
  for (size_t i = 0; i < clips.size(); ++i) CHECK(again.entries[i].targets == pl.entries[i].targets);
}

TEST_CASE("stage-two target rules") {
  PseudoLabelSet pl;
  PseudoLabel e;
  e.targets = Matrix::from_rows({{0.95, 0.3}, {0.6, 0.0}});
  e.confidence = Matrix::from_rows({{0.5, 0.2}, {0.9, 1.0}});
  e.revised = Matrix::from_rows({{0, 0}, {0, 1}});
  pl.entries.push_back(e);

  const Stage2Plan conf = build_stage2_targets(pl, Stage2Weighting::Confidence, 0.5);
  CHECK(conf.per_clip[0].weights == Matrix::from_rows({{0.75, 0.6}, {0.95, 1.0}}));
  CHECK(conf.per_clip[0].targets == e.targets);
  CHECK(conf.discarded_frames == 0);

  const Stage2Plan p09 = build_stage2_targets(pl, Stage2Weighting::Prob09, 1.0);
  CHECK(p09.discarded_frames == 2);
  CHECK(p09.per_clip[0].targets(0, 0) == 1.0);
  CHECK(p09.per_clip[0].weights == Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}}));

  const Stage2Plan p05 = build_stage2_targets(pl, Stage2Weighting::Prob05, 1.0);
  CHECK(p05.discarded_frames == 1);
  CHECK(p05.per_clip[0].weights == Matrix::from_rows({{0.5, 0.0}, {0.9, 1.0}}));

  const Stage2Plan pw = build_stage2_targets(pl, Stage2Weighting::ProbWeighted, 1.0);
  CHECK(pw.per_clip[0].weights == Matrix::from_rows({{0.95, 0.3}, {0.6, 1.0}}));

  const Stage2Plan uw = build_stage2_targets(pl, Stage2Weighting::Unweighted, 1.0);
  for (double v : uw.per_clip[0].weights.values()) CHECK(v == 1.0);

  const Stage2Plan zero = build_stage2_targets(pl, Stage2Weighting::Confidence, 0.0);
  for (double v : zero.per_clip[0].weights.values()) CHECK(v == 1.0);
  CHECK_THROWS_AS(build_stage2_targets(pl, Stage2Weighting::Confidence, 1.2), DataError);
}

TEST_CASE("alpha zero matches unweighted retraining at every step") {
  const auto clips = small_dataset().training_clips();
  TrainConfig c = small_config();
  const StageResult s1 = train_stage1(clips, c);
  const PseudoLabelSet pl = generate_pseudo_labels(s1.teacher.params, clips);

  c.loss.alpha = 0.0;
  c.weighting = Stage2Weighting::Confidence;
  const StageResult zero = train_stage2(clips, pl, s1.student, c);
  c.weighting = Stage2Weighting::Unweighted;
  const StageResult plain = train_stage2(clips, pl, s1.student, c);
  REQUIRE(zero.report.step_losses.size() == plain.report.step_losses.size());
  double worst = 0.0;
  for (size_t i = 0; i < zero.report.step_losses.size(); ++i)
    worst = std::max(worst, std::abs(zero.report.step_losses[i] - plain.report.step_losses[i]));
  CHECK(worst <= 1e-12);
  CHECK(bitwise_equal(zero.student, plain.student));
  CHECK(zero.report.confidence_free);
  CHECK(plain.report.confidence_free);
  CHECK(zero.student.pooling.kind == PoolKind::Max);

  c.weighting = Stage2Weighting::Confidence;
  c.loss.alpha = 1.0;
  const StageResult weighted = train_stage2(clips, pl, s1.student, c);
  CHECK_FALSE(weighted.report.confidence_free);
  CHECK_FALSE(same_bits(weighted.report.step_losses, plain.report.step_losses));
}

TEST_CASE("stage two ignores the live confidence head") {
  const auto clips = small_dataset().training_clips();
  TrainConfig c = small_config();
  const StageResult s1 = train_stage1(clips, c);
  const PseudoLabelSet pl = generate_pseudo_labels(s1.teacher.params, clips);
  ModelParams perturbed = s1.student;
  for (double& v : perturbed.confidence_head.weights.values()) v += 0.37;
  for (double& v : perturbed.confidence_head.bias) v -= 1.1;
  const StageResult a = train_stage2(clips, pl, s1.student, c);
  const StageResult b = train_stage2(clips, pl, perturbed, c);
  CHECK(same_bits(a.report.step_losses, b.report.step_losses));
  CHECK(a.student.class_head == b.student.class_head);
}

TEST_CASE("stage two from a cold start") {
  const auto clips = small_dataset().training_clips();
  TrainConfig c = small_config();
  const StageResult s1 = train_stage1(clips, c);
  const PseudoLabelSet pl = generate_pseudo_labels(s1.teacher.params, clips);
  c.stage2_warm_start = false;
  const StageResult a = train_stage2(clips, pl, s1.student, c);
  ModelParams other = s1.student;
  for (double& v : other.class_head.bias) v += 1.0;
  const StageResult b = train_stage2(clips, pl, other, c);
  CHECK(bitwise_equal(a.student, b.student));
  c.stage2_consistency = false;
  const StageResult d = train_stage2(clips, pl, s1.student, c);
  for (const auto& e : d.report.epochs) CHECK(e.consistency == 0.0);
}

TEST_CASE("a large initial exponent traps training") {
  const auto clips = small_dataset().training_clips();
  TrainConfig c = small_config();
  c.confidence_epochs = 0;
  c.classification_epochs = 6;
  const StageResult base = train_stage1(clips, c);
  c.model.n_init = 10.0;
  const StageResult trapped = train_stage1(clips, c);
  const double base_loss = clip_loss(base.student, clips);
  const double trapped_loss = clip_loss(trapped.student, clips);
  INFO("n=1.2 " << base_loss << " n=10 " << trapped_loss);
  CHECK(trapped_loss > base_loss);
}

TEST_CASE("without the penalty the confidence collapses") {
  const auto clips = small_dataset().training_clips();
  TrainConfig c = small_config();
  c.loss.lambda = 0.0;
  std::vector<double> means;
  for (size_t e = 0; e <= 5; ++e) {
    c.confidence_epochs = e;
    means.push_back(mean_confidence_on_strong(train_stage1(clips, c).student, clips));
  }
  for (size_t e = 1; e < means.size(); ++e) {
    INFO("epoch " << e << ": " << means[e - 1] << " -> " << means[e]);
    CHECK(means[e] < means[e - 1]);
  }
}

TEST_CASE("predict and evaluate") {
  const Dataset& d = small_dataset();
  const auto clips = d.split(Split::Validation);
  const ModelParams p = init_params(small_config().model);
  const auto a = predict(p, clips);
  const auto b = predict(p, clips, 2);
  REQUIRE(a.size() == clips.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].frame_probs == b[i].frame_probs);
    CHECK(a[i].clip_probs == b[i].clip_probs);
  }

  const DecodeConfig dc = default_decode_config(d);
  CHECK(dc.class_windows.size() == d.spec.num_classes);
  const ScoreReport ref = evaluate_reference(d, Split::Validation);
  CHECK(ref.event.macro.er == 0.0);
  CHECK(ref.event.macro.f1 == 1.0);

  const Evaluation ev = evaluate(p, d, Split::Validation, dc);
  CHECK(ev.scores.segment.has_value());
  size_t total = 0;
  for (const auto& bin : ev.reliability.by_confidence) total += bin.count;
  CHECK(total == clips.size() * d.spec.frames_per_clip * d.spec.num_classes);
}

TEST_CASE("input errors") {
  const Dataset& d = small_dataset();
  TrainConfig c = small_config();
  CHECK_THROWS_AS(train_stage1({}, c), DataError);
  CHECK_THROWS_AS(train_stage1(d.split(Split::Unlabeled), c), DataError);
  c.batch_size = 0;
  CHECK_THROWS_AS(train_stage1(d.training_clips(), c), DataError);

  c = small_config();
  const ModelParams p = init_params(c.model);
  CHECK_THROWS_AS(train_stage2(d.training_clips(), PseudoLabelSet{}, p, c), DataError);
  const PseudoLabelSet pl = generate_pseudo_labels(p, d.split(Split::Strong));
  CHECK_THROWS_AS(train_stage2(d.training_clips(), pl, p, c), DataError);
  CHECK_THROWS_AS(parse_weighting("bogus"), DataError);
}

TEST_CASE("config and report serialization") {
  TrainConfig c = small_config();
  c.weighting = Stage2Weighting::Prob05;
  c.loss.alpha = 0.25;
  c.model.pooling = PoolKind::Auto;
  const TrainConfig back = train_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.weighting == Stage2Weighting::Prob05);
  for (Stage2Weighting w : {Stage2Weighting::Confidence, Stage2Weighting::Unweighted, Stage2Weighting::Prob09,
                            Stage2Weighting::ProbWeighted, Stage2Weighting::Prob05})
    CHECK(parse_weighting(to_string(w)) == w);

  StageReport r;
  r.epochs.push_back({0, "classification", 0.5, 0.1, 0.0, 0.6, {1.3}});
  r.step_losses = {0.7, 0.6};
  r.discarded_frames = 3;
  const StageReport rb = stage_report_from_json(to_json(r));
  CHECK(rb.epochs.size() == 1);
  CHECK(rb.epochs[0].n == std::vector<double>{1.3});
  CHECK(rb.step_losses == r.step_losses);
  CHECK(rb.discarded_frames == 3);
}

TEST_CASE("parallel_for visits every index once and forwards exceptions") {
  std::vector<int> hits(50, 0);
  parallel_for(50, 4, [&](size_t i) { hits[i] += 1; });
  for (int h : hits) CHECK(h == 1);
  CHECK_THROWS_AS(parallel_for(10, 3, [](size_t i) {
                    if (i == 7) throw DataError("boom");
                  }),
                  DataError);
}
