/* Copyright 2026 The avsync Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "avsync/trainer.hpp"
#include "support.hpp"

using Catch::Approx;
using namespace avsync;
using namespace avsync::train;

namespace {

synth::CorpusConfig small_corpus(double silent = 0.0) {
  synth::CorpusConfig c;
  c.n_videos = 8;
  c.length = 60;
  c.silent_fraction = silent;
  return c;
}

TrainConfig short_run(const synth::CorpusConfig& c) {
  TrainConfig t = TrainConfig::desk(c);
  t.epochs_main = 3;
  t.epochs_bn_tune = 2;
  t.steps_per_epoch = 3;
  t.tau_warmup_epochs = 1;
  return t;
}

// Bytes of every parameter selected by `keep`, in visit order.
std::vector<unsigned char> param_bytes(const SyncModel& m, bool bn) {
  std::vector<unsigned char> out;
  for (const auto* e : {&m.visual, &m.audio})
    e->params.for_each([&](const std::string&, nn::ParamKind k, const Tensor& t) {
      if (nn::is_bn_param(k) != bn) return;
      const auto* p = reinterpret_cast<const unsigned char*>(t.data());
      out.insert(out.end(), p, p + t.size() * sizeof(double));
    });
  return out;
}

std::string diag_text(const TrainDiagnostics& d) {
  std::string s;
  for (const auto& r : d) s += to_json(r).dump() + "\n";
  return s;
}

}  // namespace

TEST_CASE("presets and validation", "[trainer]") {
  const auto c = small_corpus();
  const auto desk = TrainConfig::desk(c);
  CHECK_NOTHROW(desk.validate());
  CHECK(desk.batch.batch_size == 8);
  CHECK(desk.batch.n_easy == 3);
  CHECK(desk.learning_rate == 5e-3);
  CHECK(desk.cosine_decay);
  CHECK(desk.tau_warmup_epochs == 60);
  const auto full = TrainConfig::full();
  CHECK(full.preset == "full");
  CHECK(full.batch.batch_size == 256);
  CHECK(full.learning_rate == 1e-4);
  CHECK(full.epochs_main == 600);
  CHECK(full.epochs_bn_tune == 50);
  CHECK(full.batch.n_hard == 15);
  CHECK(full.batch.n_easy == 15);
  CHECK(full.batch.w_easy == 0.1);
  CHECK(full.beta1 == 0.9);
  CHECK(full.beta2 == 0.999);

  auto bad = desk;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(bad.validate(), InvalidConfig);
  bad = desk;
  bad.epochs_main = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidConfig);
  bad = desk;
  bad.initial_tau = 50.0;
  CHECK_THROWS_AS(bad.validate(), InvalidConfig);
  auto other = small_corpus();
  other.audio_features = 12;
  CHECK_THROWS_AS(train::train(synth::generate_corpus(other), desk), ShapeError);
}

TEST_CASE("learning rate schedule", "[trainer]") {
  TrainConfig t;
  t.epochs_main = 11;
  CHECK(t.learning_rate_at(5) == t.learning_rate);
  t.cosine_decay = true;
  CHECK(t.learning_rate_at(0) == Approx(t.learning_rate));
  CHECK(t.learning_rate_at(10) == Approx(t.learning_rate * t.lr_floor));
  CHECK(t.learning_rate_at(5) == Approx(t.learning_rate * (t.lr_floor + (1 - t.lr_floor) * 0.5)));
  for (std::size_t e = 1; e < 11; ++e) CHECK(t.learning_rate_at(e) <= t.learning_rate_at(e - 1));
}

TEST_CASE("score gradients", "[trainer]") {
  Rng rng(3);
  const std::size_t B = 3, nh = 2, ne = 1;
  Tensor v = random_normal({B, 6}, rng), a = random_normal({B * (1 + nh + ne), 6}, rng);
  for (Tensor* t : {&v, &a})
    for (std::size_t i = 0; i < t->dim(0); ++i) {
      const double n = l2_norm(std::span<const double>(t->data() + i * 6, 6));
      for (std::size_t k = 0; k < 6; ++k) (*t)[i * 6 + k] /= n;
    }
  const auto scores = score_batch(v, a, nh, ne);
  REQUIRE(scores.size() == B);
  REQUIRE(scores[1].phi_hard.size() == nh);
  CHECK(scores[1].phi_pos == Approx(dot(std::span<const double>(v.data() + 6, 6),
                                        std::span<const double>(a.data() + (1 + nh + ne) * 6, 6))));
  CHECK(scores[2].phi_easy[0] == Approx(dot(std::span<const double>(v.data() + 12, 6),
                                            std::span<const double>(a.data() + (2 * (1 + nh + ne) + 3) * 6, 6))));
  std::vector<loss::ScoreGrad> w(B);
  for (auto& s : w) s = {0.7, std::vector<double>(nh, -0.3), std::vector<double>(ne, 1.1)};
  auto f = [&](const Tensor& vv, const Tensor& aa) {
    const auto sc = score_batch(vv, aa, nh, ne);
    double acc = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      acc += sc[b].phi_pos * w[b].d_pos;
      for (std::size_t k = 0; k < nh; ++k) acc += sc[b].phi_hard[k] * w[b].d_hard[k];
      for (std::size_t k = 0; k < ne; ++k) acc += sc[b].phi_easy[k] * w[b].d_easy[k];
    }
    return acc;
  };
  auto [dv, da] = score_backward(v, a, w);
  const Tensor nv = testing::numeric_grad([&](const Tensor& x) { return f(x, a); }, v);
  const Tensor na = testing::numeric_grad([&](const Tensor& x) { return f(v, x); }, a);
  CHECK(testing::max_rel_error(dv, nv) < 1e-6);
  CHECK(testing::max_rel_error(da, na) < 1e-6);
}

TEST_CASE("training is reproducible and freezes non-BN parameters in phase two", "[trainer]") {
  const auto c = synth::generate_corpus(small_corpus());
  const auto cfg = short_run(c.config);
  std::vector<unsigned char> frozen, bn_before;
  std::vector<double> taus;
  auto r1 = train::train(c, cfg, [&](const EpochRecord& rec, const SyncModel& m) {
    taus.push_back(m.tau.tau());
    if (rec.epoch + 1 == cfg.epochs_main) {
      frozen = param_bytes(m, false);
      bn_before = param_bytes(m, true);
    }
  });
  auto r2 = train::train(c, cfg);
  REQUIRE(r1.diagnostics.size() == 5);
  CHECK(diag_text(r1.diagnostics) == diag_text(r2.diagnostics));
  CHECK((param_bytes(r1.model, false) == param_bytes(r2.model, false)));
  CHECK((param_bytes(r1.model, true) == param_bytes(r2.model, true)));

  CHECK((param_bytes(r1.model, false) == frozen));
  CHECK((param_bytes(r1.model, true) != bn_before));
  CHECK(r1.diagnostics[3].phase == "bn_tune");
  CHECK(r1.diagnostics[2].phase == "main");
  // held during warm-up and frozen in tune
  CHECK(taus[0] == Approx(0.1).epsilon(1e-12));
  CHECK(taus[4] == taus[2]);
  for (const auto& rec : r1.diagnostics) {
    CHECK(std::isfinite(rec.loss));
    CHECK(rec.tau >= loss::Temperature::kMinTau);
    CHECK(rec.tau <= loss::Temperature::kMaxTau);
    const auto j = to_json(rec);
    for (const char* k : {"epoch", "phase", "loss", "pos_sim", "neg_sim", "tau", "fp", "fn", "mean_q_pos", "mean_q_neg"})
      CHECK(j.contains(k));
  }

  auto seeded = cfg;
  seeded.seed = 2;
  CHECK(diag_text(train::train(c, seeded).diagnostics) != diag_text(r1.diagnostics));
}

TEST_CASE("batch streams do not depend on the loss", "[trainer]") {
  const auto c = synth::generate_corpus(small_corpus());
  Rng a = batch_stream(5), b = batch_stream(5), d = drop_stream(5);
  synth::BatchSpec spec;
  const auto x = synth::sample_batch(c, spec, a);
  const auto y = synth::sample_batch(c, spec, b);
  CHECK(x.audio.values() == y.audio.values());
  CHECK(a() == b());
  CHECK(batch_stream(5)() != d());

  // the first step scores the same batch before any update
  auto cfg = short_run(c.config);
  cfg.epochs_main = 1;
  cfg.epochs_bn_tune = 0;
  cfg.steps_per_epoch = 1;
  auto info = cfg;
  info.loss = loss::LossKind::kInfoNce;
  auto r1 = train::train(c, cfg), r2 = train::train(c, info);
  CHECK(r1.diagnostics[0].pos_sim == r2.diagnostics[0].pos_sim);
  CHECK(r1.diagnostics[0].neg_sim == r2.diagnostics[0].neg_sim);
  CHECK(r1.diagnostics[0].loss != r2.diagnostics[0].loss);
  CHECK_FALSE((param_bytes(r1.model, false) == param_bytes(r2.model, false)));
}

TEST_CASE("divergence keeps the last good model", "[trainer]") {
  const auto c = synth::generate_corpus(small_corpus());
  auto cfg = short_run(c.config);
  cfg.learning_rate = 1e306;
  try {
    train::train(c, cfg);
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    CHECK(e.epoch() == 0);
    CHECK(e.last_good().all_finite());
    CHECK(std::string(e.what()).find("TrainingDiverged") == 0);
  }
}

TEST_CASE("clip enumeration and BN recalibration", "[trainer]") {
  const auto c = synth::generate_corpus(small_corpus());
  const auto refs = all_clips(c);
  CHECK(refs.size() == 8 * (60 - 4));
  CHECK(refs[56].video == 1);
  CHECK(refs[56].start == 0);
  auto m1 = SyncModel::init(short_run(c.config));
  auto m2 = m1;
  recalibrate_bn(m1, c, 256);
  recalibrate_bn(m2, c, 37);
  for (std::size_t i = 0; i < m1.visual.bn.size(); ++i)
    for (std::size_t k = 0; k < m1.visual.bn[i].running_mean.size(); ++k) {
      REQUIRE(m1.visual.bn[i].running_mean[k] == Approx(m2.visual.bn[i].running_mean[k]).margin(1e-12));
      REQUIRE(m1.visual.bn[i].running_var[k] == Approx(m2.visual.bn[i].running_var[k]).epsilon(1e-10));
    }
}

TEST_CASE("untrained model errs on about half of balanced pairs", "[trainer]") {
  const auto c = synth::generate_corpus(small_corpus(0.3));
  const auto m = SyncModel::init(short_run(c.config));
  const auto fp = evaluate_fp_fn(m, c, 2000, 9);
  CHECK(fp.pairs == 2000);
  const double err = static_cast<double>(fp.false_positives + fp.false_negatives) / (2.0 * 2000.0);
  CHECK(err == Approx(0.5).margin(0.05));
  const auto again = evaluate_fp_fn(m, c, 2000, 9);
  CHECK(again.false_positives == fp.false_positives);
}

TEST_CASE("evaluation and margins on an untrained model", "[trainer]") {
  const auto c = synth::generate_corpus(small_corpus());
  const auto m = SyncModel::init(short_run(c.config));
  const auto e = embed_video(m, c, 2, 16);
  const auto e2 = embed_video(m, c, 2, 128);
  CHECK(e.visual.dim(0) == 56);
  CHECK(e.true_shift == 0);
  for (std::size_t i = 0; i < e.visual.size(); ++i) REQUIRE(e.visual[i] == Approx(e2.visual[i]).margin(1e-12));
  Rng rng(1);
  synth::BatchSpec spec;
  const auto mg = held_out_margin(m, c, spec, 3, rng);
  CHECK(mg.pairs > 0);
  CHECK(std::abs(mg.margin()) < 0.2);
  const auto t = evaluate(m, c);
  for (std::size_t i = 0; i < 6; ++i) CHECK(t.total[i] == 8 * (56 - 40));
}
