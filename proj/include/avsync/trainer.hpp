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

// Dual-encoder training on synthetic corpora: main phase with dropping, then
// drop-and-tune (BN parameters only, temperature frozen).

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "avsync/encoder.hpp"
#include "avsync/error.hpp"
#include "avsync/eval.hpp"
#include "avsync/loss.hpp"
#include "avsync/optim.hpp"
#include "avsync/synth.hpp"
#include "avsync/tensor.hpp"

namespace avsync::train {

// Encoders sized for the reduced synthetic geometry: 15x4x8 visual clips and
// 32x16 audio windows.
inline nn::EncoderConfig synthetic_visual_encoder(const Shape& input) {
  nn::EncoderConfig c;
  c.input_shape = input;
  c.blocks = {{16, 3, true, false}, {16, 3, false, true}, {32, 3, false, false}};
  c.drop.dims = nn::DropDims::k3D;
  c.embed_dim = 32;
  return c;
}

inline nn::EncoderConfig synthetic_audio_encoder(const Shape& input) {
  nn::EncoderConfig c;
  c.input_shape = input;
  c.blocks = {{8, 3, true, true}, {16, 3, false, true}, {16, 3, true, false}};
  c.drop.dims = nn::DropDims::k2D;
  c.embed_dim = 32;
  return c;
}

struct TrainConfig {
  std::string preset = "desk";
  loss::LossKind loss = loss::LossKind::kBbce;
  synth::BatchSpec batch;
  double learning_rate = 2e-3;
  bool cosine_decay = false;     // main-phase learning rate decays to lr * lr_floor
  double lr_floor = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t epochs_main = 30;
  std::size_t epochs_bn_tune = 5;
  std::size_t steps_per_epoch = 10;
  // After the tune phase, set BN running statistics to the exact moments of
  // their eval-mode inputs over every training clip.
  bool recalibrate_bn = true;
  std::uint64_t seed = 1;
  bool dropblock = true;
  bool learn_temperature = true;
  std::size_t tau_warmup_epochs = 0;  // temperature held fixed for these epochs
  double tau_learning_rate = 1e-3;
  double initial_tau = 0.1;
  bool bbce_simplified = false;
  double margin = 1.0;
  nn::EncoderConfig visual;
  nn::EncoderConfig audio;

  optim::AdamHyper adam() const { return {learning_rate, beta1, beta2, eps}; }

  // Learning rate for main-phase epoch e; the tune phase uses the final value.
  double learning_rate_at(std::size_t e) const {
    if (!cosine_decay || epochs_main < 2) return learning_rate;
    const double t = std::min(1.0, static_cast<double>(e) / static_cast<double>(epochs_main - 1));
    const double pi = std::acos(-1.0);
    return learning_rate * (lr_floor + (1.0 - lr_floor) * 0.5 * (1.0 + std::cos(pi * t)));
  }
  loss::ScoreLossOptions loss_options() const {
    loss::ScoreLossOptions o;
    o.bbce = {batch.n_hard, batch.n_easy, batch.w_easy, bbce_simplified};
    o.margin = margin;
    return o;
  }

  void validate() const {
    if (!(learning_rate > 0.0)) throw InvalidConfig("learning_rate must be positive");
    if (!(lr_floor > 0.0 && lr_floor <= 1.0)) throw InvalidConfig("lr_floor must lie in (0, 1]");
    if (epochs_main == 0) throw InvalidConfig("epochs_main must be positive");
    if (!(tau_learning_rate >= 0.0)) throw InvalidConfig("tau_learning_rate must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
      throw InvalidConfig("Adam betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw InvalidConfig("eps must be positive");
    if (steps_per_epoch == 0) throw InvalidConfig("steps_per_epoch must be positive");
    if (!(initial_tau >= loss::Temperature::kMinTau && initial_tau <= loss::Temperature::kMaxTau))
      throw InvalidConfig("initial_tau outside the temperature clamp");
    batch.validate();
    if (loss == loss::LossKind::kBbce) loss_options().bbce.validate();
    visual.validate();
    audio.validate();
  }

  // Desk-scale defaults for a corpus of the given geometry.
  static TrainConfig desk(const synth::CorpusConfig& corpus) {
    TrainConfig c;
    c.batch.batch_size = 8;
    c.batch.n_hard = 15;
    c.batch.n_easy = 3;
    c.learning_rate = 5e-3;
    c.cosine_decay = true;
    c.epochs_main = 250;
    c.epochs_bn_tune = 5;
    c.steps_per_epoch = 10;
    c.tau_warmup_epochs = 60;
    c.tau_learning_rate = 1e-3;
    c.visual = synthetic_visual_encoder(synth::visual_input_shape(corpus));
    c.audio = synthetic_audio_encoder(synth::audio_input_shape(corpus));
    return c;
  }

  // Full-scale protocol: batch 256, lr 1e-4, 600 + 50 epochs, 15 + 15
  // negatives, easy weight 0.1, full-size encoders. Stored, not run here.
  static TrainConfig full() {
    TrainConfig c;
    c.preset = "full";
    c.batch.batch_size = 256;
    c.batch.n_hard = 15;
    c.batch.n_easy = 15;
    c.batch.w_easy = 0.1;
    c.learning_rate = 1e-4;
    c.tau_learning_rate = 1e-4;
    c.epochs_main = 600;
    c.epochs_bn_tune = 50;
    c.visual = nn::EncoderConfig::desk_visual();
    c.audio = nn::EncoderConfig::desk_audio();
    return c;
  }
};

struct SyncModel {
  nn::ToyEncoder visual;
  nn::ToyEncoder audio;
  loss::Temperature tau;

  static SyncModel init(const TrainConfig& cfg) {
    Rng rng(cfg.seed);
    SyncModel m;
    m.visual = nn::ToyEncoder::init(cfg.visual, rng);
    m.audio = nn::ToyEncoder::init(cfg.audio, rng);
    m.tau = loss::Temperature::from_tau(cfg.initial_tau);
    return m;
  }

  bool all_finite() const {
    bool ok = std::isfinite(tau.log_inv_tau);
    for (const auto* e : {&visual, &audio}) {
      e->params.for_each([&](const std::string&, nn::ParamKind, const Tensor& t) { ok = ok && t.all_finite(); });
      for (const auto& s : e->bn) {
        for (double x : s.running_mean) ok = ok && std::isfinite(x);
        for (double x : s.running_var) ok = ok && std::isfinite(x);
      }
    }
    return ok;
  }
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, SyncModel last_good, std::size_t epoch)
      : Error("TrainingDiverged: " + what),
        last_good_(std::make_shared<SyncModel>(std::move(last_good))),
        epoch_(epoch) {}
  const SyncModel& last_good() const { return *last_good_; }
  std::size_t epoch() const { return epoch_; }

 private:
  std::shared_ptr<SyncModel> last_good_;
  std::size_t epoch_;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::string phase;
  double loss = 0.0;
  double pos_sim = 0.0;
  double neg_sim = 0.0;
  double tau = 0.0;
  std::uint64_t false_positives = 0;
  std::uint64_t false_negatives = 0;
  double mean_q_pos = 0.0;  // 1 - p of positives
  double mean_q_neg = 0.0;  // p of negatives
};

inline nlohmann::json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},       {"phase", r.phase},
          {"loss", r.loss},         {"pos_sim", r.pos_sim},
          {"neg_sim", r.neg_sim},   {"tau", r.tau},
          {"fp", r.false_positives}, {"fn", r.false_negatives},
          {"mean_q_pos", r.mean_q_pos}, {"mean_q_neg", r.mean_q_neg}};
}

using TrainDiagnostics = std::vector<EpochRecord>;

// Per-sample scores from visual (B, D) and audio (B * W, D) embeddings.
inline std::vector<loss::ScoreSet> score_batch(const Tensor& v, const Tensor& a, std::size_t n_hard,
                                               std::size_t n_easy) {
  const std::size_t B = v.dim(0), D = v.dim(1), W = 1 + n_hard + n_easy;
  if (a.dim(0) != B * W || a.dim(1) != D) throw ShapeError("score_batch: embedding layout mismatch");
  std::vector<loss::ScoreSet> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    auto phi = [&](std::size_t k) {
      return std::clamp(dot(std::span(v.data() + b * D, D), std::span(a.data() + (b * W + k) * D, D)), -1.0, 1.0);
    };
    out[b].phi_pos = phi(0);
    for (std::size_t k = 0; k < n_hard; ++k) out[b].phi_hard.push_back(phi(1 + k));
    for (std::size_t k = 0; k < n_easy; ++k) out[b].phi_easy.push_back(phi(1 + n_hard + k));
  }
  return out;
}

struct EmbeddingGrads {
  Tensor d_visual;
  Tensor d_audio;
};

// Chain rule from dL/dphi to both embedding batches (phi = v . a).
inline EmbeddingGrads score_backward(const Tensor& v, const Tensor& a,
                                     std::span<const loss::ScoreGrad> d_scores) {
  const std::size_t B = v.dim(0), D = v.dim(1);
  if (d_scores.size() != B) throw ShapeError("score_backward: batch size mismatch");
  const std::size_t W = a.dim(0) / B;
  EmbeddingGrads g{Tensor(v.shape()), Tensor(a.shape())};
  for (std::size_t b = 0; b < B; ++b) {
    const auto& gs = d_scores[b];
    auto acc = [&](std::size_t k, double d) {
      const double* vb = v.data() + b * D;
      const double* ak = a.data() + (b * W + k) * D;
      double* dvb = g.d_visual.data() + b * D;
      double* dak = g.d_audio.data() + (b * W + k) * D;
      for (std::size_t i = 0; i < D; ++i) {
        dvb[i] += d * ak[i];
        dak[i] += d * vb[i];
      }
    };
    acc(0, gs.d_pos);
    for (std::size_t k = 0; k < gs.d_hard.size(); ++k) acc(1 + k, gs.d_hard[k]);
    for (std::size_t k = 0; k < gs.d_easy.size(); ++k) acc(1 + gs.d_hard.size() + k, gs.d_easy[k]);
  }
  return g;
}

struct StepResult {
  double loss = 0.0;
  std::vector<loss::ScoreSet> scores;
};

struct Optimizers {
  nn::EncoderOptimizer visual;
  nn::EncoderOptimizer audio;
  optim::AdamState tau;
};

// One update. Main phase: all parameters plus temperature. Tune phase: BN
// scale/shift only, temperature frozen.
inline StepResult train_step(SyncModel& m, Optimizers& opt, const synth::Batch& batch,
                             const TrainConfig& cfg, bool tune, Rng& drop_rng,
                             bool update_tau = true, double lr_now = -1.0) {
  const nn::TrainPhase phase = tune ? nn::TrainPhase::bn_tune() : nn::TrainPhase::train(cfg.dropblock);
  nn::EncoderTape vt, at;
  const Tensor v = nn::encoder_forward(m.visual, batch.visual, phase, drop_rng, &vt);
  const Tensor a = nn::encoder_forward(m.audio, batch.audio, phase, drop_rng, &at);
  StepResult r;
  r.scores = score_batch(v, a, cfg.batch.n_hard, cfg.batch.n_easy);
  const loss::LossResult lr = loss::loss_on_scores(cfg.loss, r.scores, m.tau, cfg.loss_options());
  r.loss = lr.loss;
  if (!std::isfinite(r.loss)) return r;

  auto [dv, da] = score_backward(v, a, lr.d_scores);
  const nn::EncoderGrads gv = nn::encoder_backward(m.visual, vt, dv);
  const nn::EncoderGrads ga = nn::encoder_backward(m.audio, at, da);
  optim::AdamHyper h = cfg.adam();
  if (lr_now > 0.0) h.learning_rate = lr_now;
  opt.visual.step(m.visual.params, gv.params, h, tune);
  opt.audio.step(m.audio.params, ga.params, h, tune);
  if (!tune && cfg.learn_temperature && update_tau) {
    double lit = m.tau.log_inv_tau;
    const double g = lr.d_log_inv_tau;
    optim::AdamHyper ht = h;
    ht.learning_rate = cfg.tau_learning_rate;
    optim::adam_step(std::span(&lit, 1), std::span(&g, 1), opt.tau, ht);
    m.tau.log_inv_tau = std::clamp(lit, loss::Temperature::min_log_inv_tau(),
                                   loss::Temperature::max_log_inv_tau());
  }
  return r;
}

// Derived, independent streams: batches depend only on the seed, never on
// the loss or on dropping.
inline Rng batch_stream(std::uint64_t seed) {
  std::seed_seq s{seed, std::uint64_t{0x62617463}};
  return Rng(s);
}
inline Rng drop_stream(std::uint64_t seed) {
  std::seed_seq s{seed, std::uint64_t{0x64726f70}};
  return Rng(s);
}

// Every clip position of every video, in corpus order.
inline std::vector<synth::AudioRef> all_clips(const synth::Corpus& corpus) {
  std::vector<synth::AudioRef> refs;
  for (std::size_t v = 0; v < corpus.videos.size(); ++v)
    for (std::size_t p = 0; p < synth::clip_count(corpus.videos[v]); ++p) refs.push_back({v, p});
  return refs;
}

inline void recalibrate_bn(SyncModel& m, const synth::Corpus& corpus, std::size_t chunk = 256) {
  const auto refs = all_clips(corpus);
  const std::size_t n = (refs.size() + chunk - 1) / chunk;
  auto slice = [&](std::size_t k) {
    const std::size_t b = k * chunk;
    return std::span<const synth::AudioRef>(refs.data() + b, std::min(chunk, refs.size() - b));
  };
  nn::recalibrate_bn(m.visual, [&](std::size_t k) { return synth::visual_batch(corpus, slice(k)); }, n);
  nn::recalibrate_bn(m.audio, [&](std::size_t k) { return synth::audio_batch(corpus, slice(k)); }, n);
}

struct TrainResult {
  SyncModel model;
  TrainDiagnostics diagnostics;
};

using EpochCallback = std::function<void(const EpochRecord&, const SyncModel&)>;

inline TrainResult train(const synth::Corpus& corpus, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (synth::visual_input_shape(corpus.config) != cfg.visual.input_shape ||
      synth::audio_input_shape(corpus.config) != cfg.audio.input_shape)
    throw ShapeError("encoder input shapes do not match the corpus");
  TrainResult out{SyncModel::init(cfg), {}};
  SyncModel& m = out.model;
  Optimizers opt;
  Rng brng = batch_stream(cfg.seed), drng = drop_stream(cfg.seed);
  synth::BatchSpec spec = cfg.batch;

  const std::size_t total = cfg.epochs_main + cfg.epochs_bn_tune;
  for (std::size_t e = 0; e < total; ++e) {
    const bool tune = e >= cfg.epochs_main;
    if (tune && e == cfg.epochs_main) opt.visual.states.clear(), opt.audio.states.clear();
    SyncModel last_good = m;
    EpochRecord rec;
    rec.epoch = e;
    rec.phase = tune ? "bn_tune" : "main";
    std::size_t n_pos = 0, n_neg = 0;
    for (std::size_t s = 0; s < cfg.steps_per_epoch; ++s) {
      const synth::Batch batch = synth::sample_batch(corpus, spec, brng);
      StepResult r;
      try {
        r = train_step(m, opt, batch, cfg, tune, drng, e >= cfg.tau_warmup_epochs,
                       cfg.learning_rate_at(std::min(e, cfg.epochs_main - 1)));
      } catch (const InvalidInput& err) {
        // inputs were validated up front; this is a collapsed embedding
        throw TrainingDiverged(std::string(err.what()) + " at epoch " + std::to_string(e), std::move(last_good), e);
      }
      if (!std::isfinite(r.loss) || !m.all_finite())
        throw TrainingDiverged("non-finite loss or parameters at epoch " + std::to_string(e),
                               std::move(last_good), e);
      rec.loss += r.loss;
      for (const auto& sc : r.scores) {
        const double pp = loss::sync_probability(sc.phi_pos, m.tau);
        rec.pos_sim += sc.phi_pos;
        rec.mean_q_pos += 1.0 - pp;
        if (pp <= 0.5) ++rec.false_negatives;
        ++n_pos;
        for (const auto* group : {&sc.phi_hard, &sc.phi_easy})
          for (double phi : *group) {
            const double pn = loss::sync_probability(phi, m.tau);
            rec.neg_sim += phi;
            rec.mean_q_neg += pn;
            ++n_neg;
          }
        // Balanced count: one negative per positive.
        if (!sc.phi_hard.empty() && loss::sync_probability(sc.phi_hard[0], m.tau) > 0.5)
          ++rec.false_positives;
      }
    }
    rec.loss /= static_cast<double>(cfg.steps_per_epoch);
    rec.pos_sim /= static_cast<double>(n_pos);
    rec.mean_q_pos /= static_cast<double>(n_pos);
    if (n_neg) {
      rec.neg_sim /= static_cast<double>(n_neg);
      rec.mean_q_neg /= static_cast<double>(n_neg);
    }
    rec.tau = m.tau.tau();
    out.diagnostics.push_back(rec);
    if (on_epoch) on_epoch(rec, m);
  }
  if (cfg.epochs_bn_tune > 0 && cfg.recalibrate_bn) recalibrate_bn(m, corpus);
  return out;
}

// ---------------------------------------------------------------------------
// Embedding and held-out checks.

// Eval-phase embeddings of every clip position of one video.
inline eval::VideoEmbeddings embed_video(const SyncModel& m, const synth::Corpus& corpus,
                                         std::size_t video, std::size_t chunk = 128) {
  const synth::LatentVideo& v = corpus.videos.at(video);
  const std::size_t M = synth::clip_count(v);
  eval::VideoEmbeddings out;
  out.id = v.id;
  out.true_shift = -v.audio_offset;
  const std::size_t D = m.visual.config.embed_dim;
  if (m.audio.config.embed_dim != D) throw ShapeError("encoders disagree on embedding size");
  out.visual = Tensor({M, D});
  out.audio = Tensor({M, D});
  for (std::size_t p0 = 0; p0 < M; p0 += chunk) {
    std::vector<synth::AudioRef> refs;
    for (std::size_t p = p0; p < std::min(M, p0 + chunk); ++p) refs.push_back({video, p});
    const Tensor ev = nn::encoder_embed(m.visual, synth::visual_batch(corpus, refs));
    const Tensor ea = nn::encoder_embed(m.audio, synth::audio_batch(corpus, refs));
    std::copy(ev.values().begin(), ev.values().end(), out.visual.data() + p0 * D);
    std::copy(ea.values().begin(), ea.values().end(), out.audio.data() + p0 * D);
  }
  return out;
}

inline eval::VideoEmbeddings oracle_video(const synth::Corpus& corpus, std::size_t video) {
  const synth::LatentVideo& v = corpus.videos.at(video);
  synth::EmbeddingSequences e = synth::oracle_embeddings(corpus, v);
  return {v.id, std::move(e.visual), std::move(e.audio), -v.audio_offset};
}

struct SimilarityMargin {
  double pos = 0.0;
  double neg = 0.0;
  std::size_t pairs = 0;
  double margin() const { return pos - neg; }
};

// Mean eval-phase similarity of positives versus hard/easy negatives drawn
// with the training sampler.
inline SimilarityMargin held_out_margin(const SyncModel& m, const synth::Corpus& corpus,
                                        const synth::BatchSpec& spec, std::size_t batches, Rng& rng) {
  SimilarityMargin r;
  std::size_t nn = 0;
  for (std::size_t i = 0; i < batches; ++i) {
    const synth::Batch b = synth::sample_batch(corpus, spec, rng);
    const Tensor v = nn::encoder_embed(m.visual, b.visual);
    const Tensor a = nn::encoder_embed(m.audio, b.audio);
    for (const auto& s : score_batch(v, a, spec.n_hard, spec.n_easy)) {
      r.pos += s.phi_pos;
      ++r.pairs;
      for (double x : s.phi_hard) r.neg += x, ++nn;
      for (double x : s.phi_easy) r.neg += x, ++nn;
    }
  }
  r.pos /= static_cast<double>(r.pairs);
  if (nn) r.neg /= static_cast<double>(nn);
  return r;
}

struct FpFnCounts {
  std::uint64_t false_positives = 0;
  std::uint64_t false_negatives = 0;
  std::uint64_t pairs = 0;  // positives; the negative count is equal
};

// Balanced pairs at p = 0.5: every anchor contributes its positive and one
// hard negative.
inline FpFnCounts evaluate_fp_fn(const SyncModel& m, const synth::Corpus& corpus, std::size_t anchors,
                                 std::uint64_t seed) {
  synth::BatchSpec spec;
  spec.n_hard = 1;
  spec.n_easy = 0;
  spec.w_easy = 0.0;
  spec.batch_size = std::min<std::size_t>(anchors, 256);
  Rng rng(seed);
  FpFnCounts c;
  while (c.pairs < anchors) {
    spec.batch_size = std::min<std::size_t>(spec.batch_size, anchors - c.pairs);
    const synth::Batch b = synth::sample_batch(corpus, spec, rng);
    const Tensor v = nn::encoder_embed(m.visual, b.visual);
    const Tensor a = nn::encoder_embed(m.audio, b.audio);
    for (const auto& s : score_batch(v, a, 1, 0)) {
      if (loss::sync_probability(s.phi_pos, m.tau) <= 0.5) ++c.false_negatives;
      if (loss::sync_probability(s.phi_hard[0], m.tau) > 0.5) ++c.false_positives;
      ++c.pairs;
    }
  }
  return c;
}

// Accuracy table over every video of a corpus.
inline eval::AccuracyTable evaluate(const SyncModel& m, const synth::Corpus& corpus) {
  eval::AccuracyTable t;
  for (std::size_t i = 0; i < corpus.videos.size(); ++i) eval::accumulate(t, embed_video(m, corpus, i));
  return t;
}

}  // namespace avsync::train
