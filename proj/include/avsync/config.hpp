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

// JSON forms of every configuration and the top-level run document.
// Readers reject unknown keys.

#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "avsync/dsp.hpp"
#include "avsync/encoder.hpp"
#include "avsync/error.hpp"
#include "avsync/loss.hpp"
#include "avsync/sync_quality.hpp"
#include "avsync/synth.hpp"
#include "avsync/trainer.hpp"

namespace avsync::config {

using nlohmann::json;

// Reads fields of one JSON object and rejects whatever it did not consume.
class StrictReader {
 public:
  StrictReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw InvalidConfig(where_ + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw InvalidConfig(where_ + "." + key + ": " + e.what());
    }
  }

  template <class F>
  void nested(const char* key, F&& f) {
    seen_.insert(key);
    if (j_.contains(key)) f(j_.at(key), where_ + "." + key);
  }

  ~StrictReader() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw InvalidConfig(where_ + ": unknown key '" + k + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

// --- dsp ------------------------------------------------------------------

inline json to_json(const dsp::MelConfig& c) {
  return {{"sample_rate", c.sample_rate}, {"window_size", c.window_size}, {"hop_size", c.hop_size},
          {"n_mels", c.n_mels}, {"fmin", c.fmin}, {"fmax", c.fmax},
          {"frames_per_second_video", c.frames_per_second_video}, {"log_compress", c.log_compress},
          {"log_floor", c.log_floor}, {"clip_frames", c.clip_frames},
          {"window_extension_seconds", c.window_extension_seconds}};
}

inline void read(const json& j, dsp::MelConfig& c, const std::string& where = "mel") {
  StrictReader r(j, where);
  r.get("sample_rate", c.sample_rate);
  r.get("window_size", c.window_size);
  r.get("hop_size", c.hop_size);
  r.get("n_mels", c.n_mels);
  r.get("fmin", c.fmin);
  r.get("fmax", c.fmax);
  r.get("frames_per_second_video", c.frames_per_second_video);
  r.get("log_compress", c.log_compress);
  r.get("log_floor", c.log_floor);
  r.get("clip_frames", c.clip_frames);
  r.get("window_extension_seconds", c.window_extension_seconds);
}

// --- synth ----------------------------------------------------------------

// Planted defects for audit corpora: a deterministic subset of videos gets a
// sync offset or an off-screen segment, alternating.
struct DefectRecipe {
  double fraction = 0.0;
  int min_offset = 3;
  int max_offset = 15;
  double offscreen_fraction = 0.5;
  bool offsets = true;
  bool offscreen = true;
};

inline std::vector<synth::DefectPlan> make_defects(const DefectRecipe& d, std::size_t n_videos,
                                                   std::uint64_t seed) {
  if (!(d.fraction >= 0.0 && d.fraction <= 1.0)) throw InvalidConfig("defect fraction must lie in [0, 1]");
  if (d.min_offset < 0 || d.max_offset > synth::kMaxShift || d.min_offset > d.max_offset)
    throw InvalidConfig("defect offsets must satisfy 0 <= min <= max <= 15");
  if (!(d.offscreen_fraction > 0.0 && d.offscreen_fraction <= 1.0))
    throw InvalidConfig("offscreen_fraction must lie in (0, 1]");
  std::vector<synth::DefectPlan> plans(n_videos);
  const auto n_bad = static_cast<std::size_t>(std::llround(d.fraction * static_cast<double>(n_videos)));
  if (n_bad == 0) return plans;
  if (!d.offsets && !d.offscreen) throw InvalidConfig("defects need offsets or offscreen enabled");
  std::vector<std::size_t> order(n_videos);
  for (std::size_t i = 0; i < n_videos; ++i) order[i] = i;
  std::seed_seq ss{seed, std::uint64_t{0x64656665}};
  Rng rng(ss);
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_int_distribution<int> mag(d.min_offset, d.max_offset);
  std::uniform_real_distribution<double> begin(0.0, 1.0 - d.offscreen_fraction);
  for (std::size_t k = 0; k < n_bad; ++k) {
    auto& p = plans[order[k]];
    const bool use_offset = d.offsets && (!d.offscreen || k % 2 == 0);
    if (use_offset) {
      const int m = mag(rng);
      p.audio_offset = (rng() & 1) ? m : -m;
    } else {
      p.offscreen_fraction = d.offscreen_fraction;
      p.offscreen_begin = begin(rng);
    }
  }
  return plans;
}

inline json to_json(const DefectRecipe& d) {
  return {{"fraction", d.fraction}, {"min_offset", d.min_offset}, {"max_offset", d.max_offset},
          {"offscreen_fraction", d.offscreen_fraction}, {"offsets", d.offsets},
          {"offscreen", d.offscreen}};
}

inline void read(const json& j, DefectRecipe& d, const std::string& where = "defects") {
  StrictReader r(j, where);
  r.get("fraction", d.fraction);
  r.get("min_offset", d.min_offset);
  r.get("max_offset", d.max_offset);
  r.get("offscreen_fraction", d.offscreen_fraction);
  r.get("offsets", d.offsets);
  r.get("offscreen", d.offscreen);
}

inline json to_json(const synth::CorpusConfig& c) {
  return {{"n_videos", c.n_videos}, {"length", c.length}, {"latent_dim", c.latent_dim},
          {"visual_frame_shape", c.visual_frame_shape}, {"audio_features", c.audio_features},
          {"noise_scale", c.noise_scale}, {"silent_fraction", c.silent_fraction}, {"seed", c.seed},
          {"ar_coefficient", c.ar_coefficient}, {"silent_run_mean", c.silent_run_mean},
          {"silence_scale", c.silence_scale}, {"mel", to_json(c.mel)}};
}

inline void read(const json& j, synth::CorpusConfig& c, const std::string& where = "corpus") {
  StrictReader r(j, where);
  r.get("n_videos", c.n_videos);
  r.get("length", c.length);
  r.get("latent_dim", c.latent_dim);
  r.get("visual_frame_shape", c.visual_frame_shape);
  r.get("audio_features", c.audio_features);
  r.get("noise_scale", c.noise_scale);
  r.get("silent_fraction", c.silent_fraction);
  r.get("seed", c.seed);
  r.get("ar_coefficient", c.ar_coefficient);
  r.get("silent_run_mean", c.silent_run_mean);
  r.get("silence_scale", c.silence_scale);
  r.nested("mel", [&](const json& m, const std::string& w) { read(m, c.mel, w); });
}

inline json to_json(const synth::BatchSpec& b) {
  return {{"batch_size", b.batch_size}, {"n_hard", b.n_hard}, {"n_easy", b.n_easy},
          {"w_easy", b.w_easy}, {"min_hard_offset", b.min_hard_offset},
          {"max_hard_offset", b.max_hard_offset}, {"seed", b.seed}};
}

inline void read(const json& j, synth::BatchSpec& b, const std::string& where = "batch") {
  StrictReader r(j, where);
  r.get("batch_size", b.batch_size);
  r.get("n_hard", b.n_hard);
  r.get("n_easy", b.n_easy);
  r.get("w_easy", b.w_easy);
  r.get("min_hard_offset", b.min_hard_offset);
  r.get("max_hard_offset", b.max_hard_offset);
  r.get("seed", b.seed);
}

// --- encoders -------------------------------------------------------------

inline json to_json(const nn::EncoderConfig& c) {
  json blocks = json::array();
  for (const auto& b : c.blocks)
    blocks.push_back({{"out_channels", b.out_channels}, {"kernel", b.kernel},
                      {"dropblock", b.dropblock}, {"blurpool", b.blurpool}});
  return {{"input_shape", c.input_shape},
          {"blocks", blocks},
          {"embed_dim", c.embed_dim},
          {"drop", {{"rate", c.drop.drop_rate}, {"block_size", c.drop.block_size},
                    {"dims", c.drop.dims == nn::DropDims::k3D ? "3d" : "2d"}}},
          {"blur_taps", c.blur.taps},
          {"bn", {{"momentum", c.bn.momentum}, {"eps", c.bn.eps}}},
          {"init_slope", c.init_slope}};
}

inline void read(const json& j, nn::EncoderConfig& c, const std::string& where = "encoder") {
  StrictReader r(j, where);
  r.get("input_shape", c.input_shape);
  r.nested("blocks", [&](const json& arr, const std::string& w) {
    if (!arr.is_array()) throw InvalidConfig(w + ": expected an array");
    c.blocks.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      nn::BlockSpec b;
      StrictReader br(arr[i], w + "[" + std::to_string(i) + "]");
      br.get("out_channels", b.out_channels);
      br.get("kernel", b.kernel);
      br.get("dropblock", b.dropblock);
      br.get("blurpool", b.blurpool);
      c.blocks.push_back(b);
    }
  });
  r.get("embed_dim", c.embed_dim);
  r.nested("drop", [&](const json& d, const std::string& w) {
    StrictReader dr(d, w);
    dr.get("rate", c.drop.drop_rate);
    dr.get("block_size", c.drop.block_size);
    std::string dims = c.drop.dims == nn::DropDims::k3D ? "3d" : "2d";
    dr.get("dims", dims);
    if (dims != "2d" && dims != "3d") throw InvalidConfig(w + ".dims must be 2d or 3d");
    c.drop.dims = dims == "3d" ? nn::DropDims::k3D : nn::DropDims::k2D;
  });
  r.get("blur_taps", c.blur.taps);
  r.nested("bn", [&](const json& b, const std::string& w) {
    StrictReader bnr(b, w);
    bnr.get("momentum", c.bn.momentum);
    bnr.get("eps", c.bn.eps);
  });
  r.get("init_slope", c.init_slope);
}

// --- trainer --------------------------------------------------------------

inline json to_json(const train::TrainConfig& c) {
  return {{"preset", c.preset},
          {"loss", loss::to_string(c.loss)},
          {"batch", to_json(c.batch)},
          {"learning_rate", c.learning_rate},
          {"cosine_decay", c.cosine_decay},
          {"lr_floor", c.lr_floor},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"epochs_main", c.epochs_main},
          {"epochs_bn_tune", c.epochs_bn_tune},
          {"steps_per_epoch", c.steps_per_epoch},
          {"recalibrate_bn", c.recalibrate_bn},
          {"seed", c.seed},
          {"dropblock", c.dropblock},
          {"learn_temperature", c.learn_temperature},
          {"tau_warmup_epochs", c.tau_warmup_epochs},
          {"tau_learning_rate", c.tau_learning_rate},
          {"initial_tau", c.initial_tau},
          {"bbce_simplified", c.bbce_simplified},
          {"margin", c.margin},
          {"visual", to_json(c.visual)},
          {"audio", to_json(c.audio)}};
}

inline void read(const json& j, train::TrainConfig& c, const std::string& where = "train") {
  StrictReader r(j, where);
  r.get("preset", c.preset);
  std::string ls = loss::to_string(c.loss);
  r.get("loss", ls);
  c.loss = loss::loss_kind_from_string(ls);
  r.nested("batch", [&](const json& b, const std::string& w) { read(b, c.batch, w); });
  r.get("learning_rate", c.learning_rate);
  r.get("cosine_decay", c.cosine_decay);
  r.get("lr_floor", c.lr_floor);
  r.get("beta1", c.beta1);
  r.get("beta2", c.beta2);
  r.get("eps", c.eps);
  r.get("epochs_main", c.epochs_main);
  r.get("epochs_bn_tune", c.epochs_bn_tune);
  r.get("steps_per_epoch", c.steps_per_epoch);
  r.get("recalibrate_bn", c.recalibrate_bn);
  r.get("seed", c.seed);
  r.get("dropblock", c.dropblock);
  r.get("learn_temperature", c.learn_temperature);
  r.get("tau_warmup_epochs", c.tau_warmup_epochs);
  r.get("tau_learning_rate", c.tau_learning_rate);
  r.get("initial_tau", c.initial_tau);
  r.get("bbce_simplified", c.bbce_simplified);
  r.get("margin", c.margin);
  r.nested("visual", [&](const json& e, const std::string& w) { read(e, c.visual, w); });
  r.nested("audio", [&](const json& e, const std::string& w) { read(e, c.audio, w); });
}

// --- audit ----------------------------------------------------------------

inline json to_json(const quality::ReportOptions& o) {
  return {{"w", o.w},
          {"threshold_low", o.active.threshold_low},
          {"threshold_mean", o.active.threshold_mean},
          {"min_chunk", o.active.min_chunk},
          {"prune_islands", o.active.prune_islands},
          {"min_probability", o.thresholds.min_probability},
          {"max_offscreen", o.thresholds.max_offscreen}};
}

inline void read(const json& j, quality::ReportOptions& o, const std::string& where = "audit") {
  StrictReader r(j, where);
  r.get("w", o.w);
  r.get("threshold_low", o.active.threshold_low);
  r.get("threshold_mean", o.active.threshold_mean);
  r.get("min_chunk", o.active.min_chunk);
  r.get("prune_islands", o.active.prune_islands);
  r.get("min_probability", o.thresholds.min_probability);
  r.get("max_offscreen", o.thresholds.max_offscreen);
}

// --- run document ---------------------------------------------------------

struct RunConfig {
  std::string preset = "desk";
  synth::CorpusConfig corpus;
  DefectRecipe defects;
  train::TrainConfig train;
  quality::ReportOptions audit;
  std::size_t held_out_videos = 16;  // size of the evaluation corpus

  void validate() const {
    corpus.validate();
    corpus.mel.validate();
    train.validate();
    if (held_out_videos < 1) throw InvalidConfig("held_out_videos must be positive");
  }
};

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"desk", "full"};
  return names;
}

// Presets are built fresh on every call, so callers can never mutate them.
inline RunConfig preset(const std::string& name) {
  RunConfig rc;
  rc.preset = name;
  if (name == "desk") {
    rc.train = train::TrainConfig::desk(rc.corpus);
  } else if (name == "full") {
    rc.train = train::TrainConfig::full();
  } else {
    throw InvalidConfig("unknown preset '" + name + "'");
  }
  return rc;
}

inline json to_json(const RunConfig& rc) {
  return {{"preset", rc.preset},
          {"corpus", to_json(rc.corpus)},
          {"defects", to_json(rc.defects)},
          {"train", to_json(rc.train)},
          {"audit", to_json(rc.audit)},
          {"held_out_videos", rc.held_out_videos}};
}

// Overlays `j` on the preset it names (default desk).
inline RunConfig from_json(const json& j) {
  if (!j.is_object()) throw InvalidConfig("run config must be a JSON object");
  std::string name = "desk";
  if (j.contains("preset")) name = j.at("preset").get<std::string>();
  RunConfig rc = preset(name);
  {
    StrictReader r(j, "config");
    r.get("preset", rc.preset);
    r.nested("corpus", [&](const json& c, const std::string& w) { read(c, rc.corpus, w); });
    r.nested("defects", [&](const json& c, const std::string& w) { read(c, rc.defects, w); });
    if (name == "desk") {
      // Desk encoders follow the corpus geometry unless overridden below.
      rc.train.visual = train::synthetic_visual_encoder(synth::visual_input_shape(rc.corpus));
      rc.train.audio = train::synthetic_audio_encoder(synth::audio_input_shape(rc.corpus));
    }
    r.nested("train", [&](const json& c, const std::string& w) { read(c, rc.train, w); });
    r.nested("audit", [&](const json& c, const std::string& w) { read(c, rc.audit, w); });
    r.get("held_out_videos", rc.held_out_videos);
  }
  rc.validate();
  return rc;
}

}  // namespace avsync::config
