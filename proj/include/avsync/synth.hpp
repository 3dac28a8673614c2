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

// Synthetic paired audio-visual corpora with known synchronization.
//
// Each video carries a shared latent track z_t (order-1 autoregressive). The
// visual view is a fixed random linear map of the visual latent per image
// frame; the audio view is another fixed map of the audio latent sampled at
// mel rate (3.2 rows per image). Silent runs replace both latents with
// independent low-amplitude noise. Defects (audio offsets, off-screen
// speakers) are planted by editing the audio latent.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "avsync/dsp.hpp"
#include "avsync/error.hpp"
#include "avsync/tensor.hpp"

namespace avsync::synth {

inline constexpr int kMaxShift = 15;
inline constexpr std::size_t kClipFrames = 5;

struct CorpusConfig {
  std::size_t n_videos = 64;
  std::size_t length = 120;       // image frames per video
  std::size_t latent_dim = 8;
  Shape visual_frame_shape{3, 4, 8};  // per-frame (C, H, W); clips stack 5 frames
  std::size_t audio_features = 16;    // mel "bins" per audio row
  double noise_scale = 0.1;
  double silent_fraction = 0.0;
  std::uint64_t seed = 7;
  double ar_coefficient = 0.9;
  double silent_run_mean = 10.0;
  double silence_scale = 0.1;
  dsp::MelConfig mel;

  std::size_t visual_obs_dim() const { return element_count(visual_frame_shape); }
  std::size_t audio_rows() const {
    return static_cast<std::size_t>(dsp::image_to_mel_index(static_cast<std::int64_t>(length), mel));
  }

  void validate() const {
    if (n_videos < 1) throw InvalidConfig("need at least one video");
    if (length < 2 * kMaxShift + kClipFrames)
      throw InvalidConfig("video length must be >= 35 frames");
    if (latent_dim < 1 || audio_features < 1 || visual_frame_shape.size() != 3)
      throw InvalidConfig("bad corpus dimensions");
    if (!(silent_fraction >= 0.0 && silent_fraction < 1.0))
      throw InvalidConfig("silent_fraction must lie in [0, 1)");
    if (!(noise_scale >= 0.0)) throw InvalidConfig("noise_scale must be >= 0");
  }
};

// Planted defect for one video. `audio_offset` follows the sync-quality
// convention: the audio matching image j sits at audio index j - offset.
struct DefectPlan {
  int audio_offset = 0;
  double offscreen_begin = 0.0;  // fraction of the video
  double offscreen_fraction = 0.0;
};

struct LatentVideo {
  std::string id;
  std::size_t length = 0;
  Tensor visual_latent;  // (length, latent_dim)
  Tensor audio_latent;   // (length, latent_dim), per image frame
  std::vector<std::uint8_t> silent_mask;
  std::vector<std::uint8_t> offscreen_mask;
  int audio_offset = 0;
  Tensor visual_view;  // (length, visual_obs_dim)
  Tensor audio_view;   // (audio_rows, audio_features)
};

struct Corpus {
  CorpusConfig config;
  Tensor visual_map;  // (visual_obs_dim, latent_dim)
  Tensor audio_map;   // (audio_features, latent_dim)
  std::vector<LatentVideo> videos;
};

namespace detail {

inline Tensor ar_track(std::size_t length, std::size_t dim, double coeff, Rng& rng) {
  std::normal_distribution<double> n01;
  Tensor z({length, dim});
  const double innov = std::sqrt(1.0 - coeff * coeff);
  for (std::size_t d = 0; d < dim; ++d) z[d] = n01(rng);
  for (std::size_t t = 1; t < length; ++t)
    for (std::size_t d = 0; d < dim; ++d)
      z[t * dim + d] = coeff * z[(t - 1) * dim + d] + innov * n01(rng);
  return z;
}

// Exactly round(fraction * length) silent frames, laid out as contiguous runs
// with geometric lengths separated by speaking gaps of random size.
inline std::vector<std::uint8_t> silent_runs(std::size_t length, double fraction,
                                             double run_mean, Rng& rng) {
  std::vector<std::uint8_t> mask(length, 0);
  const auto target = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(length)));
  if (target == 0) return mask;
  std::geometric_distribution<std::size_t> geo(1.0 / run_mean);
  std::vector<std::size_t> runs;
  std::size_t total = 0;
  while (total < target) {
    const std::size_t r = std::min(1 + geo(rng), target - total);
    runs.push_back(r);
    total += r;
  }
  std::size_t speaking = length - target;
  // Interior gaps need at least one speaking frame; merge runs if short on room.
  while (runs.size() > 1 && runs.size() - 1 > speaking) {
    runs[runs.size() - 2] += runs.back();
    runs.pop_back();
  }
  const std::size_t free_frames = speaking - (runs.size() - 1);
  std::uniform_int_distribution<std::size_t> cut(0, free_frames);
  std::vector<std::size_t> cuts(runs.size());
  for (auto& c : cuts) c = cut(rng);
  std::sort(cuts.begin(), cuts.end());
  std::size_t pos = 0, prev = 0;
  for (std::size_t k = 0; k < runs.size(); ++k) {
    pos += (cuts[k] - prev) + (k > 0 ? 1 : 0);
    prev = cuts[k];
    for (std::size_t i = 0; i < runs[k]; ++i) mask[pos + i] = 1;
    pos += runs[k];
  }
  return mask;
}

inline void copy_row(const Tensor& src, std::size_t src_row, Tensor& dst, std::size_t dst_row) {
  const std::size_t d = src.dim(1);
  std::copy_n(src.data() + src_row * d, d, dst.data() + dst_row * d);
}

inline void project_rows(const Tensor& latent, std::size_t row, const Tensor& map, double noise,
                         std::normal_distribution<double>& n01, Rng& rng, double* out) {
  const std::size_t obs = map.dim(0), d = map.dim(1);
  const double* z = latent.data() + row * d;
  for (std::size_t o = 0; o < obs; ++o) {
    double acc = 0.0;
    for (std::size_t k = 0; k < d; ++k) acc += map[o * d + k] * z[k];
    out[o] = acc + noise * n01(rng);
  }
}

}  // namespace detail

inline Corpus generate_corpus(const CorpusConfig& cfg, const std::vector<DefectPlan>& defects = {}) {
  cfg.validate();
  if (!defects.empty() && defects.size() != cfg.n_videos)
    throw InvalidConfig("defect plan count must equal n_videos");
  Rng rng(cfg.seed);
  std::normal_distribution<double> n01;
  const std::size_t d = cfg.latent_dim;
  Corpus corpus;
  corpus.config = cfg;
  corpus.visual_map = random_normal({cfg.visual_obs_dim(), d}, rng, 1.0 / std::sqrt(double(d)));
  corpus.audio_map = random_normal({cfg.audio_features, d}, rng, 1.0 / std::sqrt(double(d)));

  const std::size_t L = cfg.length;
  for (std::size_t v = 0; v < cfg.n_videos; ++v) {
    const DefectPlan plan = defects.empty() ? DefectPlan{} : defects[v];
    if (std::abs(plan.audio_offset) > kMaxShift)
      throw InvalidConfig("planted offset outside +-15");
    LatentVideo vid;
    vid.id = "vid" + std::to_string(v);
    vid.length = L;
    vid.audio_offset = plan.audio_offset;

    // Margin of kMaxShift frames on both sides so offsets crop real latent.
    const Tensor z = detail::ar_track(L + 2 * kMaxShift, d, cfg.ar_coefficient, rng);
    vid.visual_latent = Tensor({L, d});
    vid.audio_latent = Tensor({L, d});
    for (std::size_t t = 0; t < L; ++t) {
      detail::copy_row(z, t + kMaxShift, vid.visual_latent, t);
      detail::copy_row(z, static_cast<std::size_t>(static_cast<int>(t + kMaxShift) + plan.audio_offset),
                       vid.audio_latent, t);
    }

    vid.offscreen_mask.assign(L, 0);
    if (plan.offscreen_fraction > 0.0) {
      const Tensor other = detail::ar_track(L, d, cfg.ar_coefficient, rng);
      const auto b = static_cast<std::size_t>(std::llround(plan.offscreen_begin * double(L)));
      const auto n = static_cast<std::size_t>(std::llround(plan.offscreen_fraction * double(L)));
      for (std::size_t t = b; t < std::min(L, b + n); ++t) {
        detail::copy_row(other, t, vid.audio_latent, t);
        vid.offscreen_mask[t] = 1;
      }
    }

    vid.silent_mask = detail::silent_runs(L, cfg.silent_fraction, cfg.silent_run_mean, rng);
    for (std::size_t t = 0; t < L; ++t) {
      if (!vid.silent_mask[t]) continue;
      for (std::size_t k = 0; k < d; ++k) {
        vid.visual_latent[t * d + k] = cfg.silence_scale * n01(rng);
        vid.audio_latent[t * d + k] = cfg.silence_scale * n01(rng);
      }
    }

    vid.visual_view = Tensor({L, cfg.visual_obs_dim()});
    for (std::size_t t = 0; t < L; ++t)
      detail::project_rows(vid.visual_latent, t, corpus.visual_map, cfg.noise_scale, n01, rng,
                           vid.visual_view.data() + t * cfg.visual_obs_dim());
    const std::size_t rows = cfg.audio_rows();
    vid.audio_view = Tensor({rows, cfg.audio_features});
    for (std::size_t i = 0; i < rows; ++i) {
      const auto f = static_cast<std::size_t>(dsp::mel_to_image_index(static_cast<std::int64_t>(i), cfg.mel));
      detail::project_rows(vid.audio_latent, f, corpus.audio_map, cfg.noise_scale, n01, rng,
                           vid.audio_view.data() + i * cfg.audio_features);
    }
    corpus.videos.push_back(std::move(vid));
  }
  return corpus;
}

// Splits a corpus by video index into [0, n_first) and the rest.
inline std::pair<Corpus, Corpus> split_corpus(const Corpus& c, std::size_t n_first) {
  if (n_first == 0 || n_first >= c.videos.size()) throw InvalidConfig("bad split point");
  Corpus a{c.config, c.visual_map, c.audio_map, {}};
  Corpus b = a;
  a.videos.assign(c.videos.begin(), c.videos.begin() + static_cast<std::ptrdiff_t>(n_first));
  b.videos.assign(c.videos.begin() + static_cast<std::ptrdiff_t>(n_first), c.videos.end());
  a.config.n_videos = a.videos.size();
  b.config.n_videos = b.videos.size();
  return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------
// Clip and window extraction.

inline std::size_t clip_count(const LatentVideo& v) { return v.length - kClipFrames + 1; }

// Visual clip of frames [start, start + 5) as (5 C, H, W), written at `out`.
inline void write_visual_clip(const Corpus& c, const LatentVideo& v, std::size_t start, double* out) {
  const std::size_t obs = c.config.visual_obs_dim();
  std::copy_n(v.visual_view.data() + start * obs, kClipFrames * obs, out);
}

// Extended 32-row audio window matched with the clip starting at `start`.
inline void write_audio_window(const Corpus& c, const LatentVideo& v, std::int64_t start,
                               double* out) {
  if (start < 0) throw InvalidInput("negative clip start");
  const auto rows = static_cast<std::int64_t>(v.audio_view.dim(0));
  const std::size_t F = c.config.audio_features;
  const auto w = dsp::audio_window(start, dsp::WindowMode::kExtended,
                                   static_cast<std::size_t>(rows), c.config.mel);
  for (std::int64_t r = w.begin; r < w.end; ++r) {
    double* dst = out + (r - w.begin) * static_cast<std::int64_t>(F);
    if (r < 0 || r >= rows) std::fill_n(dst, F, 0.0);
    else std::copy_n(v.audio_view.data() + r * static_cast<std::int64_t>(F), F, dst);
  }
}

inline Shape visual_input_shape(const CorpusConfig& cfg) {
  return {kClipFrames * cfg.visual_frame_shape[0], cfg.visual_frame_shape[1], cfg.visual_frame_shape[2]};
}

inline Shape audio_input_shape(const CorpusConfig& cfg) {
  return {1, dsp::window_frames(dsp::WindowMode::kExtended, cfg.mel), cfg.audio_features};
}

// ---------------------------------------------------------------------------
// Batch sampling.

struct BatchSpec {
  std::size_t batch_size = 16;
  std::size_t n_hard = 15;
  std::size_t n_easy = 15;
  double w_easy = 0.1;
  std::size_t min_hard_offset = 2;
  std::size_t max_hard_offset = kMaxShift;
  std::uint64_t seed = 1;

  void validate() const {
    if (batch_size < 1) throw InvalidConfig("batch_size must be positive");
    if (min_hard_offset < 2) throw InvalidConfig("min_hard_offset must be >= 2");
    if (max_hard_offset < min_hard_offset || max_hard_offset > std::size_t(kMaxShift))
      throw InvalidConfig("max_hard_offset must lie in [min_hard_offset, 15]");
  }
  std::size_t windows_per_sample() const { return 1 + n_hard + n_easy; }
};

struct AudioRef {
  std::size_t video = 0;
  std::size_t start = 0;  // first image frame of the matched clip
};

struct Sample {
  std::size_t video = 0;
  std::size_t start = 0;
  std::vector<int> hard_offsets;
  std::vector<AudioRef> easy;

  // Audio windows in order: positive, hard negatives, easy negatives.
  std::vector<AudioRef> audio_refs() const {
    std::vector<AudioRef> refs{{video, start}};
    for (int o : hard_offsets)
      refs.push_back({video, static_cast<std::size_t>(static_cast<int>(start) + o)});
    refs.insert(refs.end(), easy.begin(), easy.end());
    return refs;
  }
};

struct Batch {
  std::vector<Sample> samples;
  Tensor visual;  // (B, 5C, H, W)
  Tensor audio;   // (B * (1 + N_h + N_e), 1, 32, F)
};

// Anchors start in [15, length - 20] so every offset in +-15 is admissible.
inline std::vector<Sample> sample_indices(const Corpus& corpus, const BatchSpec& spec, Rng& rng) {
  spec.validate();
  if (corpus.videos.empty()) throw InvalidConfig("empty corpus");
  if (spec.n_easy > 0 && corpus.videos.size() < 2)
    throw InvalidConfig("easy negatives need at least two videos");
  const std::size_t L = corpus.config.length;
  std::uniform_int_distribution<std::size_t> pick_video(0, corpus.videos.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_anchor(kMaxShift, L - kClipFrames - kMaxShift);
  std::uniform_int_distribution<std::size_t> pick_any(0, L - kClipFrames);
  const auto span = static_cast<int>(spec.max_hard_offset - spec.min_hard_offset + 1);
  std::uniform_int_distribution<int> pick_offset(0, 2 * span - 1);

  std::vector<Sample> out(spec.batch_size);
  for (auto& s : out) {
    s.video = pick_video(rng);
    s.start = pick_anchor(rng);
    for (std::size_t k = 0; k < spec.n_hard; ++k) {
      const int u = pick_offset(rng);
      const int mag = static_cast<int>(spec.min_hard_offset) + (u % span);
      s.hard_offsets.push_back(u < span ? -mag : mag);
    }
    for (std::size_t k = 0; k < spec.n_easy; ++k) {
      std::size_t other = pick_video(rng);
      while (other == s.video) other = pick_video(rng);
      s.easy.push_back({other, pick_any(rng)});
    }
  }
  return out;
}

inline Tensor visual_batch(const Corpus& corpus, std::span<const AudioRef> clips) {
  Shape shape = visual_input_shape(corpus.config);
  shape.insert(shape.begin(), clips.size());
  Tensor t(shape);
  const std::size_t per = element_count(visual_input_shape(corpus.config));
  for (std::size_t i = 0; i < clips.size(); ++i)
    write_visual_clip(corpus, corpus.videos[clips[i].video], clips[i].start, t.data() + i * per);
  return t;
}

inline Tensor audio_batch(const Corpus& corpus, std::span<const AudioRef> refs) {
  Shape shape = audio_input_shape(corpus.config);
  shape.insert(shape.begin(), refs.size());
  Tensor t(shape);
  const std::size_t per = element_count(audio_input_shape(corpus.config));
  for (std::size_t i = 0; i < refs.size(); ++i)
    write_audio_window(corpus, corpus.videos[refs[i].video],
                       static_cast<std::int64_t>(refs[i].start), t.data() + i * per);
  return t;
}

inline Batch sample_batch(const Corpus& corpus, const BatchSpec& spec, Rng& rng) {
  Batch b;
  b.samples = sample_indices(corpus, spec, rng);
  std::vector<AudioRef> clips, refs;
  for (const auto& s : b.samples) {
    clips.push_back({s.video, s.start});
    const auto r = s.audio_refs();
    refs.insert(refs.end(), r.begin(), r.end());
  }
  b.visual = visual_batch(corpus, clips);
  b.audio = audio_batch(corpus, refs);
  return b;
}

// ---------------------------------------------------------------------------
// Ground-truth embeddings: least-squares inversion of the fixed maps,
// concatenated over the 5 frames of a clip. Audio rows belonging to the same
// image frame are averaged. The unit latent is scaled by sqrt(1 - b2) and one
// extra coordinate +-sqrt(b2) is appended (visual +, audio -), so
// cos = (1 - b2) * latent_cos - b2: unrelated content scores below zero while
// every ordering of similarities is kept.
inline constexpr double kOracleBias2 = 0.4;
// Temperature for scoring oracle embeddings when no checkpoint supplies one.
inline constexpr double kOracleTau = 0.02;

struct EmbeddingSequences {
  Tensor visual;  // (clips, D), unit rows
  Tensor audio;   // (clips, D), unit rows
};

namespace detail {

inline Eigen::MatrixXd pseudo_inverse(const Tensor& map) {
  Eigen::MatrixXd m(map.dim(0), map.dim(1));
  for (std::size_t r = 0; r < map.dim(0); ++r)
    for (std::size_t k = 0; k < map.dim(1); ++k) m(r, k) = map[r * map.dim(1) + k];
  return m.completeOrthogonalDecomposition().pseudoInverse();
}

inline void normalize_row(double* row, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += row[i] * row[i];
  s = std::sqrt(s);
  if (s > 0.0)
    for (std::size_t i = 0; i < n; ++i) row[i] /= s;
  else
    row[0] = 1.0;
}

}  // namespace detail

inline EmbeddingSequences oracle_embeddings(const Corpus& corpus, const LatentVideo& v) {
  const std::size_t d = corpus.config.latent_dim;
  const Eigen::MatrixXd pv = detail::pseudo_inverse(corpus.visual_map);
  const Eigen::MatrixXd pa = detail::pseudo_inverse(corpus.audio_map);
  const std::size_t L = v.length;
  Eigen::MatrixXd zv(d, L), za = Eigen::MatrixXd::Zero(d, L);
  std::vector<double> counts(L, 0.0);
  const std::size_t Dv = corpus.config.visual_obs_dim(), Fa = corpus.config.audio_features;
  for (std::size_t t = 0; t < L; ++t)
    zv.col(t) = pv * Eigen::Map<const Eigen::VectorXd>(v.visual_view.data() + t * Dv, Dv);
  for (std::size_t i = 0; i < v.audio_view.dim(0); ++i) {
    const auto f = static_cast<std::size_t>(dsp::mel_to_image_index(static_cast<std::int64_t>(i), corpus.config.mel));
    za.col(f) += pa * Eigen::Map<const Eigen::VectorXd>(v.audio_view.data() + i * Fa, Fa);
    counts[f] += 1.0;
  }
  for (std::size_t t = 0; t < L; ++t)
    if (counts[t] > 0) za.col(t) /= counts[t];

  const std::size_t M = clip_count(v), Dz = kClipFrames * d, D = Dz + 1;
  const double a = std::sqrt(1.0 - kOracleBias2), b = std::sqrt(kOracleBias2);
  EmbeddingSequences out{Tensor({M, D}), Tensor({M, D})};
  for (std::size_t p = 0; p < M; ++p) {
    for (std::size_t f = 0; f < kClipFrames; ++f)
      for (std::size_t k = 0; k < d; ++k) {
        out.visual[p * D + f * d + k] = zv(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p + f));
        out.audio[p * D + f * d + k] = za(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p + f));
      }
    for (Tensor* t : {&out.visual, &out.audio}) {
      double* row = t->data() + p * D;
      detail::normalize_row(row, Dz);
      for (std::size_t k = 0; k < Dz; ++k) row[k] *= a;
    }
    out.visual[p * D + Dz] = b;
    out.audio[p * D + Dz] = -b;
  }
  return out;
}

}  // namespace avsync::synth
