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

// Log-mel spectrograms and the image-frame to mel-frame alignment used when
// cutting audio windows for a 5-image clip.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "avsync/error.hpp"
#include "avsync/tensor.hpp"

namespace avsync::dsp {

struct MelConfig {
  int sample_rate = 16000;
  int window_size = 800;
  int hop_size = 200;
  int n_mels = 80;
  double fmin = 55.0;
  double fmax = 7600.0;
  int frames_per_second_video = 25;
  // Natural-log compression with a floor on mel power. When false the grid
  // holds raw (non-negative) mel power.
  bool log_compress = true;
  double log_floor = 1e-5;
  int clip_frames = 5;
  double window_extension_seconds = 0.1;

  double mel_steps_per_image() const {
    return static_cast<double>(sample_rate) /
           (static_cast<double>(frames_per_second_video) * hop_size);
  }

  void validate() const {
    if (hop_size <= 0 || window_size < hop_size)
      throw InvalidConfig("need window_size >= hop_size > 0");
    if (n_mels <= 0) throw InvalidConfig("n_mels must be positive");
    if (sample_rate <= 0 || frames_per_second_video <= 0)
      throw InvalidConfig("rates must be positive");
    if (!(fmin >= 0.0 && fmax > fmin && fmax <= sample_rate / 2.0))
      throw InvalidConfig("need 0 <= fmin < fmax <= nyquist");
  }
};

struct MelSpectrogram {
  Tensor values;  // (frames, n_mels)
  MelConfig config;

  std::size_t frames() const { return values.dim(0); }
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Center frequencies of the n_mels filters plus the two outer edges, i.e.
// n_mels + 2 points equally spaced on the mel scale.
inline std::vector<double> mel_band_edges(const MelConfig& cfg) {
  const double lo = hz_to_mel(cfg.fmin);
  const double hi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(static_cast<std::size_t>(cfg.n_mels) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) /
                                  static_cast<double>(edges.size() - 1));
  return edges;
}

// Triangular, area-normalized filters, shape (n_mels, window_size/2 + 1).
inline Tensor mel_filterbank(const MelConfig& cfg) {
  cfg.validate();
  const std::size_t bins = static_cast<std::size_t>(cfg.window_size) / 2 + 1;
  const auto edges = mel_band_edges(cfg);
  Tensor fb({static_cast<std::size_t>(cfg.n_mels), bins});
  for (std::size_t m = 0; m < static_cast<std::size_t>(cfg.n_mels); ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    const double norm = 2.0 / (right - left);
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / cfg.window_size;
      double w = 0.0;
      if (f > left && f <= center) w = (f - left) / (center - left);
      else if (f > center && f < right) w = (right - f) / (right - center);
      fb[m * bins + k] = w * norm;
    }
  }
  return fb;
}

namespace detail {

// Mirror index into [0, n) without repeating the edge sample.
inline std::size_t reflect_index(std::int64_t i, std::size_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (static_cast<std::int64_t>(n) - 1);
  i %= period;
  if (i < 0) i += period;
  if (i >= static_cast<std::int64_t>(n)) i = period - i;
  return static_cast<std::size_t>(i);
}

}  // namespace detail

// STFT with a periodic Hann window, reflect padding and frame k centered at
// sample k * hop, so the frame count is ceil(len / hop).
inline MelSpectrogram mel_spectrogram(std::span<const double> signal,
                                      const MelConfig& cfg = {}) {
  cfg.validate();
  if (signal.empty()) throw InvalidInput("empty signal");
  for (double s : signal)
    if (!std::isfinite(s)) throw InvalidInput("signal contains non-finite samples");

  const std::size_t n_fft = static_cast<std::size_t>(cfg.window_size);
  const std::size_t hop = static_cast<std::size_t>(cfg.hop_size);
  const std::size_t bins = n_fft / 2 + 1;
  const std::size_t frames = (signal.size() + hop - 1) / hop;
  const auto half = static_cast<std::int64_t>(n_fft / 2);

  std::vector<double> window(n_fft);
  for (std::size_t n = 0; n < n_fft; ++n)
    window[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / n_fft);
  std::vector<double> cos_table(n_fft), sin_table(n_fft);
  for (std::size_t n = 0; n < n_fft; ++n) {
    cos_table[n] = std::cos(2.0 * std::numbers::pi * n / n_fft);
    sin_table[n] = std::sin(2.0 * std::numbers::pi * n / n_fft);
  }
  const Tensor fb = mel_filterbank(cfg);

  MelSpectrogram out{Tensor({frames, static_cast<std::size_t>(cfg.n_mels)}), cfg};
  std::vector<double> frame(n_fft), power(bins);
  for (std::size_t t = 0; t < frames; ++t) {
    const std::int64_t start = static_cast<std::int64_t>(t * hop) - half;
    for (std::size_t n = 0; n < n_fft; ++n)
      frame[n] = window[n] *
                 signal[detail::reflect_index(start + static_cast<std::int64_t>(n),
                                              signal.size())];
    for (std::size_t k = 0; k < bins; ++k) {
      double re = 0.0, im = 0.0;
      std::size_t idx = 0;
      for (std::size_t n = 0; n < n_fft; ++n) {
        re += frame[n] * cos_table[idx];
        im -= frame[n] * sin_table[idx];
        idx += k;
        if (idx >= n_fft) idx -= n_fft;
      }
      power[k] = re * re + im * im;
    }
    for (std::size_t m = 0; m < static_cast<std::size_t>(cfg.n_mels); ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < bins; ++k) e += fb[m * bins + k] * power[k];
      out.values[t * cfg.n_mels + m] =
          cfg.log_compress ? std::log(std::max(e, cfg.log_floor)) : e;
    }
  }
  return out;
}

enum class IndexRounding { kFloor, kNearest };

// Mel frame aligned with image frame j. Integer arithmetic keeps
// floor(3.2 * j) exact for the default rates.
inline std::int64_t image_to_mel_index(std::int64_t j, const MelConfig& cfg = {},
                                       IndexRounding rounding = IndexRounding::kFloor) {
  if (j < 0) throw InvalidInput("negative image frame index");
  const std::int64_t num = static_cast<std::int64_t>(cfg.sample_rate) * j;
  const std::int64_t den =
      static_cast<std::int64_t>(cfg.frames_per_second_video) * cfg.hop_size;
  if (rounding == IndexRounding::kFloor) return num / den;
  return (2 * num + den) / (2 * den);
}

// Image frame whose mel span [floor(3.2 f), floor(3.2 (f + 1))) contains mel
// row i (floor mapping).
inline std::int64_t mel_to_image_index(std::int64_t i, const MelConfig& cfg = {}) {
  if (i < 0) throw InvalidInput("negative mel frame index");
  const std::int64_t num = static_cast<std::int64_t>(cfg.sample_rate);
  const std::int64_t den =
      static_cast<std::int64_t>(cfg.frames_per_second_video) * cfg.hop_size;
  return (den * (i + 1) + num - 1) / num - 1;
}

enum class WindowMode { kConventional, kExtended };

struct WindowInterval {
  std::int64_t begin = 0;  // inclusive, may be negative
  std::int64_t end = 0;    // exclusive, may exceed the frame count
  std::size_t pad_left = 0;
  std::size_t pad_right = 0;

  std::size_t length() const { return static_cast<std::size_t>(end - begin); }
};

inline std::size_t conventional_window_frames(const MelConfig& cfg) {
  return static_cast<std::size_t>(
      std::llround(cfg.clip_frames * cfg.mel_steps_per_image()));
}

inline std::size_t window_extension_frames(const MelConfig& cfg) {
  return static_cast<std::size_t>(std::llround(
      cfg.window_extension_seconds * cfg.sample_rate / cfg.hop_size));
}

inline std::size_t window_frames(WindowMode mode, const MelConfig& cfg = {}) {
  const std::size_t base = conventional_window_frames(cfg);
  return mode == WindowMode::kConventional ? base
                                           : base + 2 * window_extension_frames(cfg);
}

// Mel interval matched with the clip whose first image is j. Portions outside
// [0, total_frames) are reported as padding and extracted as zeros.
inline WindowInterval audio_window(std::int64_t j, WindowMode mode,
                                   std::size_t total_frames,
                                   const MelConfig& cfg = {},
                                   IndexRounding rounding = IndexRounding::kFloor) {
  if (total_frames == 0) throw InvalidInput("no mel frames");
  const std::int64_t i = image_to_mel_index(j, cfg, rounding);
  const auto base = static_cast<std::int64_t>(conventional_window_frames(cfg));
  const auto ext = mode == WindowMode::kExtended
                       ? static_cast<std::int64_t>(window_extension_frames(cfg))
                       : 0;
  WindowInterval w;
  w.begin = i - ext;
  w.end = i + base + ext;
  const auto total = static_cast<std::int64_t>(total_frames);
  w.pad_left = static_cast<std::size_t>(std::max<std::int64_t>(0, -w.begin));
  w.pad_right = static_cast<std::size_t>(std::max<std::int64_t>(0, w.end - total));
  return w;
}

// Copies rows [begin, end) of a (frames, features) grid, zero-filling rows
// that fall outside the grid.
inline Tensor extract_window(const Tensor& grid, const WindowInterval& w) {
  require_rank(grid, 2, "extract_window");
  const std::size_t feats = grid.dim(1);
  const auto total = static_cast<std::int64_t>(grid.dim(0));
  Tensor out({w.length(), feats});
  for (std::int64_t r = w.begin; r < w.end; ++r) {
    if (r < 0 || r >= total) continue;
    std::copy_n(grid.data() + r * feats, feats,
                out.data() + (r - w.begin) * feats);
  }
  return out;
}

}  // namespace avsync::dsp
