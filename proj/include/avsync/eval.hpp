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

// Offset-accuracy protocol: slide the audio embedding sequence by -15..15
// frames against the visual sequence, average similarities over the clip,
// and count a prediction as correct when it lands within +-1 of the truth.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "avsync/error.hpp"
#include "avsync/tensor.hpp"

namespace avsync::eval {

inline constexpr int kMaxShift = 15;
inline constexpr std::array<std::size_t, 6> kClipLengths{5, 7, 9, 11, 13, 15};
inline constexpr std::size_t kImagesPerSequence = 5;

// sims(s, p) = cos(visual[p], audio[p + s]) for s in [-15, 15]; entries whose
// shifted audio index leaves the sequence are marked invalid.
struct OffsetSweep {
  Tensor sims;  // (31, P)
  std::vector<std::uint8_t> valid;
  int max_shift = kMaxShift;

  std::size_t rows() const { return sims.dim(0); }
  std::size_t positions() const { return sims.dim(1); }
  int shift_of_row(std::size_t r) const { return static_cast<int>(r) - max_shift; }
  std::size_t row_of_shift(int s) const { return static_cast<std::size_t>(s + max_shift); }
  double at(int s, std::size_t p) const { return sims[row_of_shift(s) * positions() + p]; }
  bool is_valid(int s, std::size_t p) const { return valid[row_of_shift(s) * positions() + p] != 0; }
};

inline OffsetSweep offset_sweep(const Tensor& visual, const Tensor& audio, int max_shift = kMaxShift) {
  require_rank(visual, 2, "offset_sweep visual");
  require_rank(audio, 2, "offset_sweep audio");
  if (visual.dim(1) != audio.dim(1)) throw ShapeError("embedding dimension mismatch");
  const auto P = static_cast<std::int64_t>(visual.dim(0));
  const auto A = static_cast<std::int64_t>(audio.dim(0));
  const std::size_t D = visual.dim(1);
  const std::size_t R = static_cast<std::size_t>(2 * max_shift + 1);
  OffsetSweep sw{Tensor({R, static_cast<std::size_t>(P)}), std::vector<std::uint8_t>(R * P, 0), max_shift};
  for (std::size_t r = 0; r < R; ++r) {
    const int s = sw.shift_of_row(r);
    bool any = false;
    for (std::int64_t p = 0; p < P; ++p) {
      const std::int64_t q = p + s;
      const std::size_t idx = r * static_cast<std::size_t>(P) + static_cast<std::size_t>(p);
      if (q < 0 || q >= A) {
        sw.sims[idx] = -1.0;
        continue;
      }
      const std::span<const double> v(visual.data() + p * D, D), a(audio.data() + q * D, D);
      const double nv = l2_norm(v), na = l2_norm(a);
      if (!(nv > 0.0) || !(na > 0.0)) throw InvalidInput("zero embedding in sequence");
      sw.sims[idx] = std::clamp(dot(v, a) / (nv * na), -1.0, 1.0);
      sw.valid[idx] = 1;
      any = true;
    }
    if (!any) throw InvalidInput("sequence too short: shift " + std::to_string(s) + " has no valid position");
  }
  return sw;
}

// Candidate shifts in tie-break order: 0, -1, +1, -2, +2, ...
inline std::vector<int> tie_break_order(int max_shift) {
  std::vector<int> order{0};
  for (int k = 1; k <= max_shift; ++k) {
    order.push_back(-k);
    order.push_back(k);
  }
  return order;
}

// Averages each shift row over the image sequences inside the clip window
// [clip_start, clip_start + clip_length - 4) and returns the argmax shift.
inline int predict_offset(const OffsetSweep& sweep, std::size_t clip_length, std::size_t clip_start) {
  if (clip_length < kImagesPerSequence || clip_length % 2 == 0 || clip_length > 15)
    throw InvalidInput("clip_length must be one of 5, 7, 9, 11, 13, 15");
  const std::size_t n_pos = clip_length - kImagesPerSequence + 1;
  if (clip_start + n_pos > sweep.positions()) throw InvalidInput("clip window out of range");
  int best = 0;
  double best_val = -std::numeric_limits<double>::infinity();
  for (int s : tie_break_order(sweep.max_shift)) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t p = clip_start; p < clip_start + n_pos; ++p)
      if (sweep.is_valid(s, p)) {
        sum += sweep.at(s, p);
        ++n;
      }
    if (n == 0) continue;
    const double mean = sum / static_cast<double>(n);
    if (mean > best_val) {
      best_val = mean;
      best = s;
    }
  }
  if (!std::isfinite(best_val)) throw InvalidInput("no valid shift inside the clip window");
  return best;
}

inline bool score(int predicted, int truth) { return std::abs(predicted - truth) <= 1; }

// Embedding sequences of one video plus the sweep shift at which the audio
// truly matches (0 for an in-sync video).
struct VideoEmbeddings {
  std::string id;
  Tensor visual;
  Tensor audio;
  int true_shift = 0;
};

struct AccuracyTable {
  std::array<std::size_t, 6> clip_lengths = kClipLengths;
  std::array<std::uint64_t, 6> correct{};
  std::array<std::uint64_t, 6> total{};

  double accuracy(std::size_t i) const {
    return total[i] ? static_cast<double>(correct[i]) / static_cast<double>(total[i]) : 0.0;
  }
};

// Clip starts range over positions where the longest clip and every shift
// fit, so all clip lengths are scored on the same starts.
inline std::vector<std::size_t> evaluation_starts(std::size_t positions, int max_shift = kMaxShift) {
  std::vector<std::size_t> starts;
  const std::size_t longest = kClipLengths.back() - kImagesPerSequence + 1;
  const auto ms = static_cast<std::size_t>(max_shift);
  for (std::size_t p = ms; p + longest + ms <= positions; ++p) starts.push_back(p);
  return starts;
}

inline void accumulate(AccuracyTable& table, const VideoEmbeddings& video) {
  const OffsetSweep sw = offset_sweep(video.visual, video.audio);
  const auto starts = evaluation_starts(std::min(video.visual.dim(0), video.audio.dim(0)));
  if (starts.empty()) throw InvalidInput("video " + video.id + " too short for the protocol");
  for (std::size_t i = 0; i < table.clip_lengths.size(); ++i)
    for (std::size_t p : starts) {
      table.total[i] += 1;
      table.correct[i] += score(predict_offset(sw, table.clip_lengths[i], p), video.true_shift) ? 1 : 0;
    }
}

inline AccuracyTable accuracy_table(std::span<const VideoEmbeddings> videos) {
  AccuracyTable t;
  for (const auto& v : videos) accumulate(t, v);
  return t;
}

// Noisy planted-shift benchmark: Gaussian visual embeddings and audio
// equal to the visual track displaced by `shift` plus Gaussian noise. Each
// trial scores one clip start at every clip length.
struct PlantedShiftBenchmark {
  std::size_t trials = 500;
  int shift = 3;
  std::size_t dim = 16;
  double noise = 3.0;
  std::uint64_t seed = 1;
};

inline AccuracyTable planted_shift_accuracy(const PlantedShiftBenchmark& b) {
  if (std::abs(b.shift) > kMaxShift) throw InvalidInput("planted shift outside +-15");
  const std::size_t P = 2 * kMaxShift + kClipLengths.back() - kImagesPerSequence + 1;
  const std::size_t D = b.dim;
  Rng rng(b.seed);
  std::normal_distribution<double> n01;
  AccuracyTable table;
  for (std::size_t t = 0; t < b.trials; ++t) {
    VideoEmbeddings v{"trial" + std::to_string(t), Tensor({P, D}), Tensor({P, D}), b.shift};
    for (auto& x : v.visual.values()) x = n01(rng);
    for (std::size_t q = 0; q < P; ++q) {
      const auto src = static_cast<std::int64_t>(q) - b.shift;
      for (std::size_t k = 0; k < D; ++k) {
        const double base = src >= 0 && src < static_cast<std::int64_t>(P)
                                ? v.visual[static_cast<std::size_t>(src) * D + k]
                                : n01(rng);
        v.audio[q * D + k] = base + b.noise * n01(rng);
      }
    }
    accumulate(table, v);
  }
  return table;
}

inline nlohmann::json to_json(const AccuracyTable& t) {
  nlohmann::json j;
  j["clip_lengths"] = t.clip_lengths;
  std::vector<double> acc;
  for (std::size_t i = 0; i < t.clip_lengths.size(); ++i) acc.push_back(t.accuracy(i));
  j["accuracy"] = acc;
  j["correct"] = t.correct;
  j["total"] = t.total;
  return j;
}

inline std::string to_text(const AccuracyTable& t, const std::string& label = "model") {
  std::ostringstream os;
  os << std::left << std::setw(12) << "Clip length";
  for (auto L : t.clip_lengths) os << std::right << std::setw(7) << L;
  os << '\n' << std::left << std::setw(12) << label;
  for (std::size_t i = 0; i < t.clip_lengths.size(); ++i)
    os << std::right << std::setw(7) << std::fixed << std::setprecision(1) << 100.0 * t.accuracy(i);
  os << '\n';
  return os.str();
}

}  // namespace avsync::eval
