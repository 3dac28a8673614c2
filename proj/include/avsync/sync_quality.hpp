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

// Per-video sync quality: global offset, active-speaker segments, offscreen
// ratio and probability at offset, computed from a window-offset by frame
// similarity matrix.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "avsync/error.hpp"
#include "avsync/loss.hpp"
#include "avsync/tensor.hpp"

namespace avsync::quality {

// S(r, j) = a[j + r - w] . v[j]; entries whose audio index leaves the
// sequence hold -1 and are masked from every downstream statistic.
struct SimilarityMatrix {
  Tensor S;  // (2w + 1, N_v)
  std::vector<std::uint8_t> valid;
  int w = 15;
  double tau = 0.1;

  std::size_t rows() const { return S.dim(0); }
  std::size_t frames() const { return S.dim(1); }
  double at(std::size_t r, std::size_t j) const { return S[r * frames() + j]; }
  bool is_valid(std::size_t r, std::size_t j) const { return valid[r * frames() + j] != 0; }
};

namespace detail {
inline void check_unit_rows(const Tensor& t, const char* what) {
  require_rank(t, 2, what);
  const std::size_t D = t.dim(1);
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    const double n = l2_norm(std::span(t.data() + i * D, D));
    if (std::abs(n - 1.0) > 1e-6) throw InvalidInput(std::string(what) + " rows must be unit-normalized");
  }
}
}  // namespace detail

inline SimilarityMatrix similarity_matrix(const Tensor& audio, const Tensor& visual, int w = 15,
                                          double tau = 0.1) {
  detail::check_unit_rows(audio, "audio sequence");
  detail::check_unit_rows(visual, "visual sequence");
  if (audio.dim(1) != visual.dim(1)) throw ShapeError("embedding dimension mismatch");
  if (w < 1) throw InvalidInput("window radius must be positive");
  const auto N = static_cast<std::int64_t>(visual.dim(0));
  const auto A = static_cast<std::int64_t>(audio.dim(0));
  const std::size_t D = visual.dim(1), R = static_cast<std::size_t>(2 * w + 1);
  SimilarityMatrix m{Tensor({R, static_cast<std::size_t>(N)}, -1.0),
                     std::vector<std::uint8_t>(R * static_cast<std::size_t>(N), 0), w, tau};
  for (std::size_t r = 0; r < R; ++r) {
    bool any = false;
    for (std::int64_t j = 0; j < N; ++j) {
      const std::int64_t i = j + static_cast<std::int64_t>(r) - w;
      if (i < 0 || i >= A) continue;
      const std::size_t idx = r * static_cast<std::size_t>(N) + static_cast<std::size_t>(j);
      m.S[idx] = std::clamp(dot(std::span(audio.data() + i * D, D), std::span(visual.data() + j * D, D)), -1.0, 1.0);
      m.valid[idx] = 1;
      any = true;
    }
    if (!any) throw InvalidInput("sequences too short for window radius " + std::to_string(w));
  }
  return m;
}

// Offsets in tie-break order: 0, -1, +1, -2, +2, ...
inline int global_offset(const SimilarityMatrix& m) {
  auto row_mean = [&](std::size_t r) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t j = 0; j < m.frames(); ++j)
      if (m.is_valid(r, j)) {
        s += m.at(r, j);
        ++n;
      }
    return n ? s / static_cast<double>(n) : -std::numeric_limits<double>::infinity();
  };
  int best = 0;
  double best_val = row_mean(static_cast<std::size_t>(m.w));
  for (int k = 1; k <= m.w; ++k)
    for (int off : {-k, k}) {
      const double v = row_mean(static_cast<std::size_t>(m.w - off));
      if (v > best_val) {
        best_val = v;
        best = off;
      }
    }
  return best;
}

// Normalized 3-tap Gaussian with sigma = 1.
inline std::array<double, 3> gaussian_taps() {
  const double e = std::exp(-0.5);
  const double z = 1.0 + 2.0 * e;
  return {e / z, 1.0 / z, e / z};
}

// Gaussian smoothing along the offset axis with half-sample reflection at the
// matrix edges. Masked neighbors are dropped and the remaining taps
// renormalized.
inline SimilarityMatrix smooth(const SimilarityMatrix& m) {
  const auto taps = gaussian_taps();
  SimilarityMatrix out = m;
  const auto R = static_cast<std::int64_t>(m.rows());
  for (std::size_t j = 0; j < m.frames(); ++j)
    for (std::int64_t r = 0; r < R; ++r) {
      if (!m.is_valid(static_cast<std::size_t>(r), j)) continue;
      double acc = 0.0, wsum = 0.0;
      for (int k = -1; k <= 1; ++k) {
        std::int64_t rr = r + k;
        if (rr < 0) rr = -rr - 1;
        if (rr >= R) rr = 2 * R - rr - 1;
        if (!m.is_valid(static_cast<std::size_t>(rr), j)) continue;
        acc += taps[static_cast<std::size_t>(k + 1)] * m.at(static_cast<std::size_t>(rr), j);
        wsum += taps[static_cast<std::size_t>(k + 1)];
      }
      out.S[static_cast<std::size_t>(r) * m.frames() + j] = acc / wsum;
    }
  return out;
}

// Elementwise sync probability; masked entries are 0.
inline Tensor probability_map(const SimilarityMatrix& sf, double tau) {
  const loss::Temperature t = loss::Temperature::from_tau(tau);
  Tensor P(sf.S.shape(), 0.0);
  for (std::size_t i = 0; i < P.size(); ++i)
    if (sf.valid[i]) P[i] = loss::sync_probability(sf.S[i], t);
  return P;
}

struct BandBest {
  std::vector<double> prob;        // P_m[j]
  std::vector<int> row;            // argmax row, -1 when the band is fully masked
  bool clamped = false;            // band reached past the matrix edge
};

// Maximum over the inclusive band {m - 1, m, m + 1} per frame.
inline BandBest per_frame_best(const Tensor& P, const std::vector<std::uint8_t>& valid, int m) {
  require_rank(P, 2, "per_frame_best");
  const auto R = static_cast<int>(P.dim(0));
  const std::size_t N = P.dim(1);
  if (m < 0 || m >= R) throw InvalidInput("offset row outside the matrix");
  BandBest b{std::vector<double>(N, 0.0), std::vector<int>(N, -1), m - 1 < 0 || m + 1 >= R};
  const int lo = std::max(0, m - 1), hi = std::min(R - 1, m + 1);
  for (std::size_t j = 0; j < N; ++j)
    for (int r = lo; r <= hi; ++r) {
      const std::size_t idx = static_cast<std::size_t>(r) * N + j;
      if (!valid[idx]) continue;
      if (b.row[j] < 0 || P[idx] > b.prob[j]) {
        b.prob[j] = P[idx];
        b.row[j] = r;
      }
    }
  return b;
}

struct Segment {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
  bool on = false;

  std::size_t size() const { return end - start; }
  bool operator==(const Segment&) const = default;
};

using ActiveSegments = std::vector<Segment>;

struct ActiveOptions {
  double threshold_low = 0.4;
  double threshold_mean = 0.66;
  std::size_t min_chunk = 4;
  bool prune_islands = true;
};

namespace detail {
inline ActiveSegments merge_equal(const ActiveSegments& in) {
  ActiveSegments out;
  for (const auto& s : in) {
    if (!out.empty() && out.back().on == s.on) out.back().end = s.end;
    else out.push_back(s);
  }
  return out;
}
}  // namespace detail

// Threshold, connected components, component-mean demotion, merge; then the
// optional pruning: runs of >= 2 adjacent short segments are set off, and a
// short on-segment whose neighbors are off (or the sequence edge) is set off.
inline ActiveSegments detect_active(std::span<const double> pm, const ActiveOptions& opt = {}) {
  ActiveSegments segs;
  for (std::size_t j = 0; j < pm.size(); ++j) {
    const bool on = pm[j] > opt.threshold_low;
    if (!segs.empty() && segs.back().on == on) segs.back().end = j + 1;
    else segs.push_back({j, j + 1, on});
  }
  for (auto& s : segs) {
    if (!s.on) continue;
    double sum = 0.0;
    for (std::size_t j = s.start; j < s.end; ++j) sum += pm[j];
    if (sum / static_cast<double>(s.size()) < opt.threshold_mean) s.on = false;
  }
  segs = detail::merge_equal(segs);
  if (!opt.prune_islands) return segs;

  auto is_small = [&](const Segment& s) { return s.size() < opt.min_chunk; };
  for (std::size_t k = 0; k < segs.size();) {
    std::size_t e = k;
    while (e < segs.size() && is_small(segs[e])) ++e;
    if (e - k >= 2)
      for (std::size_t i = k; i < e; ++i) segs[i].on = false;
    k = (e == k) ? k + 1 : e;
  }
  for (std::size_t k = 0; k < segs.size(); ++k) {
    if (!segs[k].on || !is_small(segs[k])) continue;
    const bool left_off = k == 0 || !segs[k - 1].on;
    const bool right_off = k + 1 == segs.size() || !segs[k + 1].on;
    if (left_off && right_off) segs[k].on = false;
  }
  return detail::merge_equal(segs);
}

inline double offscreen_ratio(const ActiveSegments& segs) {
  std::size_t off = 0, total = 0;
  for (const auto& s : segs) {
    total += s.size();
    if (!s.on) off += s.size();
  }
  return total ? static_cast<double>(off) / static_cast<double>(total) : 0.0;
}

struct FilterThresholds {
  double min_probability = 0.9;
  double max_offscreen = 0.2;
};

enum class Verdict { kKeep, kDrop };

inline Verdict verdict_for(double probability_at_offset, double offscreen, const FilterThresholds& t = {}) {
  return probability_at_offset >= t.min_probability && offscreen <= t.max_offscreen ? Verdict::kKeep
                                                                                    : Verdict::kDrop;
}

inline std::string to_string(Verdict v) { return v == Verdict::kKeep ? "keep" : "drop"; }

struct SyncReport {
  std::string video_id;
  int offset = 0;
  double probability_at_offset = 0.0;
  double offscreen_ratio = 0.0;
  ActiveSegments segments;
  double tau = 0.1;
  Verdict verdict = Verdict::kDrop;
};

struct ReportOptions {
  int w = 15;
  ActiveOptions active;
  FilterThresholds thresholds;
};

inline SyncReport sync_report(const Tensor& audio, const Tensor& visual, double tau,
                              const ReportOptions& opt = {}, std::string video_id = {}) {
  const SimilarityMatrix S = similarity_matrix(audio, visual, opt.w, tau);
  SyncReport rep;
  rep.video_id = std::move(video_id);
  rep.tau = tau;
  rep.offset = global_offset(S);
  const int m = opt.w - rep.offset;
  const SimilarityMatrix Sf = smooth(S);
  const Tensor P = probability_map(Sf, tau);
  const BandBest best = per_frame_best(P, Sf.valid, m);

  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t j = 0; j < Sf.frames(); ++j)
    if (best.row[j] >= 0) {
      sum += Sf.at(static_cast<std::size_t>(best.row[j]), j);
      ++n;
    }
  rep.probability_at_offset =
      n ? loss::sync_probability(sum / static_cast<double>(n), loss::Temperature::from_tau(tau)) : 0.0;
  rep.segments = detect_active(best.prob, opt.active);
  rep.offscreen_ratio = offscreen_ratio(rep.segments);
  rep.verdict = verdict_for(rep.probability_at_offset, rep.offscreen_ratio, opt.thresholds);
  return rep;
}

inline nlohmann::json to_json(const SyncReport& r) {
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& s : r.segments) segs.push_back({{"start", s.start}, {"end", s.end}, {"on", s.on}});
  return {{"video_id", r.video_id},
          {"offset", r.offset},
          {"prob_at_offset", r.probability_at_offset},
          {"offscreen_ratio", r.offscreen_ratio},
          {"segments", segs},
          {"tau", r.tau},
          {"verdict", to_string(r.verdict)}};
}

// Fixed-bin histograms over a set of reports.
struct Histogram {
  std::vector<double> edges;  // bins [edges[i], edges[i+1]); last bin closed
  std::vector<std::uint64_t> counts;

  void add(double x) {
    const std::size_t nb = counts.size();
    std::size_t b = nb - 1;
    for (std::size_t i = 0; i < nb; ++i)
      if (x < edges[i + 1]) {
        b = i;
        break;
      }
    if (x < edges.front()) b = 0;
    ++counts[b];
  }
};

inline Histogram make_histogram(double lo, double hi, std::size_t bins) {
  Histogram h{std::vector<double>(bins + 1), std::vector<std::uint64_t>(bins, 0)};
  for (std::size_t i = 0; i <= bins; ++i) h.edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
  return h;
}

struct AuditSummary {
  Histogram offset = make_histogram(-15.5, 15.5, 31);
  Histogram probability = make_histogram(0.0, 1.0, 10);
  Histogram offscreen = make_histogram(0.0, 1.0, 10);
  std::uint64_t keep = 0;
  std::uint64_t drop = 0;
  FilterThresholds thresholds;
  std::vector<std::string> errors;

  std::uint64_t reports() const { return keep + drop; }
};

inline AuditSummary dataset_audit(std::span<const SyncReport> reports, const FilterThresholds& t = {}) {
  if (reports.empty()) throw InvalidInput("audit needs at least one report");
  AuditSummary s;
  s.thresholds = t;
  for (const auto& r : reports) {
    s.offset.add(r.offset);
    s.probability.add(r.probability_at_offset);
    s.offscreen.add(r.offscreen_ratio);
    (verdict_for(r.probability_at_offset, r.offscreen_ratio, t) == Verdict::kKeep ? s.keep : s.drop) += 1;
  }
  return s;
}

inline nlohmann::json to_json(const Histogram& h) { return {{"edges", h.edges}, {"counts", h.counts}}; }

inline nlohmann::json to_json(const AuditSummary& s) {
  return {{"reports", s.reports()},
          {"keep", s.keep},
          {"drop", s.drop},
          {"thresholds", {{"prob_at_offset", s.thresholds.min_probability},
                          {"offscreen_ratio", s.thresholds.max_offscreen}}},
          {"histograms", {{"offset", to_json(s.offset)},
                          {"prob_at_offset", to_json(s.probability)},
                          {"offscreen_ratio", to_json(s.offscreen)}}},
          {"errors", s.errors}};
}

}  // namespace avsync::quality
