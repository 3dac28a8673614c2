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

// Synchronization losses over similarity scores, with analytic gradients.
//
// Scores are cosine similarities phi; the losses that use a temperature work
// on logits x = phi / tau. Probabilities are evaluated in log space
// (log-sigmoid, log-sum-exp) so that small temperatures cannot produce NaN.

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "avsync/error.hpp"
#include "avsync/tensor.hpp"

namespace avsync::loss {

// tau = exp(-log_inv_tau), clamped to [0.01, 10].
struct Temperature {
  static constexpr double kMinTau = 0.01;
  static constexpr double kMaxTau = 10.0;

  double log_inv_tau = std::log(10.0);

  static Temperature from_tau(double tau) { return {-std::log(tau)}; }

  static double min_log_inv_tau() { return -std::log(kMaxTau); }
  static double max_log_inv_tau() { return -std::log(kMinTau); }

  double clamped_log_inv_tau() const {
    return std::clamp(log_inv_tau, min_log_inv_tau(), max_log_inv_tau());
  }
  // Inside the clamp range the loss depends on log_inv_tau; outside it does not.
  bool active() const {
    return log_inv_tau > min_log_inv_tau() && log_inv_tau < max_log_inv_tau();
  }
  double inv_tau() const { return std::exp(clamped_log_inv_tau()); }
  double tau() const { return std::exp(-clamped_log_inv_tau()); }
};

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
inline double log_sigmoid(double x) { return -softplus(-x); }
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double cosine_similarity(std::span<const double> v, std::span<const double> a) {
  if (v.size() != a.size()) throw ShapeError("cosine_similarity: length mismatch");
  const double nv = l2_norm(v), na = l2_norm(a);
  if (!(nv > 0.0) || !(na > 0.0)) throw InvalidInput("cosine_similarity of a zero vector");
  return std::clamp(dot(v, a) / (nv * na), -1.0, 1.0);
}

inline double sync_probability(double phi, const Temperature& tau) {
  return sigmoid(phi * tau.inv_tau());
}

struct ScoreSet {
  double phi_pos = 0.0;
  std::vector<double> phi_hard;
  std::vector<double> phi_easy;

  std::size_t negatives() const { return phi_hard.size() + phi_easy.size(); }
};

struct ScoreGrad {
  double d_pos = 0.0;
  std::vector<double> d_hard;
  std::vector<double> d_easy;
};

// Loss value, dL/dphi for every score, and dL/d(log_inv_tau).
struct LossResult {
  double loss = 0.0;
  std::vector<ScoreGrad> d_scores;
  double d_log_inv_tau = 0.0;
};

namespace detail {

inline ScoreGrad zero_grad_like(const ScoreSet& s) {
  return {0.0, std::vector<double>(s.phi_hard.size(), 0.0),
          std::vector<double>(s.phi_easy.size(), 0.0)};
}

inline void check_similarity(double phi) {
  if (!(phi >= -1.0 - 1e-12 && phi <= 1.0 + 1e-12))
    throw InvalidInput("similarity outside [-1, 1]: " + std::to_string(phi));
}

// Converts dL/dx (x = phi * inv_tau) into dL/dphi and accumulates the
// log_inv_tau gradient (dx/dlog_inv_tau = x).
inline void finish_logit_grads(std::span<const ScoreSet> batch, const Temperature& tau,
                               LossResult& r) {
  const double it = tau.inv_tau();
  double d_lit = 0.0;
  for (std::size_t n = 0; n < batch.size(); ++n) {
    auto& g = r.d_scores[n];
    const auto& s = batch[n];
    d_lit += g.d_pos * s.phi_pos * it;
    g.d_pos *= it;
    for (std::size_t i = 0; i < g.d_hard.size(); ++i) {
      d_lit += g.d_hard[i] * s.phi_hard[i] * it;
      g.d_hard[i] *= it;
    }
    for (std::size_t i = 0; i < g.d_easy.size(); ++i) {
      d_lit += g.d_easy[i] * s.phi_easy[i] * it;
      g.d_easy[i] *= it;
    }
  }
  r.d_log_inv_tau = tau.active() ? d_lit : 0.0;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Balanced binary cross entropy.

struct BbceConfig {
  std::size_t n_hard = 15;
  std::size_t n_easy = 15;
  double w_easy = 0.1;
  // Two-term form: -ln p+ - (1/N) sum ln(1 - p_i) over all N negatives, no
  // hard/easy split and no 1/2 factor.
  bool simplified = false;

  void validate() const {
    if (simplified) return;
    if (n_hard < 1) throw InvalidConfig("BBCE needs at least one hard negative");
    if (!(w_easy >= 0.0 && w_easy <= 1.0)) throw InvalidConfig("w_easy must lie in [0, 1]");
    if (n_easy == 0 && w_easy != 0.0) throw InvalidConfig("w_easy must be 0 when n_easy = 0");
  }

  // Loss weight of each hard / easy negative (relative to the positive's 1).
  double hard_weight() const {
    return simplified ? 1.0 / static_cast<double>(n_hard + n_easy)
                      : (1.0 - w_easy) / static_cast<double>(n_hard);
  }
  double easy_weight() const {
    if (simplified) return 1.0 / static_cast<double>(n_hard + n_easy);
    return n_easy == 0 ? 0.0 : w_easy / static_cast<double>(n_easy);
  }
};

namespace detail {
inline void check_bbce_sizes(const ScoreSet& s, const BbceConfig& cfg) {
  if (s.phi_hard.size() != cfg.n_hard || s.phi_easy.size() != cfg.n_easy)
    throw ShapeError("ScoreSet sizes do not match BbceConfig");
  if (cfg.simplified && s.negatives() == 0) throw InvalidInput("no negatives");
}
}  // namespace detail

inline LossResult bbce_loss(std::span<const ScoreSet> batch, const Temperature& tau,
                            const BbceConfig& cfg) {
  cfg.validate();
  if (batch.empty()) throw InvalidInput("empty batch");
  const double it = tau.inv_tau();
  const double scale = cfg.simplified ? 1.0 / static_cast<double>(batch.size())
                                      : 1.0 / (2.0 * static_cast<double>(batch.size()));
  const double wh = cfg.hard_weight(), we = cfg.easy_weight();
  LossResult r;
  r.d_scores.reserve(batch.size());
  double total = 0.0;
  for (const auto& s : batch) {
    detail::check_bbce_sizes(s, cfg);
    ScoreGrad g = detail::zero_grad_like(s);
    const double xp = s.phi_pos * it;
    double term = log_sigmoid(xp);
    g.d_pos = -scale * (1.0 - sigmoid(xp));
    for (std::size_t i = 0; i < s.phi_hard.size(); ++i) {
      const double x = s.phi_hard[i] * it;
      term += wh * log_sigmoid(-x);
      g.d_hard[i] = scale * wh * sigmoid(x);
    }
    for (std::size_t i = 0; i < s.phi_easy.size(); ++i) {
      const double x = s.phi_easy[i] * it;
      term += we * log_sigmoid(-x);
      g.d_easy[i] = scale * we * sigmoid(x);
    }
    total += term;
    r.d_scores.push_back(std::move(g));
  }
  r.loss = -scale * total;
  detail::finish_logit_grads(batch, tau, r);
  return r;
}

// Misclassification weights of one anchor: q- = 1 - sigma(x+) for the
// positive and q_i- = sigma(x_i) for each negative, plus the per-logit loss
// gradient they induce for a batch of `batch_size` anchors.
struct GradReport {
  double weight_pos = 0.0;
  std::vector<double> weights_hard;
  std::vector<double> weights_easy;
  ScoreGrad d_logits;
};

inline GradReport bbce_grad_decomposition(const ScoreSet& s, const Temperature& tau,
                                          const BbceConfig& cfg, std::size_t batch_size = 1) {
  cfg.validate();
  detail::check_bbce_sizes(s, cfg);
  const double it = tau.inv_tau();
  const double scale = cfg.simplified ? 1.0 / static_cast<double>(batch_size)
                                      : 1.0 / (2.0 * static_cast<double>(batch_size));
  GradReport r;
  r.weight_pos = 1.0 - sigmoid(s.phi_pos * it);
  for (double p : s.phi_hard) r.weights_hard.push_back(sigmoid(p * it));
  for (double p : s.phi_easy) r.weights_easy.push_back(sigmoid(p * it));
  r.d_logits.d_pos = -scale * r.weight_pos;
  for (double q : r.weights_hard) r.d_logits.d_hard.push_back(scale * cfg.hard_weight() * q);
  for (double q : r.weights_easy) r.d_logits.d_easy.push_back(scale * cfg.easy_weight() * q);
  return r;
}

// ---------------------------------------------------------------------------
// InfoNCE over {positive} U negatives with temperature.

struct InfoNceWeights {
  double p_pos = 0.0;        // softmax weight of the positive
  double p_miss = 0.0;       // 1 - p_pos
  std::vector<double> p_neg; // hard then easy
};

inline InfoNceWeights infonce_weights(const ScoreSet& s, const Temperature& tau) {
  if (s.negatives() == 0) throw InvalidInput("InfoNCE needs at least one negative");
  const double it = tau.inv_tau();
  std::vector<double> logits{s.phi_pos * it};
  for (double p : s.phi_hard) logits.push_back(p * it);
  for (double p : s.phi_easy) logits.push_back(p * it);
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double x : logits) z += std::exp(x - mx);
  InfoNceWeights w;
  w.p_pos = std::exp(logits[0] - mx) / z;
  for (std::size_t i = 1; i < logits.size(); ++i) w.p_neg.push_back(std::exp(logits[i] - mx) / z);
  w.p_miss = std::accumulate(w.p_neg.begin(), w.p_neg.end(), 0.0);
  return w;
}

inline LossResult infonce_loss(std::span<const ScoreSet> batch, const Temperature& tau) {
  if (batch.empty()) throw InvalidInput("empty batch");
  const double it = tau.inv_tau();
  const double scale = 1.0 / static_cast<double>(batch.size());
  LossResult r;
  double total = 0.0;
  for (const auto& s : batch) {
    if (s.negatives() == 0) throw InvalidInput("InfoNCE needs at least one negative");
    std::vector<double> logits{s.phi_pos * it};
    for (double p : s.phi_hard) logits.push_back(p * it);
    for (double p : s.phi_easy) logits.push_back(p * it);
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double x : logits) z += std::exp(x - mx);
    const double lse = mx + std::log(z);
    total += lse - logits[0];
    ScoreGrad g = detail::zero_grad_like(s);
    std::vector<double> p(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) p[i] = std::exp(logits[i] - lse);
    // dL/dx+ = -(sum of negative weights); dL/dx_i = p_i.
    double miss = 0.0;
    for (std::size_t i = 1; i < p.size(); ++i) miss += p[i];
    g.d_pos = -scale * miss;
    for (std::size_t i = 0; i < s.phi_hard.size(); ++i) g.d_hard[i] = scale * p[1 + i];
    for (std::size_t i = 0; i < s.phi_easy.size(); ++i)
      g.d_easy[i] = scale * p[1 + s.phi_hard.size() + i];
    r.d_scores.push_back(std::move(g));
  }
  r.loss = scale * total;
  detail::finish_logit_grads(batch, tau, r);
  return r;
}

// ---------------------------------------------------------------------------
// Binary cross entropy.

struct ElementwiseResult {
  double loss = 0.0;
  std::vector<double> d_input;
};

namespace detail {
inline void check_labels(std::span<const double> labels, std::size_t n) {
  if (labels.size() != n) throw ShapeError("label count mismatch");
  if (n == 0) throw InvalidInput("empty batch");
  for (double y : labels)
    if (y != 0.0 && y != 1.0) throw InvalidInput("labels must be 0 or 1");
}
}  // namespace detail

// Mean BCE over probabilities; p is clamped to [1e-12, 1 - 1e-12].
inline ElementwiseResult bce_loss(std::span<const double> probabilities,
                                  std::span<const double> labels) {
  detail::check_labels(labels, probabilities.size());
  constexpr double kClamp = 1e-12;
  const double scale = 1.0 / static_cast<double>(labels.size());
  ElementwiseResult r{0.0, std::vector<double>(labels.size(), 0.0)};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = std::clamp(probabilities[i], kClamp, 1.0 - kClamp);
    const double y = labels[i];
    r.loss -= scale * (y * std::log(p) + (1.0 - y) * std::log1p(-p));
    r.d_input[i] = scale * (-y / p + (1.0 - y) / (1.0 - p));
  }
  return r;
}

// Mean BCE over logits.
inline ElementwiseResult bce_with_logits(std::span<const double> logits,
                                         std::span<const double> labels) {
  detail::check_labels(labels, logits.size());
  const double scale = 1.0 / static_cast<double>(labels.size());
  ElementwiseResult r{0.0, std::vector<double>(labels.size(), 0.0)};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double x = logits[i], y = labels[i];
    r.loss -= scale * (y * log_sigmoid(x) + (1.0 - y) * log_sigmoid(-x));
    r.d_input[i] = scale * (sigmoid(x) - y);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Margin contrastive loss on Euclidean distances.

struct PairBatch {
  std::vector<double> labels;     // 1 = in sync, 0 = out of sync
  std::vector<double> distances;  // d_n >= 0
  double margin = 1.0;
};

inline ElementwiseResult syncnet_contrastive_loss(const PairBatch& batch) {
  detail::check_labels(batch.labels, batch.distances.size());
  if (!(batch.margin > 0.0)) throw InvalidInput("margin must be positive");
  const double B = static_cast<double>(batch.labels.size());
  ElementwiseResult r{0.0, std::vector<double>(batch.labels.size(), 0.0)};
  for (std::size_t n = 0; n < batch.labels.size(); ++n) {
    const double d = batch.distances[n], y = batch.labels[n];
    if (!(d >= 0.0)) throw InvalidInput("negative distance");
    const double hinge = std::max(batch.margin - d, 0.0);
    r.loss += (y * d * d + (1.0 - y) * hinge * hinge) / (2.0 * B);
    r.d_input[n] = (y * d - (1.0 - y) * hinge) / B;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Multi-way classification over inverse distances; column 0 is the positive.

inline constexpr double kPmDistanceFloor = 1e-3;

struct MatrixResult {
  double loss = 0.0;
  Tensor d_input;
};

inline MatrixResult pm_loss(const Tensor& distances) {
  require_rank(distances, 2, "pm_loss distances");
  const std::size_t B = distances.dim(0), N = distances.dim(1);
  if (B == 0 || N < 2) throw InvalidInput("pm_loss needs a positive and at least one negative");
  MatrixResult r{0.0, Tensor(distances.shape())};
  const double scale = 1.0 / static_cast<double>(B);
  std::vector<double> inv(N);
  for (std::size_t n = 0; n < B; ++n) {
    for (std::size_t i = 0; i < N; ++i) {
      const double d = distances[n * N + i];
      if (!(d > kPmDistanceFloor))
        throw DegenerateDistance("distance " + std::to_string(d) + " at or below floor");
      inv[i] = 1.0 / d;
    }
    const double mx = *std::max_element(inv.begin(), inv.end());
    double z = 0.0;
    for (double v : inv) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    r.loss += scale * (lse - inv[0]);
    for (std::size_t i = 0; i < N; ++i) {
      const double s = std::exp(inv[i] - lse);
      const double d = distances[n * N + i];
      r.d_input[n * N + i] = scale * ((i == 0 ? 1.0 : 0.0) - s) / (d * d);
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Loss selection for training on ScoreSets of unit-norm embeddings. Distance
// based losses use d = sqrt(2 - 2 phi).

enum class LossKind { kBbce, kInfoNce, kBce, kContrastive, kPm };

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::kBbce: return "bbce";
    case LossKind::kInfoNce: return "infonce";
    case LossKind::kBce: return "bce";
    case LossKind::kContrastive: return "contrastive";
    case LossKind::kPm: return "pm";
  }
  return "?";
}

inline LossKind loss_kind_from_string(const std::string& s) {
  for (auto k : {LossKind::kBbce, LossKind::kInfoNce, LossKind::kBce, LossKind::kContrastive,
                 LossKind::kPm})
    if (to_string(k) == s) return k;
  throw InvalidConfig("unknown loss '" + s + "'");
}

struct ScoreLossOptions {
  BbceConfig bbce;
  double margin = 1.0;
};

namespace detail {

template <class F>
void for_each_score(const ScoreSet& s, ScoreGrad& g, F&& f) {
  f(s.phi_pos, g.d_pos, true);
  for (std::size_t i = 0; i < s.phi_hard.size(); ++i) f(s.phi_hard[i], g.d_hard[i], false);
  for (std::size_t i = 0; i < s.phi_easy.size(); ++i) f(s.phi_easy[i], g.d_easy[i], false);
}

inline double unit_distance(double phi) { return std::sqrt(std::max(2.0 - 2.0 * phi, 0.0)); }

}  // namespace detail

inline LossResult loss_on_scores(LossKind kind, std::span<const ScoreSet> batch,
                                 const Temperature& tau, const ScoreLossOptions& opt = {}) {
  if (batch.empty()) throw InvalidInput("empty batch");
  switch (kind) {
    case LossKind::kBbce: return bbce_loss(batch, tau, opt.bbce);
    case LossKind::kInfoNce: return infonce_loss(batch, tau);
    case LossKind::kBce: {
      std::vector<double> logits, labels;
      const double it = tau.inv_tau();
      for (const auto& s : batch) {
        ScoreGrad g = detail::zero_grad_like(s);
        detail::for_each_score(s, g, [&](double phi, double&, bool pos) {
          logits.push_back(phi * it);
          labels.push_back(pos ? 1.0 : 0.0);
        });
      }
      ElementwiseResult e = bce_with_logits(logits, labels);
      LossResult r;
      r.loss = e.loss;
      std::size_t k = 0;
      for (const auto& s : batch) {
        ScoreGrad g = detail::zero_grad_like(s);
        detail::for_each_score(s, g, [&](double, double& d, bool) { d = e.d_input[k++]; });
        r.d_scores.push_back(std::move(g));
      }
      detail::finish_logit_grads(batch, tau, r);
      return r;
    }
    case LossKind::kContrastive: {
      PairBatch pb;
      pb.margin = opt.margin;
      for (const auto& s : batch) {
        ScoreGrad g = detail::zero_grad_like(s);
        detail::for_each_score(s, g, [&](double phi, double&, bool pos) {
          pb.labels.push_back(pos ? 1.0 : 0.0);
          pb.distances.push_back(detail::unit_distance(phi));
        });
      }
      ElementwiseResult e = syncnet_contrastive_loss(pb);
      LossResult r;
      r.loss = e.loss;
      std::size_t k = 0;
      for (const auto& s : batch) {
        ScoreGrad g = detail::zero_grad_like(s);
        detail::for_each_score(s, g, [&](double, double& d, bool) {
          const double dist = pb.distances[k];
          // dd/dphi = -1/d; d(d^2)/dphi = -2 stays finite at d = 0.
          d = dist > 1e-9 ? -e.d_input[k] / dist : -pb.labels[k] / pb.labels.size();
          ++k;
        });
        r.d_scores.push_back(std::move(g));
      }
      return r;
    }
    case LossKind::kPm: {
      const std::size_t N = 1 + batch[0].negatives();
      Tensor dist({batch.size(), N});
      for (std::size_t n = 0; n < batch.size(); ++n) {
        if (1 + batch[n].negatives() != N) throw ShapeError("pm: ragged negatives");
        ScoreGrad g = detail::zero_grad_like(batch[n]);
        std::size_t i = 0;
        detail::for_each_score(batch[n], g, [&](double phi, double&, bool) {
          // Keep training away from the 1/d singularity.
          dist[n * N + i++] = std::max(detail::unit_distance(phi), 2.0 * kPmDistanceFloor);
        });
      }
      MatrixResult m = pm_loss(dist);
      LossResult r;
      r.loss = m.loss;
      for (std::size_t n = 0; n < batch.size(); ++n) {
        ScoreGrad g = detail::zero_grad_like(batch[n]);
        std::size_t i = 0;
        detail::for_each_score(batch[n], g, [&](double phi, double& d, bool) {
          const double raw = detail::unit_distance(phi);
          const double dd = m.d_input[n * N + i++];
          d = raw > 2.0 * kPmDistanceFloor ? -dd / raw : 0.0;
        });
        r.d_scores.push_back(std::move(g));
      }
      return r;
    }
  }
  throw InvalidConfig("unhandled loss kind");
}

}  // namespace avsync::loss
