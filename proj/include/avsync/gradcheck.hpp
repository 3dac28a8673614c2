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

// Central finite-difference checks of every analytic gradient in the
// library: all losses, every kernel, the score-to-embedding chain and a small
// full encoder.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "avsync/encoder.hpp"
#include "avsync/loss.hpp"
#include "avsync/nn.hpp"
#include "avsync/tensor.hpp"
#include "avsync/trainer.hpp"

namespace avsync::gradcheck {

struct Options {
  double epsilon = 1e-6;
  double tolerance = 1e-5;
  std::uint64_t seed = 1;
  std::size_t instances = 64;         // per case
  std::size_t encoder_instances = 24;
  std::set<std::string> sign_flip;    // fault injection: cases whose analytic gradient is negated
};

struct CaseResult {
  std::string name;
  std::size_t instances = 0;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  bool passed = true;
};

struct Report {
  std::vector<CaseResult> cases;
  double tolerance = 1e-5;
  double epsilon = 1e-6;

  std::size_t instances() const {
    std::size_t n = 0;
    for (const auto& c : cases) n += c.instances;
    return n;
  }
  bool passed() const {
    return std::all_of(cases.begin(), cases.end(), [](const CaseResult& c) { return c.passed; });
  }
  std::vector<std::string> offenders() const {
    std::vector<std::string> out;
    for (const auto& c : cases)
      if (!c.passed) out.push_back(c.name);
    return out;
  }
};

// max |a - n| / max(max |a|, max |n|, floor)
inline double relative_error(std::span<const double> analytic, std::span<const double> numeric,
                             double floor = 1e-8) {
  double diff = 0.0, scale = floor;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return diff / scale;
}

using Objective = std::function<double(const std::vector<double>&)>;

inline std::vector<double> numeric_gradient(const Objective& f, std::vector<double> x, double eps) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + eps;
    const double fp = f(x);
    x[i] = x0 - eps;
    const double fm = f(x);
    x[i] = x0;
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

// One random problem: a point, its objective and the analytic gradient.
struct Instance {
  std::vector<double> x;
  Objective f;
  std::vector<double> grad;
};

namespace detail {

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}
inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}
inline std::vector<double> normals(Rng& rng, std::size_t n, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Score sets flattened as [pos, hard..., easy...] per anchor, then log_inv_tau.
struct ScoreLayout {
  std::size_t batch, n_hard, n_easy;
  std::size_t per() const { return 1 + n_hard + n_easy; }
  std::size_t size() const { return batch * per() + 1; }

  std::vector<loss::ScoreSet> unpack(const std::vector<double>& x) const {
    std::vector<loss::ScoreSet> out(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      const double* p = x.data() + b * per();
      out[b].phi_pos = p[0];
      out[b].phi_hard.assign(p + 1, p + 1 + n_hard);
      out[b].phi_easy.assign(p + 1 + n_hard, p + per());
    }
    return out;
  }
  loss::Temperature tau(const std::vector<double>& x) const { return {x.back()}; }

  std::vector<double> pack(const loss::LossResult& r) const {
    std::vector<double> g;
    for (const auto& s : r.d_scores) {
      g.push_back(s.d_pos);
      g.insert(g.end(), s.d_hard.begin(), s.d_hard.end());
      g.insert(g.end(), s.d_easy.begin(), s.d_easy.end());
    }
    g.push_back(r.d_log_inv_tau);
    return g;
  }
};

inline ScoreLayout random_layout(Rng& rng, std::size_t min_hard = 1) {
  return {pick(rng, 1, 4), pick(rng, min_hard, 6), pick(rng, 0, 4)};
}

inline std::vector<double> random_scores(Rng& rng, const ScoreLayout& l, double lo = -0.95,
                                         double hi = 0.95) {
  std::vector<double> x(l.size());
  for (std::size_t i = 0; i + 1 < x.size(); ++i) x[i] = uniform(rng, lo, hi);
  // tau in (0.05, 1): strictly inside the clamp so the log_inv_tau gradient is live
  x.back() = -std::log(uniform(rng, 0.05, 1.0));
  return x;
}

using Builder = std::function<Instance(Rng&)>;

inline Instance score_loss_instance(Rng& rng, loss::LossKind kind, bool simplified) {
  ScoreLayout l = random_layout(rng);
  loss::ScoreLossOptions opt;
  opt.bbce = {l.n_hard, l.n_easy, l.n_easy ? uniform(rng, 0.0, 0.5) : 0.0, simplified};
  opt.margin = uniform(rng, 0.5, 1.5);
  Instance in;
  const bool distance = kind == loss::LossKind::kContrastive || kind == loss::LossKind::kPm;
  in.x = random_scores(rng, l, -0.95, distance ? 0.9 : 0.95);
  if (kind == loss::LossKind::kContrastive) {
    // keep sqrt(2 - 2 phi) away from the hinge at the margin
    for (std::size_t i = 0; i + 1 < in.x.size(); ++i)
      while (std::abs(std::sqrt(2.0 - 2.0 * in.x[i]) - opt.margin) < 1e-3) in.x[i] = uniform(rng, -0.95, 0.9);
  }
  in.f = [=](const std::vector<double>& x) {
    return loss::loss_on_scores(kind, l.unpack(x), l.tau(x), opt).loss;
  };
  in.grad = l.pack(loss::loss_on_scores(kind, l.unpack(in.x), l.tau(in.x), opt));
  if (distance) in.grad.back() = 0.0;  // distance losses ignore temperature
  return in;
}

inline Instance bce_probability_instance(Rng& rng) {
  const std::size_t n = pick(rng, 1, 12);
  Instance in;
  std::vector<double> labels(n);
  for (auto& y : labels) y = static_cast<double>(pick(rng, 0, 1));
  in.x.resize(n);
  for (auto& p : in.x) p = uniform(rng, 0.02, 0.98);
  in.f = [=](const std::vector<double>& x) { return loss::bce_loss(x, labels).loss; };
  in.grad = loss::bce_loss(in.x, labels).d_input;
  return in;
}

inline Instance bce_logit_instance(Rng& rng) {
  const std::size_t n = pick(rng, 1, 12);
  Instance in;
  std::vector<double> labels(n);
  for (auto& y : labels) y = static_cast<double>(pick(rng, 0, 1));
  in.x = normals(rng, n, 3.0);
  in.f = [=](const std::vector<double>& x) { return loss::bce_with_logits(x, labels).loss; };
  in.grad = loss::bce_with_logits(in.x, labels).d_input;
  return in;
}

inline Instance contrastive_instance(Rng& rng) {
  const std::size_t n = pick(rng, 1, 12);
  const double m = uniform(rng, 0.5, 2.0);
  std::vector<double> labels(n);
  for (auto& y : labels) y = static_cast<double>(pick(rng, 0, 1));
  Instance in;
  in.x.resize(n);
  for (auto& d : in.x) {
    do d = uniform(rng, 0.01, 2.5);
    while (std::abs(d - m) < 1e-3);
  }
  auto f = [=](const std::vector<double>& x) {
    return loss::syncnet_contrastive_loss({labels, x, m});
  };
  in.f = [=](const std::vector<double>& x) { return f(x).loss; };
  in.grad = f(in.x).d_input;
  return in;
}

inline Instance pm_instance(Rng& rng) {
  const std::size_t B = pick(rng, 1, 4), N = pick(rng, 2, 8);
  Instance in;
  in.x.resize(B * N);
  for (auto& d : in.x) d = uniform(rng, 0.2, 2.0);
  auto f = [=](const std::vector<double>& x) { return loss::pm_loss(Tensor({B, N}, x)); };
  in.f = [=](const std::vector<double>& x) { return f(x).loss; };
  in.grad = f(in.x).d_input.values();
  return in;
}

// Random linear read-out of a tensor-valued map.
inline double project(const Tensor& y, const std::vector<double>& r) {
  return dot(y.span(), std::span<const double>(r));
}

inline Shape random_nchw(Rng& rng, std::size_t min_hw = 1) {
  return {pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, min_hw, 6), pick(rng, min_hw, 6)};
}

inline Instance conv_instance(Rng& rng) {
  const Shape xs = random_nchw(rng);
  const std::size_t Co = pick(rng, 1, 3), k = 2 * pick(rng, 0, 2) + 1;
  const Shape ws{Co, xs[1], k, k};
  const std::size_t nx = element_count(xs);
  Instance in;
  in.x = normals(rng, nx + element_count(ws));
  const auto r = normals(rng, xs[0] * Co * xs[2] * xs[3]);
  auto split = [=](const std::vector<double>& x) {
    return std::pair{Tensor(xs, std::vector<double>(x.begin(), x.begin() + nx)),
                     Tensor(ws, std::vector<double>(x.begin() + nx, x.end()))};
  };
  in.f = [=](const std::vector<double>& x) {
    auto [X, W] = split(x);
    return project(nn::conv2d(X, W), r);
  };
  auto [X, W] = split(in.x);
  const auto g = nn::conv2d_backward(X, W, Tensor({xs[0], Co, xs[2], xs[3]}, r));
  in.grad = g.d_input.values();
  in.grad.insert(in.grad.end(), g.d_weight.values().begin(), g.d_weight.values().end());
  return in;
}

inline Instance batchnorm_instance(Rng& rng, bool train_mode) {
  Shape xs = random_nchw(rng);
  if (train_mode && xs[0] < 2) xs[0] = 2;
  const std::size_t C = xs[1], nx = element_count(xs);
  nn::BatchNormState state(C);
  for (std::size_t c = 0; c < C; ++c) {
    state.running_mean[c] = uniform(rng, -1.0, 1.0);
    state.running_var[c] = uniform(rng, 0.5, 2.0);
  }
  const nn::TrainPhase phase = train_mode ? nn::TrainPhase::train(false) : nn::TrainPhase::eval();
  Instance in;
  in.x = normals(rng, nx);
  for (std::size_t c = 0; c < C; ++c) in.x.push_back(uniform(rng, 0.5, 1.5));
  for (std::size_t c = 0; c < C; ++c) in.x.push_back(uniform(rng, -0.5, 0.5));
  const auto r = normals(rng, nx);
  auto run = [=](const std::vector<double>& x, nn::BatchNormCache* cache) {
    nn::BatchNormState s = state;
    const Tensor X(xs, std::vector<double>(x.begin(), x.begin() + nx));
    return nn::batchnorm(X, std::span(x.data() + nx, C), std::span(x.data() + nx + C, C), s, phase, cache);
  };
  in.f = [=](const std::vector<double>& x) { return project(run(x, nullptr), r); };
  nn::BatchNormCache cache;
  run(in.x, &cache);
  const auto g = nn::batchnorm_backward(cache, std::span(in.x.data() + nx, C), Tensor(xs, r));
  in.grad = g.d_input.values();
  in.grad.insert(in.grad.end(), g.d_gamma.begin(), g.d_gamma.end());
  in.grad.insert(in.grad.end(), g.d_beta.begin(), g.d_beta.end());
  return in;
}

inline Instance prelu_instance(Rng& rng) {
  const Shape xs = random_nchw(rng);
  const std::size_t C = xs[1], nx = element_count(xs);
  Instance in;
  in.x = normals(rng, nx);
  for (auto& v : in.x)
    if (std::abs(v) < 1e-3) v = 0.5;  // away from the kink
  for (std::size_t c = 0; c < C; ++c) in.x.push_back(uniform(rng, -0.5, 0.5));
  const auto r = normals(rng, nx);
  in.f = [=](const std::vector<double>& x) {
    return project(nn::prelu(Tensor(xs, std::vector<double>(x.begin(), x.begin() + nx)), std::span(x.data() + nx, C)), r);
  };
  const Tensor X(xs, std::vector<double>(in.x.begin(), in.x.begin() + nx));
  const auto g = nn::prelu_backward(X, std::span(in.x.data() + nx, C), Tensor(xs, r));
  in.grad = g.d_input.values();
  in.grad.insert(in.grad.end(), g.d_slope.begin(), g.d_slope.end());
  return in;
}

inline Instance blurpool_instance(Rng& rng) {
  const Shape xs = random_nchw(rng, 2);
  const Shape ys = nn::blurpool_output_shape(xs);
  Instance in;
  in.x = normals(rng, element_count(xs));
  const auto r = normals(rng, element_count(ys));
  in.f = [=](const std::vector<double>& x) { return project(nn::blurpool(Tensor(xs, x)), r); };
  in.grad = nn::blurpool_backward(xs, Tensor(ys, r)).values();
  return in;
}

inline Instance dropblock_instance(Rng& rng) {
  Shape xs = random_nchw(rng, 3);
  nn::DropBlockSpec spec{uniform(rng, 0.05, 0.4), 2 * pick(rng, 0, 1) + 1,
                         pick(rng, 0, 1) ? nn::DropDims::k3D : nn::DropDims::k2D};
  if (spec.dims == nn::DropDims::k3D) xs[1] = std::max(xs[1], spec.block_size);
  const std::uint64_t gate_seed = rng();
  Instance in;
  in.x = normals(rng, element_count(xs));
  const auto r = normals(rng, element_count(xs));
  in.f = [=](const std::vector<double>& x) {
    Rng g(gate_seed);
    return project(nn::dropblock(Tensor(xs, x), spec, nn::TrainPhase::train(), g), r);
  };
  Rng g(gate_seed);
  const Tensor gate = nn::dropblock_gate(xs, spec, nn::TrainPhase::train(), g);
  in.grad = nn::dropblock_backward(gate, Tensor(xs, r)).values();
  return in;
}

inline Instance dense_instance(Rng& rng) {
  const std::size_t N = pick(rng, 1, 4), F = pick(rng, 1, 8), D = pick(rng, 1, 6);
  Instance in;
  in.x = normals(rng, N * F + D * F + D);
  const auto r = normals(rng, N * D);
  auto parts = [=](const std::vector<double>& x) {
    return std::tuple{Tensor({N, F}, std::vector<double>(x.begin(), x.begin() + N * F)),
                      Tensor({D, F}, std::vector<double>(x.begin() + N * F, x.begin() + N * F + D * F)),
                      Tensor({D}, std::vector<double>(x.begin() + N * F + D * F, x.end()))};
  };
  in.f = [=](const std::vector<double>& x) {
    auto [X, W, b] = parts(x);
    return project(nn::dense(X, W, b), r);
  };
  auto [X, W, b] = parts(in.x);
  const auto g = nn::dense_backward(X, W, Tensor({N, D}, r));
  in.grad = g.d_input.values();
  in.grad.insert(in.grad.end(), g.d_weight.values().begin(), g.d_weight.values().end());
  in.grad.insert(in.grad.end(), g.d_bias.values().begin(), g.d_bias.values().end());
  return in;
}

inline Instance l2norm_instance(Rng& rng) {
  const std::size_t N = pick(rng, 1, 4), D = pick(rng, 1, 8);
  Instance in;
  in.x = normals(rng, N * D);
  const auto r = normals(rng, N * D);
  in.f = [=](const std::vector<double>& x) { return project(nn::l2_normalize_rows(Tensor({N, D}, x)), r); };
  std::vector<double> norms;
  const Tensor y = nn::l2_normalize_rows(Tensor({N, D}, in.x), &norms);
  in.grad = nn::l2_normalize_rows_backward(y, norms, Tensor({N, D}, r)).values();
  return in;
}

// Loss on scores computed from unit embeddings, differentiated back to the
// raw (pre-normalization) embeddings.
inline Instance embedding_score_instance(Rng& rng) {
  const std::size_t B = pick(rng, 1, 3), nh = pick(rng, 1, 4), ne = pick(rng, 0, 3), D = pick(rng, 2, 6);
  const std::size_t W = 1 + nh + ne;
  loss::ScoreLossOptions opt;
  opt.bbce = {nh, ne, ne ? 0.1 : 0.0, false};
  const loss::Temperature tau = loss::Temperature::from_tau(uniform(rng, 0.1, 1.0));
  Instance in;
  in.x = normals(rng, (B + B * W) * D);
  auto split = [=](const std::vector<double>& x) {
    return std::pair{Tensor({B, D}, std::vector<double>(x.begin(), x.begin() + B * D)),
                     Tensor({B * W, D}, std::vector<double>(x.begin() + B * D, x.end()))};
  };
  in.f = [=](const std::vector<double>& x) {
    auto [v, a] = split(x);
    const Tensor vn = nn::l2_normalize_rows(v), an = nn::l2_normalize_rows(a);
    return loss::loss_on_scores(loss::LossKind::kBbce, train::score_batch(vn, an, nh, ne), tau, opt).loss;
  };
  auto [v, a] = split(in.x);
  std::vector<double> nv, na;
  const Tensor vn = nn::l2_normalize_rows(v, &nv), an = nn::l2_normalize_rows(a, &na);
  const auto lr = loss::loss_on_scores(loss::LossKind::kBbce, train::score_batch(vn, an, nh, ne), tau, opt);
  const auto eg = train::score_backward(vn, an, lr.d_scores);
  in.grad = nn::l2_normalize_rows_backward(vn, nv, eg.d_visual).values();
  const auto ga = nn::l2_normalize_rows_backward(an, na, eg.d_audio).values();
  in.grad.insert(in.grad.end(), ga.begin(), ga.end());
  return in;
}

inline std::vector<double> flatten(const nn::EncoderParams& p) {
  std::vector<double> out;
  p.for_each([&](const std::string&, nn::ParamKind, const Tensor& t) {
    out.insert(out.end(), t.values().begin(), t.values().end());
  });
  return out;
}

inline void unflatten(nn::EncoderParams& p, const double* src) {
  p.for_each([&](const std::string&, nn::ParamKind, Tensor& t) {
    std::copy(src, src + t.size(), t.data());
    src += t.size();
  });
}

// Small encoder with every component active: projection skip, DropBlock,
// BlurPool, batch-statistics BN, PReLU, dense head and normalization.
inline Instance encoder_instance(Rng& rng) {
  nn::EncoderConfig cfg;
  cfg.input_shape = {pick(rng, 1, 2), pick(rng, 4, 6), pick(rng, 4, 6)};
  cfg.blocks = {{pick(rng, 2, 3), 3, true, true}, {pick(rng, 2, 4), 3, false, pick(rng, 0, 1) == 1}};
  cfg.embed_dim = pick(rng, 2, 4);
  cfg.drop = {0.2, 3, pick(rng, 0, 1) ? nn::DropDims::k3D : nn::DropDims::k2D};
  if (cfg.drop.dims == nn::DropDims::k3D) cfg.blocks[0].out_channels = 3;
  const std::size_t N = pick(rng, 2, 3);
  nn::ToyEncoder enc = nn::ToyEncoder::init(cfg, rng);
  for (auto& b : enc.params.blocks) {
    for (auto& g : b.gamma.values()) g = uniform(rng, 0.5, 1.5);
    for (auto& g : b.beta.values()) g = uniform(rng, -0.3, 0.3);
  }
  Shape xs = cfg.input_shape;
  xs.insert(xs.begin(), N);
  const std::size_t nx = element_count(xs);
  const std::uint64_t drop_seed = rng();
  const auto r = normals(rng, N * cfg.embed_dim);
  Instance in;
  in.x = normals(rng, nx);
  const auto flat = flatten(enc.params);
  in.x.insert(in.x.end(), flat.begin(), flat.end());
  auto run = [=](const std::vector<double>& x, nn::EncoderTape* tape, nn::ToyEncoder* out) {
    nn::ToyEncoder e = enc;
    unflatten(e.params, x.data() + nx);
    Rng g(drop_seed);
    const Tensor y = nn::encoder_forward(e, Tensor(xs, std::vector<double>(x.begin(), x.begin() + nx)),
                                         nn::TrainPhase::train(true), g, tape);
    if (out) *out = std::move(e);
    return project(y, r);
  };
  in.f = [=](const std::vector<double>& x) { return run(x, nullptr, nullptr); };
  nn::EncoderTape tape;
  nn::ToyEncoder e;
  run(in.x, &tape, &e);
  const auto g = nn::encoder_backward(e, tape, Tensor({N, cfg.embed_dim}, r));
  in.grad = g.d_input.values();
  const auto gp = flatten(g.params);
  in.grad.insert(in.grad.end(), gp.begin(), gp.end());
  return in;
}

struct CaseSpec {
  std::string name;
  Builder build;
  bool encoder = false;
};

inline std::vector<CaseSpec> all_cases() {
  using loss::LossKind;
  return {
      {"loss.bbce", [](Rng& r) { return score_loss_instance(r, LossKind::kBbce, false); }},
      {"loss.bbce_simplified", [](Rng& r) { return score_loss_instance(r, LossKind::kBbce, true); }},
      {"loss.infonce", [](Rng& r) { return score_loss_instance(r, LossKind::kInfoNce, false); }},
      {"loss.bce", bce_probability_instance},
      {"loss.bce_logits", bce_logit_instance},
      {"loss.contrastive", contrastive_instance},
      {"loss.pm", pm_instance},
      {"scores.bce", [](Rng& r) { return score_loss_instance(r, LossKind::kBce, false); }},
      {"scores.contrastive", [](Rng& r) { return score_loss_instance(r, LossKind::kContrastive, false); }},
      {"scores.pm", [](Rng& r) { return score_loss_instance(r, LossKind::kPm, false); }},
      {"scores.embeddings", embedding_score_instance},
      {"nn.conv2d", conv_instance},
      {"nn.batchnorm_train", [](Rng& r) { return batchnorm_instance(r, true); }},
      {"nn.batchnorm_eval", [](Rng& r) { return batchnorm_instance(r, false); }},
      {"nn.prelu", prelu_instance},
      {"nn.blurpool", blurpool_instance},
      {"nn.dropblock", dropblock_instance},
      {"nn.dense", dense_instance},
      {"nn.l2_normalize", l2norm_instance},
      {"nn.encoder", encoder_instance, true},
  };
}

}  // namespace detail

inline std::vector<std::string> case_names() {
  std::vector<std::string> out;
  for (const auto& c : detail::all_cases()) out.push_back(c.name);
  return out;
}

inline Report run_suite(const Options& opt = {}) {
  Report rep;
  rep.tolerance = opt.tolerance;
  rep.epsilon = opt.epsilon;
  std::size_t k = 0;
  for (const auto& c : detail::all_cases()) {
    std::seed_seq ss{opt.seed, static_cast<std::uint64_t>(k++)};
    Rng rng(ss);
    CaseResult res;
    res.name = c.name;
    const std::size_t n = c.encoder ? opt.encoder_instances : opt.instances;
    for (std::size_t i = 0; i < n; ++i) {
      Instance in = c.build(rng);
      if (opt.sign_flip.count(c.name))
        for (auto& g : in.grad) g = -g;
      const auto num = numeric_gradient(in.f, in.x, opt.epsilon);
      res.max_rel_error = std::max(res.max_rel_error, relative_error(in.grad, num));
      res.coordinates += in.x.size();
      ++res.instances;
    }
    res.passed = res.max_rel_error < opt.tolerance;
    rep.cases.push_back(res);
  }
  return rep;
}

inline nlohmann::json to_json(const Report& r) {
  nlohmann::json cases = nlohmann::json::array();
  for (const auto& c : r.cases)
    cases.push_back({{"name", c.name},
                     {"instances", c.instances},
                     {"coordinates", c.coordinates},
                     {"max_rel_error", c.max_rel_error},
                     {"passed", c.passed}});
  return {{"epsilon", r.epsilon},
          {"tolerance", r.tolerance},
          {"instances", r.instances()},
          {"passed", r.passed()},
          {"offenders", r.offenders()},
          {"cases", cases}};
}

}  // namespace avsync::gradcheck
