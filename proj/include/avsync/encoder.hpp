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

// Desk-scale encoder: a stack of residual Conv-BN-PReLU blocks with optional
// DropBlock and BlurPool after each block, a dense head on the flattened
// features, and L2 normalization of the output embedding.

#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "avsync/error.hpp"
#include "avsync/nn.hpp"
#include "avsync/optim.hpp"
#include "avsync/tensor.hpp"

namespace avsync::nn {

struct BlockSpec {
  std::size_t out_channels = 8;
  std::size_t kernel = 3;
  bool dropblock = false;
  bool blurpool = false;

  bool operator==(const BlockSpec&) const = default;
};

struct EncoderConfig {
  Shape input_shape{1, 32, 80};  // (C, H, W)
  std::vector<BlockSpec> blocks;
  std::size_t embed_dim = 64;
  DropBlockSpec drop{0.1, 3, DropDims::k2D};
  BlurKernel blur;
  BatchNormOptions bn;
  double init_slope = 0.25;

  // Shape (C, H, W) after block i, including its pooling.
  Shape block_output_shape(std::size_t i) const {
    Shape s = input_shape;
    for (std::size_t b = 0; b <= i; ++b) {
      s[0] = blocks[b].out_channels;
      if (blocks[b].blurpool) s = {s[0], (s[1] + 1) / 2, (s[2] + 1) / 2};
    }
    return s;
  }

  std::size_t flat_features() const {
    const Shape s = blocks.empty() ? input_shape : block_output_shape(blocks.size() - 1);
    return element_count(s);
  }

  void validate() const {
    if (input_shape.size() != 3) throw InvalidConfig("input_shape must be (C, H, W)");
    if (embed_dim == 0) throw InvalidConfig("embed_dim must be positive");
    Shape s = input_shape;
    for (const auto& b : blocks) {
      if (b.kernel % 2 == 0) throw InvalidConfig("block kernels must be odd");
      s[0] = b.out_channels;
      if (b.dropblock) check_dropblock(drop, {1, s[0], s[1], s[2]});
      if (b.blurpool) {
        if (s[1] < 2 || s[2] < 2) throw InvalidConfig("blurpool on a feature map smaller than 2x2");
        s = {s[0], (s[1] + 1) / 2, (s[2] + 1) / 2};
      }
    }
  }

  // Visual encoder over 5 stacked RGB frames (15 x 32 x 64).
  static EncoderConfig desk_visual() {
    EncoderConfig c;
    c.input_shape = {15, 32, 64};
    c.blocks = {{16, 3, false, true}, {16, 3, true, true}, {32, 3, false, true},
                {32, 3, true, true}};
    c.drop.dims = DropDims::k3D;
    return c;
  }

  // Audio encoder over an extended 32 x 80 mel window.
  static EncoderConfig desk_audio() {
    EncoderConfig c;
    c.input_shape = {1, 32, 80};
    c.blocks = {{16, 3, false, true}, {16, 3, true, true}, {32, 3, false, true},
                {32, 3, true, true}};
    c.drop.dims = DropDims::k2D;
    return c;
  }

  bool operator==(const EncoderConfig& o) const {
    return input_shape == o.input_shape && blocks == o.blocks && embed_dim == o.embed_dim &&
           drop.drop_rate == o.drop.drop_rate && drop.block_size == o.drop.block_size &&
           drop.dims == o.drop.dims && blur.taps == o.blur.taps &&
           bn.momentum == o.bn.momentum && bn.eps == o.bn.eps && init_slope == o.init_slope;
  }
};

enum class ParamKind { kConv, kSkip, kBnGamma, kBnBeta, kPrelu, kDenseWeight, kDenseBias };

inline bool is_bn_param(ParamKind k) { return k == ParamKind::kBnGamma || k == ParamKind::kBnBeta; }

struct BlockParams {
  Tensor conv_w;  // (Cout, Cin, k, k)
  Tensor skip_w;  // (Cout, Cin, 1, 1) when channel counts differ, else empty
  Tensor gamma;
  Tensor beta;
  Tensor slope;
};

struct EncoderParams {
  std::vector<BlockParams> blocks;
  Tensor head_w;  // (D, F)
  Tensor head_b;  // (D)

  // Visits every trainable tensor in a fixed order.
  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    for (std::size_t i = 0; i < self.blocks.size(); ++i) {
      auto& b = self.blocks[i];
      const std::string p = "block" + std::to_string(i) + ".";
      f(p + "conv", ParamKind::kConv, b.conv_w);
      if (!b.skip_w.empty()) f(p + "skip", ParamKind::kSkip, b.skip_w);
      f(p + "bn.gamma", ParamKind::kBnGamma, b.gamma);
      f(p + "bn.beta", ParamKind::kBnBeta, b.beta);
      f(p + "prelu", ParamKind::kPrelu, b.slope);
    }
    f(std::string("head.weight"), ParamKind::kDenseWeight, self.head_w);
    f(std::string("head.bias"), ParamKind::kDenseBias, self.head_b);
  }
  template <class F> void for_each(F&& f) { visit(*this, std::forward<F>(f)); }
  template <class F> void for_each(F&& f) const { visit(*this, std::forward<F>(f)); }

  EncoderParams zeros_like() const {
    EncoderParams z = *this;
    z.for_each([](const std::string&, ParamKind, Tensor& t) { t.fill(0.0); });
    return z;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, ParamKind, const Tensor& t) { n += t.size(); });
    return n;
  }

  bool operator==(const EncoderParams& o) const {
    if (blocks.size() != o.blocks.size()) return false;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const auto &a = blocks[i], &b = o.blocks[i];
      if (!(a.conv_w == b.conv_w && a.skip_w == b.skip_w && a.gamma == b.gamma &&
            a.beta == b.beta && a.slope == b.slope))
        return false;
    }
    return head_w == o.head_w && head_b == o.head_b;
  }
};

struct ToyEncoder {
  EncoderConfig config;
  EncoderParams params;
  std::vector<BatchNormState> bn;

  static ToyEncoder init(const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    ToyEncoder e;
    e.config = cfg;
    std::size_t cin = cfg.input_shape[0];
    for (const auto& spec : cfg.blocks) {
      BlockParams b;
      const std::size_t k = spec.kernel;
      b.conv_w = random_normal({spec.out_channels, cin, k, k}, rng,
                               std::sqrt(2.0 / static_cast<double>(cin * k * k)));
      if (cin != spec.out_channels)
        b.skip_w = random_normal({spec.out_channels, cin, 1, 1}, rng,
                                 std::sqrt(1.0 / static_cast<double>(cin)));
      b.gamma = Tensor({spec.out_channels}, 1.0);
      b.beta = Tensor({spec.out_channels}, 0.0);
      b.slope = Tensor({spec.out_channels}, cfg.init_slope);
      e.params.blocks.push_back(std::move(b));
      e.bn.emplace_back(spec.out_channels);
      cin = spec.out_channels;
    }
    const std::size_t F = cfg.flat_features();
    e.params.head_w = random_normal({cfg.embed_dim, F}, rng, std::sqrt(1.0 / static_cast<double>(F)));
    e.params.head_b = Tensor({cfg.embed_dim}, 0.0);
    return e;
  }
};

struct BlockTape {
  Tensor input;
  Tensor bn_out;
  BatchNormCache bn;
  Tensor gate;          // empty when the block has no DropBlock
  Shape pre_pool_shape; // empty when the block has no BlurPool
};

struct EncoderTape {
  std::vector<BlockTape> blocks;
  Tensor flat;
  Tensor embedding;
  std::vector<double> norms;
};

// Block i over an (N, C, H, W) activation: conv, BN, PReLU, skip, then
// optional DropBlock and BlurPool.
inline Tensor block_forward(const EncoderConfig& cfg, const EncoderParams& params,
                            std::vector<BatchNormState>& bn_state, std::size_t i, Tensor x,
                            const TrainPhase& phase, Rng& rng, BlockTape* bt = nullptr) {
  const auto& spec = cfg.blocks[i];
  const auto& p = params.blocks[i];
  BatchNormCache bn_cache;
  Tensor conv_out = conv2d(x, p.conv_w);
  Tensor bn_out = batchnorm(conv_out, p.gamma.span(), p.beta.span(), bn_state[i], phase,
                            &bn_cache, cfg.bn);
  Tensor y = prelu(bn_out, p.slope.span());
  const Tensor skip = p.skip_w.empty() ? x : conv2d(x, p.skip_w);
  for (std::size_t k = 0; k < y.size(); ++k) y[k] += skip[k];
  if (bt) {
    bt->input = std::move(x);
    bt->bn_out = std::move(bn_out);
    bt->bn = std::move(bn_cache);
  }
  if (spec.dropblock) {
    Tensor gate = dropblock_gate(y.shape(), cfg.drop, phase, rng);
    y = apply_gate(y, gate);
    if (bt) bt->gate = std::move(gate);
  }
  if (spec.blurpool) {
    if (bt) bt->pre_pool_shape = y.shape();
    y = blurpool(y, cfg.blur);
  }
  return y;
}

inline void check_encoder_input(const EncoderConfig& cfg, const Tensor& input) {
  require_rank(input, 4, "encoder input");
  if (Shape(input.shape().begin() + 1, input.shape().end()) != cfg.input_shape)
    throw ShapeError("encoder expects (N," + shape_string(cfg.input_shape).substr(1) +
                     ", got " + shape_string(input.shape()));
}

// Forward pass over an (N, C, H, W) batch. Batch-statistics phases update the
// BN running statistics of `enc`. Returns unit-norm (N, D) embeddings.
inline Tensor encoder_forward(const EncoderConfig& cfg, const EncoderParams& params,
                              std::vector<BatchNormState>& bn_state, const Tensor& input,
                              const TrainPhase& phase, Rng& rng, EncoderTape* tape = nullptr) {
  check_encoder_input(cfg, input);
  if (phase.mode == Phase::kBnTune && phase.drop_enabled)
    throw InvalidPhase("bn_tune phase must run with dropping disabled");
  if (tape) tape->blocks.assign(cfg.blocks.size(), {});

  Tensor x = input;
  for (std::size_t i = 0; i < cfg.blocks.size(); ++i)
    x = block_forward(cfg, params, bn_state, i, std::move(x), phase, rng, tape ? &tape->blocks[i] : nullptr);
  const std::size_t N = input.dim(0);
  x.reshape({N, x.size() / N});
  Tensor head = dense(x, params.head_w, params.head_b);
  std::vector<double> norms;
  Tensor emb = l2_normalize_rows(head, &norms);
  if (tape) {
    tape->flat = std::move(x);
    tape->embedding = emb;
    tape->norms = std::move(norms);
  }
  return emb;
}

inline Tensor encoder_forward(ToyEncoder& enc, const Tensor& input, const TrainPhase& phase,
                              Rng& rng, EncoderTape* tape = nullptr) {
  return encoder_forward(enc.config, enc.params, enc.bn, input, phase, rng, tape);
}

// Eval-phase embedding; the encoder is left untouched.
inline Tensor encoder_embed(const ToyEncoder& enc, const Tensor& input) {
  std::vector<BatchNormState> bn = enc.bn;
  Rng unused(0);
  return encoder_forward(enc.config, enc.params, bn, input, TrainPhase::eval(), unused);
}

struct EncoderGrads {
  EncoderParams params;
  Tensor d_input;
};

inline EncoderGrads encoder_backward(const ToyEncoder& enc, const EncoderTape& tape,
                                     const Tensor& d_embedding) {
  const auto& cfg = enc.config;
  EncoderGrads g{enc.params.zeros_like(), {}};
  Tensor d_head = l2_normalize_rows_backward(tape.embedding, tape.norms, d_embedding);
  DenseGrads dg = dense_backward(tape.flat, enc.params.head_w, d_head);
  g.params.head_w = std::move(dg.d_weight);
  g.params.head_b = std::move(dg.d_bias);

  Tensor d = std::move(dg.d_input);
  for (std::size_t ii = cfg.blocks.size(); ii-- > 0;) {
    const auto& spec = cfg.blocks[ii];
    const auto& p = enc.params.blocks[ii];
    const auto& bt = tape.blocks[ii];
    auto& gp = g.params.blocks[ii];
    if (spec.blurpool) {
      d.reshape(blurpool_output_shape(bt.pre_pool_shape));
      d = blurpool_backward(bt.pre_pool_shape, d, cfg.blur);
    } else {
      Shape s = bt.bn_out.shape();
      d.reshape(s);
    }
    if (spec.dropblock) d = dropblock_backward(bt.gate, d);

    PreluGrads pg = prelu_backward(bt.bn_out, p.slope.span(), d);
    gp.slope = Tensor(p.slope.shape(), std::move(pg.d_slope));
    BatchNormGrads bg = batchnorm_backward(bt.bn, p.gamma.span(), pg.d_input);
    gp.gamma = Tensor(p.gamma.shape(), std::move(bg.d_gamma));
    gp.beta = Tensor(p.beta.shape(), std::move(bg.d_beta));
    Conv2dGrads cg = conv2d_backward(bt.input, p.conv_w, bg.d_input);
    gp.conv_w = std::move(cg.d_weight);
    Tensor d_in = std::move(cg.d_input);
    if (p.skip_w.empty()) {
      for (std::size_t k = 0; k < d_in.size(); ++k) d_in[k] += d[k];
    } else {
      Conv2dGrads sg = conv2d_backward(bt.input, p.skip_w, d);
      gp.skip_w = std::move(sg.d_weight);
      for (std::size_t k = 0; k < d_in.size(); ++k) d_in[k] += sg.d_input[k];
    }
    d = std::move(d_in);
  }
  g.d_input = std::move(d);
  return g;
}

// One Adam state per trainable tensor, in EncoderParams visiting order.
struct EncoderOptimizer {
  std::vector<optim::AdamState> states;

  // Applies an update; with bn_only set, every non-BN tensor is left
  // untouched (its Adam state as well).
  void step(EncoderParams& params, const EncoderParams& grads, const optim::AdamHyper& hyper,
            bool bn_only = false) {
    std::vector<Tensor*> ps;
    std::vector<ParamKind> kinds;
    params.for_each([&](const std::string&, ParamKind k, Tensor& t) {
      ps.push_back(&t);
      kinds.push_back(k);
    });
    std::vector<const Tensor*> gs;
    grads.for_each([&](const std::string&, ParamKind, const Tensor& t) { gs.push_back(&t); });
    if (states.empty()) states.resize(ps.size());
    if (gs.size() != ps.size() || states.size() != ps.size())
      throw ShapeError("optimizer/parameter layout mismatch");
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (bn_only && !is_bn_param(kinds[i])) continue;
      optim::adam_step(ps[i]->span(), gs[i]->span(), states[i], hyper);
    }
  }
};

// Drop-and-tune update: batch-statistics forward with dropping disabled, then
// an Adam step restricted to BN scale/shift. `loss_grad` maps the embedding
// batch to dL/d(embedding).
inline void bn_tune_step(ToyEncoder& enc, const Tensor& batch, const TrainPhase& phase,
                         const std::function<Tensor(const Tensor&)>& loss_grad,
                         EncoderOptimizer& opt, const optim::AdamHyper& hyper) {
  if (phase.mode != Phase::kBnTune)
    throw InvalidPhase("bn_tune_step requires the bn_tune phase");
  if (phase.drop_enabled) throw InvalidPhase("bn_tune phase must have dropping disabled");
  Rng unused(0);
  EncoderTape tape;
  Tensor emb = encoder_forward(enc, batch, phase, unused, &tape);
  EncoderGrads g = encoder_backward(enc, tape, loss_grad(emb));
  opt.step(enc.params, g.params, hyper, /*bn_only=*/true);
}

// Replaces every BN running statistic with the exact moments of that layer's
// input over the chunks yielded by `chunk(k)`, k < n_chunks. Blocks are
// calibrated in order, each seeing its predecessors in eval mode.
inline void recalibrate_bn(ToyEncoder& enc, const std::function<Tensor(std::size_t)>& chunk,
                           std::size_t n_chunks) {
  const auto& cfg = enc.config;
  Rng unused(0);
  for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
    const std::size_t C = cfg.blocks[i].out_channels;
    std::vector<double> mean(C, 0.0), m2(C, 0.0);
    double count = 0.0;
    for (std::size_t k = 0; k < n_chunks; ++k) {
      Tensor x = chunk(k);
      check_encoder_input(cfg, x);
      for (std::size_t b = 0; b < i; ++b)
        x = block_forward(cfg, enc.params, enc.bn, b, std::move(x), TrainPhase::eval(), unused);
      const Tensor z = conv2d(x, enc.params.blocks[i].conv_w);
      const std::size_t N = z.dim(0), HW = z.dim(2) * z.dim(3);
      const double n = static_cast<double>(N * HW);
      for (std::size_t c = 0; c < C; ++c) {
        double s = 0.0;
        for (std::size_t q = 0; q < N; ++q) {
          const double* p = &z.at(q, c, 0, 0);
          for (std::size_t t = 0; t < HW; ++t) s += p[t];
        }
        const double mu = s / n;
        double ss = 0.0;
        for (std::size_t q = 0; q < N; ++q) {
          const double* p = &z.at(q, c, 0, 0);
          for (std::size_t t = 0; t < HW; ++t) ss += (p[t] - mu) * (p[t] - mu);
        }
        // Chan et al. pairwise merge
        const double delta = mu - mean[c], tot = count + n;
        mean[c] += delta * n / tot;
        m2[c] += ss + delta * delta * count * n / tot;
      }
      count += n;
    }
    if (count < 2.0) throw InvalidBatch("recalibration needs at least two values per channel");
    enc.bn[i].running_mean = mean;
    for (std::size_t c = 0; c < C; ++c) enc.bn[i].running_var[c] = m2[c] / (count - 1.0);
  }
}

}  // namespace avsync::nn
