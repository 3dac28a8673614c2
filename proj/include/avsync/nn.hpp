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

// Forward/backward kernels over (N, C, H, W) tensors. Every backward takes the
// forward inputs (or the cache the forward returned) plus the output gradient.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "avsync/error.hpp"
#include "avsync/tensor.hpp"

namespace avsync::nn {

enum class Phase { kTrain, kEval, kBnTune };

// kBnTune always runs with stochastic dropping disabled.
struct TrainPhase {
  Phase mode = Phase::kEval;
  bool drop_enabled = false;

  static TrainPhase train(bool drop = true) { return {Phase::kTrain, drop}; }
  static TrainPhase eval() { return {Phase::kEval, false}; }
  static TrainPhase bn_tune() { return {Phase::kBnTune, false}; }

  bool uses_batch_stats() const { return mode != Phase::kEval; }
  bool dropping() const { return mode == Phase::kTrain && drop_enabled; }
};

// ---------------------------------------------------------------------------
// conv2d: stride-1 cross-correlation with zero "same" padding (odd kernels).

struct Conv2dGrads {
  Tensor d_input;
  Tensor d_weight;
};

namespace detail {

inline void check_conv_shapes(const Tensor& x, const Tensor& w, int stride) {
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  if (stride != 1) throw ShapeError("conv2d supports stride 1 only; downsample with blurpool");
  if (w.dim(1) != x.dim(1))
    throw ShapeError("conv2d channel mismatch: input " + shape_string(x.shape()) +
                     ", weight " + shape_string(w.shape()));
  if (w.dim(2) % 2 == 0 || w.dim(3) % 2 == 0)
    throw ShapeError("conv2d expects odd kernel sizes");
}

// Output columns [lo, hi) for which input column ow + k - pad is in range.
inline void valid_range(std::size_t k, std::size_t pad, std::size_t width,
                        std::size_t& lo, std::size_t& hi) {
  lo = pad > k ? pad - k : 0;
  hi = k > width + pad ? 0 : std::min(width, width + pad - k);
}

}  // namespace detail

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMatrix>;
using RowMap = Eigen::Map<RowMatrix>;

// Unfolds one (C, H, W) image into a (C*KH*KW, H*W) patch matrix.
inline void im2col(const double* in, std::size_t C, std::size_t H, std::size_t W, std::size_t KH,
                   std::size_t KW, RowMatrix& col) {
  const std::size_t ph = KH / 2, pw = KW / 2;
  col.setZero(static_cast<Eigen::Index>(C * KH * KW), static_cast<Eigen::Index>(H * W));
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t kh = 0; kh < KH; ++kh)
      for (std::size_t kw = 0; kw < KW; ++kw) {
        double* row = col.data() + ((c * KH + kh) * KW + kw) * H * W;
        std::size_t lo, hi;
        valid_range(kw, pw, W, lo, hi);
        for (std::size_t oh = 0; oh < H; ++oh) {
          const auto ih = static_cast<std::int64_t>(oh + kh) - static_cast<std::int64_t>(ph);
          if (ih < 0 || ih >= static_cast<std::int64_t>(H)) continue;
          const double* irow = in + (c * H + static_cast<std::size_t>(ih)) * W;
          for (std::size_t ow = lo; ow < hi; ++ow) row[oh * W + ow] = irow[ow + kw - pw];
        }
      }
}

inline void col2im_add(const RowMatrix& col, std::size_t C, std::size_t H, std::size_t W,
                       std::size_t KH, std::size_t KW, double* out) {
  const std::size_t ph = KH / 2, pw = KW / 2;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t kh = 0; kh < KH; ++kh)
      for (std::size_t kw = 0; kw < KW; ++kw) {
        const double* row = col.data() + ((c * KH + kh) * KW + kw) * H * W;
        std::size_t lo, hi;
        valid_range(kw, pw, W, lo, hi);
        for (std::size_t oh = 0; oh < H; ++oh) {
          const auto ih = static_cast<std::int64_t>(oh + kh) - static_cast<std::int64_t>(ph);
          if (ih < 0 || ih >= static_cast<std::int64_t>(H)) continue;
          double* orow = out + (c * H + static_cast<std::size_t>(ih)) * W;
          for (std::size_t ow = lo; ow < hi; ++ow) orow[ow + kw - pw] += row[oh * W + ow];
        }
      }
}

}  // namespace detail

inline Tensor conv2d(const Tensor& x, const Tensor& w, int stride = 1) {
  detail::check_conv_shapes(x, w, stride);
  const std::size_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Co = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  const auto HW = static_cast<Eigen::Index>(H * W);
  const detail::ConstRowMap wm(w.data(), static_cast<Eigen::Index>(Co),
                               static_cast<Eigen::Index>(Ci * KH * KW));
  Tensor y({N, Co, H, W});
  detail::RowMatrix col;
  for (std::size_t n = 0; n < N; ++n) {
    detail::im2col(x.data() + n * Ci * H * W, Ci, H, W, KH, KW, col);
    detail::RowMap(y.data() + n * Co * H * W, static_cast<Eigen::Index>(Co), HW).noalias() = wm * col;
  }
  return y;
}

inline Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy,
                                   int stride = 1) {
  detail::check_conv_shapes(x, w, stride);
  const std::size_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Co = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  if (dy.shape() != Shape{N, Co, H, W}) throw ShapeError("conv2d_backward: bad output gradient shape");
  const auto HW = static_cast<Eigen::Index>(H * W);
  const auto K = static_cast<Eigen::Index>(Ci * KH * KW);
  const detail::ConstRowMap wm(w.data(), static_cast<Eigen::Index>(Co), K);
  Conv2dGrads g{Tensor(x.shape()), Tensor(w.shape())};
  detail::RowMap dw(g.d_weight.data(), static_cast<Eigen::Index>(Co), K);
  detail::RowMatrix col, dcol;
  for (std::size_t n = 0; n < N; ++n) {
    const detail::ConstRowMap gy(dy.data() + n * Co * H * W, static_cast<Eigen::Index>(Co), HW);
    detail::im2col(x.data() + n * Ci * H * W, Ci, H, W, KH, KW, col);
    dw.noalias() += gy * col.transpose();
    dcol.noalias() = wm.transpose() * gy;
    detail::col2im_add(dcol, Ci, H, W, KH, KW, g.d_input.data() + n * Ci * H * W);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Batch normalization over (N, H, W) per channel.

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
  bool operator==(const BatchNormState&) const = default;
};

struct BatchNormOptions {
  double momentum = 0.1;
  double eps = 1e-5;
};

struct BatchNormCache {
  Tensor x_hat;
  std::vector<double> inv_std;
  bool batch_stats = false;
  // Per-channel statistics of the input batch (biased variance).
  std::vector<double> batch_mean;
  std::vector<double> batch_var;
};

struct BatchNormGrads {
  Tensor d_input;
  std::vector<double> d_gamma;
  std::vector<double> d_beta;
};

// Train and bn_tune normalize by batch statistics and update the running
// statistics in `state`; eval normalizes by the running statistics.
inline Tensor batchnorm(const Tensor& x, std::span<const double> gamma,
                        std::span<const double> beta, BatchNormState& state,
                        const TrainPhase& phase, BatchNormCache* cache = nullptr,
                        const BatchNormOptions& opt = {}) {
  require_rank(x, 4, "batchnorm input");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gamma.size() != C || beta.size() != C || state.running_mean.size() != C)
    throw ShapeError("batchnorm parameter size mismatch");
  const bool batch_stats = phase.uses_batch_stats();
  if (batch_stats && N < 2) throw InvalidBatch("batch of 1 in a batch-statistics phase");

  std::vector<double> mean(C), var(C), inv_std(C);
  const double count = static_cast<double>(N * HW);
  for (std::size_t c = 0; c < C; ++c) {
    if (batch_stats) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const double* p = &x.at(n, c, 0, 0);
        for (std::size_t i = 0; i < HW; ++i) s += p[i];
      }
      const double mu = s / count;
      double ss = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const double* p = &x.at(n, c, 0, 0);
        for (std::size_t i = 0; i < HW; ++i) ss += (p[i] - mu) * (p[i] - mu);
      }
      mean[c] = mu;
      var[c] = ss / count;
      const double unbiased = count > 1 ? ss / (count - 1.0) : var[c];
      state.running_mean[c] = (1.0 - opt.momentum) * state.running_mean[c] + opt.momentum * mu;
      state.running_var[c] = (1.0 - opt.momentum) * state.running_var[c] + opt.momentum * unbiased;
    } else {
      mean[c] = state.running_mean[c];
      var[c] = state.running_var[c];
    }
    inv_std[c] = 1.0 / std::sqrt(var[c] + opt.eps);
  }

  Tensor y(x.shape());
  Tensor x_hat(x.shape());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const double* p = &x.at(n, c, 0, 0);
      double* h = &x_hat.at(n, c, 0, 0);
      double* q = &y.at(n, c, 0, 0);
      for (std::size_t i = 0; i < HW; ++i) {
        h[i] = (p[i] - mean[c]) * inv_std[c];
        q[i] = gamma[c] * h[i] + beta[c];
      }
    }
  if (cache) {
    cache->x_hat = std::move(x_hat);
    cache->inv_std = std::move(inv_std);
    cache->batch_stats = batch_stats;
    cache->batch_mean = std::move(mean);
    cache->batch_var = std::move(var);
  }
  return y;
}

inline BatchNormGrads batchnorm_backward(const BatchNormCache& cache,
                                         std::span<const double> gamma, const Tensor& dy) {
  const Tensor& xh = cache.x_hat;
  const std::size_t N = xh.dim(0), C = xh.dim(1), HW = xh.dim(2) * xh.dim(3);
  const double count = static_cast<double>(N * HW);
  BatchNormGrads g{Tensor(xh.shape()), std::vector<double>(C, 0.0), std::vector<double>(C, 0.0)};
  for (std::size_t c = 0; c < C; ++c) {
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const double* d = &dy.at(n, c, 0, 0);
      const double* h = &xh.at(n, c, 0, 0);
      for (std::size_t i = 0; i < HW; ++i) {
        sum_dy += d[i];
        sum_dy_xh += d[i] * h[i];
      }
    }
    g.d_gamma[c] = sum_dy_xh;
    g.d_beta[c] = sum_dy;
    const double k = gamma[c] * cache.inv_std[c];
    for (std::size_t n = 0; n < N; ++n) {
      const double* d = &dy.at(n, c, 0, 0);
      const double* h = &xh.at(n, c, 0, 0);
      double* out = &g.d_input.at(n, c, 0, 0);
      for (std::size_t i = 0; i < HW; ++i) {
        out[i] = cache.batch_stats
                     ? k * (d[i] - sum_dy / count - h[i] * sum_dy_xh / count)
                     : k * d[i];
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// PReLU with one slope per channel.

struct PreluGrads {
  Tensor d_input;
  std::vector<double> d_slope;
};

inline Tensor prelu(const Tensor& x, std::span<const double> slope) {
  require_rank(x, 4, "prelu input");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (slope.size() != C) throw ShapeError("prelu slope size mismatch");
  Tensor y(x.shape());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const double* p = &x.at(n, c, 0, 0);
      double* q = &y.at(n, c, 0, 0);
      for (std::size_t i = 0; i < HW; ++i) q[i] = p[i] > 0.0 ? p[i] : slope[c] * p[i];
    }
  return y;
}

inline PreluGrads prelu_backward(const Tensor& x, std::span<const double> slope,
                                 const Tensor& dy) {
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  PreluGrads g{Tensor(x.shape()), std::vector<double>(C, 0.0)};
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const double* p = &x.at(n, c, 0, 0);
      const double* d = &dy.at(n, c, 0, 0);
      double* q = &g.d_input.at(n, c, 0, 0);
      for (std::size_t i = 0; i < HW; ++i) {
        if (p[i] > 0.0) {
          q[i] = d[i];
        } else {
          q[i] = slope[c] * d[i];
          g.d_slope[c] += p[i] * d[i];
        }
      }
    }
  return g;
}

// ---------------------------------------------------------------------------
// BlurPool: separable low-pass filter (reflect padding) then stride-2
// subsampling along H and W.

struct BlurKernel {
  std::vector<double> taps{0.25, 0.5, 0.25};
};

namespace detail {

inline std::size_t mirror(std::int64_t i, std::size_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (static_cast<std::int64_t>(n) - 1);
  i %= period;
  if (i < 0) i += period;
  if (i >= static_cast<std::int64_t>(n)) i = period - i;
  return static_cast<std::size_t>(i);
}

// out[o] = sum_a taps[a] * in[mirror(2 o + a - center)], applied to `lines`
// independent lines of length n with the given element stride.
inline void blur_line_forward(const double* in, double* out, std::size_t n,
                              std::size_t n_out, std::size_t stride,
                              const std::vector<double>& taps) {
  const auto center = static_cast<std::int64_t>(taps.size() / 2);
  for (std::size_t o = 0; o < n_out; ++o) {
    double acc = 0.0;
    for (std::size_t a = 0; a < taps.size(); ++a)
      acc += taps[a] * in[mirror(static_cast<std::int64_t>(2 * o + a) - center, n) * stride];
    out[o * stride] = acc;
  }
}

inline void blur_line_backward(const double* dout, double* din, std::size_t n,
                               std::size_t n_out, std::size_t stride,
                               const std::vector<double>& taps) {
  const auto center = static_cast<std::int64_t>(taps.size() / 2);
  for (std::size_t o = 0; o < n_out; ++o)
    for (std::size_t a = 0; a < taps.size(); ++a)
      din[mirror(static_cast<std::int64_t>(2 * o + a) - center, n) * stride] +=
          taps[a] * dout[o * stride];
}

inline void check_blurpool(const Tensor& x) {
  require_rank(x, 4, "blurpool input");
  if (x.dim(2) < 2 || x.dim(3) < 2)
    throw ShapeError("blurpool needs spatial dims >= 2, got " + shape_string(x.shape()));
}

}  // namespace detail

inline Shape blurpool_output_shape(const Shape& in) {
  return {in[0], in[1], (in[2] + 1) / 2, (in[3] + 1) / 2};
}

inline Tensor blurpool(const Tensor& x, const BlurKernel& kernel = {}) {
  detail::check_blurpool(x);
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = (H + 1) / 2, Wo = (W + 1) / 2;
  Tensor tmp({N, C, H, Wo});
  Tensor y({N, C, Ho, Wo});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t h = 0; h < H; ++h)
        detail::blur_line_forward(&x.at(n, c, h, 0), &tmp.at(n, c, h, 0), W, Wo, 1,
                                  kernel.taps);
      for (std::size_t w = 0; w < Wo; ++w)
        detail::blur_line_forward(&tmp.at(n, c, 0, w), &y.at(n, c, 0, w), H, Ho, Wo,
                                  kernel.taps);
    }
  return y;
}

inline Tensor blurpool_backward(const Shape& input_shape, const Tensor& dy,
                                const BlurKernel& kernel = {}) {
  const std::size_t N = input_shape[0], C = input_shape[1], H = input_shape[2],
                    W = input_shape[3];
  const std::size_t Ho = (H + 1) / 2, Wo = (W + 1) / 2;
  Tensor dtmp({N, C, H, Wo});
  Tensor dx(input_shape);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t w = 0; w < Wo; ++w)
        detail::blur_line_backward(&dy.at(n, c, 0, w), &dtmp.at(n, c, 0, w), H, Ho, Wo,
                                   kernel.taps);
      for (std::size_t h = 0; h < H; ++h)
        detail::blur_line_backward(&dtmp.at(n, c, h, 0), &dx.at(n, c, h, 0), W, Wo, 1,
                                   kernel.taps);
    }
  return dx;
}

// ---------------------------------------------------------------------------
// DropBlock. 2-D drops b x b spatial blocks per (sample, channel); 3-D drops
// b x b x b blocks that also span the channel axis. Kept activations are
// rescaled by (elements / kept elements).

enum class DropDims { k2D, k3D };

struct DropBlockSpec {
  double drop_rate = 0.1;
  std::size_t block_size = 3;
  DropDims dims = DropDims::k2D;
};

// Bernoulli rate for block seeds so that the expected dropped fraction is
// close to drop_rate (ignoring block overlap).
inline double dropblock_seed_rate(const DropBlockSpec& spec, const Shape& shape) {
  const double b = static_cast<double>(spec.block_size);
  double full = static_cast<double>(shape[2] * shape[3]);
  double valid = static_cast<double>((shape[2] - spec.block_size + 1) *
                                     (shape[3] - spec.block_size + 1));
  double block = b * b;
  if (spec.dims == DropDims::k3D) {
    full *= static_cast<double>(shape[1]);
    valid *= static_cast<double>(shape[1] - spec.block_size + 1);
    block *= b;
  }
  return spec.drop_rate / block * full / valid;
}

inline void check_dropblock(const DropBlockSpec& spec, const Shape& shape) {
  if (shape.size() != 4) throw ShapeError("dropblock expects a 4-D tensor");
  if (spec.block_size == 0) throw InvalidConfig("block_size must be positive");
  if (!(spec.drop_rate >= 0.0 && spec.drop_rate < 1.0))
    throw InvalidConfig("drop_rate must lie in [0, 1)");
  const bool too_big = spec.block_size > shape[2] || spec.block_size > shape[3] ||
                       (spec.dims == DropDims::k3D && spec.block_size > shape[1]);
  if (too_big)
    throw InvalidConfig("block_size " + std::to_string(spec.block_size) +
                        " exceeds feature size " + shape_string(shape));
}

// Multiplicative gate (mask * rescale). Identity gate when not dropping.
inline Tensor dropblock_gate(const Shape& shape, const DropBlockSpec& spec,
                             const TrainPhase& phase, Rng& rng) {
  check_dropblock(spec, shape);
  Tensor gate(shape, 1.0);
  if (!phase.dropping() || spec.drop_rate == 0.0) return gate;

  const std::size_t N = shape[0], C = shape[1], H = shape[2], W = shape[3];
  const std::size_t b = spec.block_size;
  std::bernoulli_distribution seed(std::min(1.0, dropblock_seed_rate(spec, shape)));
  for (std::size_t n = 0; n < N; ++n) {
    if (spec.dims == DropDims::k2D) {
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y + b <= H; ++y)
          for (std::size_t x = 0; x + b <= W; ++x)
            if (seed(rng))
              for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < b; ++j) gate.at(n, c, y + i, x + j) = 0.0;
    } else {
      for (std::size_t c = 0; c + b <= C; ++c)
        for (std::size_t y = 0; y + b <= H; ++y)
          for (std::size_t x = 0; x + b <= W; ++x)
            if (seed(rng))
              for (std::size_t k = 0; k < b; ++k)
                for (std::size_t i = 0; i < b; ++i)
                  for (std::size_t j = 0; j < b; ++j)
                    gate.at(n, c + k, y + i, x + j) = 0.0;
    }
  }
  const double kept = std::accumulate(gate.values().begin(), gate.values().end(), 0.0);
  const double scale = kept > 0.0 ? static_cast<double>(gate.size()) / kept : 0.0;
  for (auto& g : gate.values()) g *= scale;
  return gate;
}

inline Tensor apply_gate(const Tensor& x, const Tensor& gate) {
  if (x.shape() != gate.shape()) throw ShapeError("gate shape mismatch");
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * gate[i];
  return y;
}

inline Tensor dropblock(const Tensor& x, const DropBlockSpec& spec,
                        const TrainPhase& phase, Rng& rng, Tensor* gate_out = nullptr) {
  Tensor gate = dropblock_gate(x.shape(), spec, phase, rng);
  Tensor y = apply_gate(x, gate);
  if (gate_out) *gate_out = std::move(gate);
  return y;
}

inline Tensor dropblock_backward(const Tensor& gate, const Tensor& dy) {
  return apply_gate(dy, gate);
}

// ---------------------------------------------------------------------------
// Dense layer y = x W^T + b, x (N, F), W (D, F), b (D).

struct DenseGrads {
  Tensor d_input;
  Tensor d_weight;
  Tensor d_bias;
};

inline Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 2, "dense input");
  if (w.dim(1) != x.dim(1) || b.size() != w.dim(0))
    throw ShapeError("dense shape mismatch: input " + shape_string(x.shape()) +
                     ", weight " + shape_string(w.shape()));
  const std::size_t N = x.dim(0), F = x.dim(1), D = w.dim(0);
  Tensor y({N, D});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t d = 0; d < D; ++d) {
      const double* xr = x.data() + n * F;
      const double* wr = w.data() + d * F;
      double acc = b[d];
      for (std::size_t f = 0; f < F; ++f) acc += xr[f] * wr[f];
      y[n * D + d] = acc;
    }
  return y;
}

inline DenseGrads dense_backward(const Tensor& x, const Tensor& w, const Tensor& dy) {
  const std::size_t N = x.dim(0), F = x.dim(1), D = w.dim(0);
  DenseGrads g{Tensor(x.shape()), Tensor(w.shape()), Tensor({D})};
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t d = 0; d < D; ++d) {
      const double gd = dy[n * D + d];
      g.d_bias[d] += gd;
      const double* xr = x.data() + n * F;
      const double* wr = w.data() + d * F;
      double* gx = g.d_input.data() + n * F;
      double* gw = g.d_weight.data() + d * F;
      for (std::size_t f = 0; f < F; ++f) {
        gx[f] += gd * wr[f];
        gw[f] += gd * xr[f];
      }
    }
  return g;
}

// Row-wise L2 normalization of an (N, D) tensor.
inline Tensor l2_normalize_rows(const Tensor& x, std::vector<double>* norms = nullptr) {
  require_rank(x, 2, "l2_normalize_rows");
  const std::size_t N = x.dim(0), D = x.dim(1);
  Tensor y(x.shape());
  if (norms) norms->assign(N, 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    const double norm = l2_norm(std::span(x.data() + n * D, D));
    if (!(norm > 0.0)) throw InvalidInput("cannot normalize a zero embedding");
    for (std::size_t d = 0; d < D; ++d) y[n * D + d] = x[n * D + d] / norm;
    if (norms) (*norms)[n] = norm;
  }
  return y;
}

inline Tensor l2_normalize_rows_backward(const Tensor& y, const std::vector<double>& norms,
                                         const Tensor& dy) {
  const std::size_t N = y.dim(0), D = y.dim(1);
  Tensor dx(y.shape());
  for (std::size_t n = 0; n < N; ++n) {
    const double proj = dot(std::span(y.data() + n * D, D), std::span(dy.data() + n * D, D));
    for (std::size_t d = 0; d < D; ++d)
      dx[n * D + d] = (dy[n * D + d] - y[n * D + d] * proj) / norms[n];
  }
  return dx;
}

}  // namespace avsync::nn
