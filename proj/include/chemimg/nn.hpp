#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "chemimg/error.hpp"
#include "chemimg/random.hpp"
#include "json.hpp"

namespace chemimg::nn {

/// Dense row-major tensor of rank <= 4.
template <class T>
struct Tensor {
  std::vector<std::size_t> dims;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> d) : dims(std::move(d)), data(count(dims), T(0)) {}

  static std::size_t count(const std::vector<std::size_t>& d) {
    return std::accumulate(d.begin(), d.end(), std::size_t{1}, std::multiplies<>());
  }
  std::size_t size() const { return data.size(); }
  bool operator==(const Tensor&) const = default;
};

template <class T>
using Params = std::vector<Tensor<T>>;

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Padding { same, valid };

/// Shape bookkeeping for one 2D convolution or pooling window.
struct ConvGeom {
  std::size_t in_c = 0, in_h = 0, in_w = 0;
  std::size_t k = 1, stride = 1;
  std::size_t pad_top = 0, pad_left = 0;
  std::size_t out_h = 0, out_w = 0;

  std::size_t patch() const { return in_c * k * k; }
  std::size_t out_pixels() const { return out_h * out_w; }
};

/// Same padding follows the usual convention: output = ceil(in / stride), the
/// odd leftover pad goes after the input.
inline ConvGeom conv_geometry(std::size_t in_c, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
                              Padding padding) {
  if (k == 0 || stride == 0) throw ShapeMismatch("kernel size and stride must be positive");
  ConvGeom g{in_c, h, w, k, stride, 0, 0, 0, 0};
  if (padding == Padding::valid) {
    if (h < k || w < k) throw ShapeMismatch("valid convolution needs input at least as large as the kernel");
    g.out_h = (h - k) / stride + 1;
    g.out_w = (w - k) / stride + 1;
  } else {
    g.out_h = (h + stride - 1) / stride;
    g.out_w = (w + stride - 1) / stride;
    const std::size_t need_h = (g.out_h - 1) * stride + k, need_w = (g.out_w - 1) * stride + k;
    g.pad_top = need_h > h ? (need_h - h) / 2 : 0;
    g.pad_left = need_w > w ? (need_w - w) / 2 : 0;
  }
  return g;
}

template <class T>
void im2col(const T* in, const ConvGeom& g, T* cols) {
  const std::size_t P = g.out_pixels();
  for (std::size_t c = 0; c < g.in_c; ++c) {
    for (std::size_t i = 0; i < g.k; ++i) {
      for (std::size_t j = 0; j < g.k; ++j) {
        T* row = cols + ((c * g.k + i) * g.k + j) * P;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad_top);
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = in + (c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad_left);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

/// Adds column gradients back onto the input they were gathered from.
template <class T>
void col2im_add(const T* cols, const ConvGeom& g, T* din) {
  const std::size_t P = g.out_pixels();
  for (std::size_t c = 0; c < g.in_c; ++c) {
    for (std::size_t i = 0; i < g.k; ++i) {
      for (std::size_t j = 0; j < g.k; ++j) {
        const T* row = cols + ((c * g.k + i) * g.k + j) * P;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad_top);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          T* dst = din + (c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad_left);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.in_w)) dst[ix] += row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

/// Square-kernel convolution (cross-correlation) with bias; weights are
/// [out_c][in_c][k][k]. The layer refers to its tensors by index.
struct Conv2D {
  std::size_t weight = 0, bias = 0;
  std::size_t in_c = 0, out_c = 0, k = 1, stride = 1;
  Padding padding = Padding::same;
};

template <class T>
struct ConvCache {
  ConvGeom g;
  std::vector<T> cols;
};

template <class T>
void conv_forward(const Conv2D& L, const Params<T>& P, const T* in, std::size_t h, std::size_t w, std::vector<T>& out,
                  ConvCache<T>& cache) {
  cache.g = conv_geometry(L.in_c, h, w, L.k, L.stride, L.padding);
  const std::size_t K = cache.g.patch(), N = cache.g.out_pixels();
  cache.cols.resize(K * N);
  im2col(in, cache.g, cache.cols.data());
  out.resize(L.out_c * N);
  Eigen::Map<RowMat<T>> o(out.data(), Eigen::Index(L.out_c), Eigen::Index(N));
  Eigen::Map<const RowMat<T>> wm(P[L.weight].data.data(), Eigen::Index(L.out_c), Eigen::Index(K));
  Eigen::Map<const RowMat<T>> cm(cache.cols.data(), Eigen::Index(K), Eigen::Index(N));
  o.noalias() = wm * cm;
  const T* b = P[L.bias].data.data();
  for (std::size_t oc = 0; oc < L.out_c; ++oc) o.row(Eigen::Index(oc)).array() += b[oc];
}

/// Accumulates weight/bias gradients into G and, when din is non-null, adds
/// the input gradient to din.
template <class T>
void conv_backward(const Conv2D& L, const Params<T>& P, Params<T>& G, const ConvCache<T>& cache, const T* dout, T* din,
                   std::vector<T>& scratch) {
  const std::size_t K = cache.g.patch(), N = cache.g.out_pixels();
  Eigen::Map<const RowMat<T>> d(dout, Eigen::Index(L.out_c), Eigen::Index(N));
  Eigen::Map<const RowMat<T>> cm(cache.cols.data(), Eigen::Index(K), Eigen::Index(N));
  Eigen::Map<RowMat<T>> dw(G[L.weight].data.data(), Eigen::Index(L.out_c), Eigen::Index(K));
  dw.noalias() += d * cm.transpose();
  T* db = G[L.bias].data.data();
  for (std::size_t oc = 0; oc < L.out_c; ++oc) db[oc] += d.row(Eigen::Index(oc)).sum();
  if (!din) return;
  scratch.resize(K * N);
  Eigen::Map<RowMat<T>> dc(scratch.data(), Eigen::Index(K), Eigen::Index(N));
  Eigen::Map<const RowMat<T>> wm(P[L.weight].data.data(), Eigen::Index(L.out_c), Eigen::Index(K));
  dc.noalias() = wm.transpose() * d;
  col2im_add(scratch.data(), cache.g, din);
}

template <class T>
void relu_inplace(std::vector<T>& v) {
  for (auto& x : v) x = x > T(0) ? x : T(0);
}

/// Zeroes gradient entries whose forward ReLU output was not positive.
template <class T>
void relu_mask(const std::vector<T>& out, T* d) {
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!(out[i] > T(0))) d[i] = T(0);
}

/// 3x3 stride-2 max pooling with same padding; padded cells never win.
template <class T>
void maxpool_forward(const T* in, std::size_t c, std::size_t h, std::size_t w, std::vector<T>& out,
                     std::vector<std::size_t>& argmax, ConvGeom& g) {
  g = conv_geometry(c, h, w, 3, 2, Padding::same);
  const std::size_t N = g.out_pixels();
  out.assign(c * N, T(0));
  argmax.assign(c * N, 0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t at = 0;
        for (std::size_t i = 0; i < 3; ++i) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * 2 + i) - static_cast<std::ptrdiff_t>(g.pad_top);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t j = 0; j < 3; ++j) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * 2 + j) - static_cast<std::ptrdiff_t>(g.pad_left);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const std::size_t idx = (ch * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix);
            if (in[idx] > best) {
              best = in[idx];
              at = idx;
            }
          }
        }
        out[ch * N + oy * g.out_w + ox] = best;
        argmax[ch * N + oy * g.out_w + ox] = at;
      }
    }
  }
}

enum class Head { sigmoid, linear };

struct NetworkConfig {
  std::size_t depth = 1;
  std::size_t filters = 8;
  std::size_t input_channels = 1;
  std::size_t input_size = 80;
  std::size_t tasks = 1;
  Head head = Head::sigmoid;
  double residual_scale = 1.0;
  std::uint64_t seed = 0;

  std::string name() const { return "T" + std::to_string(depth) + "_F" + std::to_string(filters); }

  /// Parses "T<depth>_F<filters>".
  static std::pair<std::size_t, std::size_t> parse_arch(std::string_view s) {
    auto bad = [&] { return ConfigError("architecture must look like T1_F8, got '" + std::string(s) + "'"); };
    const auto us = s.find("_F");
    if (s.size() < 4 || s[0] != 'T' || us == std::string_view::npos || us < 2) throw bad();
    auto number = [&](std::string_view d) {
      if (d.empty() || d.size() > 6) throw bad();
      std::size_t v = 0;
      for (char c : d) {
        if (c < '0' || c > '9') throw bad();
        v = v * 10 + std::size_t(c - '0');
      }
      if (v == 0) throw bad();
      return v;
    };
    return {number(s.substr(1, us - 1)), number(s.substr(us + 2))};
  }

  bool operator==(const NetworkConfig&) const = default;
};

inline nlohmann::json to_json(const NetworkConfig& c) {
  return {{"arch", c.name()},
          {"depth", c.depth},
          {"filters", c.filters},
          {"input_channels", c.input_channels},
          {"input_size", c.input_size},
          {"tasks", c.tasks},
          {"head", c.head == Head::sigmoid ? "sigmoid" : "linear"},
          {"residual_scale", c.residual_scale},
          {"seed", c.seed}};
}

inline NetworkConfig network_config_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  try {
    c.depth = j.at("depth").get<std::size_t>();
    c.filters = j.at("filters").get<std::size_t>();
    c.input_channels = j.at("input_channels").get<std::size_t>();
    c.input_size = j.at("input_size").get<std::size_t>();
    c.tasks = j.at("tasks").get<std::size_t>();
    const auto head = j.at("head").get<std::string>();
    if (head != "sigmoid" && head != "linear") throw ConfigError("unknown head '" + head + "'");
    c.head = head == "sigmoid" ? Head::sigmoid : Head::linear;
    c.residual_scale = j.at("residual_scale").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad network config: ") + e.what());
  }
  return c;
}

struct InceptionResNetBlock {
  Conv2D b1, b2a, b2b, b3a, b3b, b3c, proj;
  std::size_t channels = 0, filters = 0;
  double scale = 1.0;
};

struct ReductionBlock {
  Conv2D conv;
  std::size_t in_c = 0;
};

template <class T>
struct BlockCache {
  std::size_t h = 0, w = 0;
  ConvCache<T> c1, c2a, c2b, c3a, c3b, c3c, cp;
  std::vector<T> a1, a2a, a2b, a3a, a3b, a3c, cat, proj, out;
};

template <class T>
struct ReductionCache {
  std::size_t h = 0, w = 0;
  ConvCache<T> conv;
  std::vector<T> conv_out, pool_out, out;
  std::vector<std::size_t> argmax;
  ConvGeom pool;
};

/// Per-sample activations kept for the backward pass.
template <class T>
struct Workspace {
  std::vector<T> input;
  ConvCache<T> stem;
  std::vector<T> stem_out;
  std::vector<std::vector<BlockCache<T>>> blocks;  // [stage][block]
  std::vector<ReductionCache<T>> reductions;
  std::size_t final_c = 0, final_h = 0, final_w = 0;
  std::vector<T> pooled, logits, output;
  std::vector<T> scratch, grad_a, grad_b, grad_c, grad_d;
};

/// Stem conv -> 3 x [depth x Inception-ResNet block -> reduction] -> global
/// average pool -> dense -> head. Inputs are C x H x W.
template <class T>
class Network {
 public:
  static constexpr std::size_t kStages = 3;

  explicit Network(const NetworkConfig& cfg) : cfg_(cfg) {
    if (cfg.depth < 1 || cfg.filters < 1 || cfg.tasks < 1 || cfg.input_channels < 1)
      throw ConfigError("depth, filters, tasks and input channels must be at least 1");
    if (cfg.input_size < 16) throw ConfigError("input spatial size must be at least 16");
    const std::size_t F = cfg.filters;
    stem_ = add_conv("stem", cfg.input_channels, F, 4, 2);
    std::size_t c = F;
    for (std::size_t s = 0; s < kStages; ++s) {
      std::vector<InceptionResNetBlock> stage;
      for (std::size_t b = 0; b < cfg.depth; ++b) {
        const std::string p = "s" + std::to_string(s) + ".b" + std::to_string(b) + ".";
        InceptionResNetBlock blk;
        blk.channels = c;
        blk.filters = F;
        blk.scale = cfg.residual_scale;
        blk.b1 = add_conv(p + "b1", c, F, 1, 1);
        blk.b2a = add_conv(p + "b2a", c, F, 1, 1);
        blk.b2b = add_conv(p + "b2b", F, F, 3, 1);
        blk.b3a = add_conv(p + "b3a", c, F, 1, 1);
        blk.b3b = add_conv(p + "b3b", F, F, 3, 1);
        blk.b3c = add_conv(p + "b3c", F, F, 3, 1);
        blk.proj = add_conv(p + "proj", 3 * F, c, 1, 1);
        stage.push_back(blk);
      }
      blocks_.push_back(std::move(stage));
      ReductionBlock red;
      red.in_c = c;
      red.conv = add_conv("s" + std::to_string(s) + ".red", c, F, 3, 2);
      reductions_.push_back(red);
      c += F;
    }
    final_channels_ = c;
    dense_w_ = add_tensor("dense.w", {cfg.tasks, c}, c);
    dense_b_ = add_tensor("dense.b", {cfg.tasks});

    Rng rng(cfg.seed);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (fan_in_[i] == 0) continue;  // biases start at zero
      const double limit = std::sqrt(6.0 / double(fan_in_[i]));
      for (auto& v : params_[i].data) v = T((2.0 * uniform_real(rng) - 1.0) * limit);
    }
    input_mean_.assign(cfg.input_channels, T(0));
    input_std_.assign(cfg.input_channels, T(1));
  }

  const NetworkConfig& config() const { return cfg_; }
  Params<T>& params() { return params_; }
  const Params<T>& params() const { return params_; }
  const std::vector<std::string>& param_names() const { return names_; }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }
  std::size_t final_channels() const { return final_channels_; }

  Params<T> zero_grads() const {
    Params<T> g;
    for (const auto& p : params_) g.emplace_back(p.dims);
    return g;
  }

  /// Fixed per-channel input standardisation (x - mean) / std.
  void set_standardization(std::vector<T> mean, std::vector<T> stddev) {
    if (mean.size() != cfg_.input_channels || stddev.size() != cfg_.input_channels)
      throw ShapeMismatch("standardisation vectors must have one entry per input channel");
    for (auto& s : stddev)
      if (!(s > T(0))) s = T(1);
    input_mean_ = std::move(mean);
    input_std_ = std::move(stddev);
  }
  const std::vector<T>& input_mean() const { return input_mean_; }
  const std::vector<T>& input_std() const { return input_std_; }

  InceptionResNetBlock& block(std::size_t stage, std::size_t index) { return blocks_.at(stage).at(index); }
  const ReductionBlock& reduction(std::size_t stage) const { return reductions_.at(stage); }

  /// Head outputs (sigmoid probabilities or linear values) for one sample.
  const std::vector<T>& forward(const T* input, Workspace<T>& ws) const {
    const std::size_t C = cfg_.input_channels, S = cfg_.input_size, HW = S * S;
    ws.input.assign(input, input + C * HW);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < HW; ++i) ws.input[c * HW + i] = (ws.input[c * HW + i] - input_mean_[c]) / input_std_[c];

    conv_forward(stem_, params_, ws.input.data(), S, S, ws.stem_out, ws.stem);
    relu_inplace(ws.stem_out);
    std::size_t h = ws.stem.g.out_h, w = ws.stem.g.out_w;
    const std::vector<T>* cur = &ws.stem_out;
    ws.blocks.resize(kStages);
    ws.reductions.resize(kStages);
    for (std::size_t s = 0; s < kStages; ++s) {
      ws.blocks[s].resize(blocks_[s].size());
      for (std::size_t b = 0; b < blocks_[s].size(); ++b) {
        block_forward(blocks_[s][b], *cur, h, w, ws.blocks[s][b]);
        cur = &ws.blocks[s][b].out;
      }
      reduction_forward(reductions_[s], *cur, h, w, ws.reductions[s]);
      cur = &ws.reductions[s].out;
      h = ws.reductions[s].pool.out_h;
      w = ws.reductions[s].pool.out_w;
    }
    ws.final_c = final_channels_;
    ws.final_h = h;
    ws.final_w = w;

    ws.pooled.assign(final_channels_, T(0));
    for (std::size_t c = 0; c < final_channels_; ++c) {
      T sum = 0;
      for (std::size_t i = 0; i < h * w; ++i) sum += (*cur)[c * h * w + i];
      ws.pooled[c] = sum / T(h * w);
    }
    ws.logits.assign(cfg_.tasks, T(0));
    const auto& dw = params_[dense_w_].data;
    const auto& db = params_[dense_b_].data;
    for (std::size_t t = 0; t < cfg_.tasks; ++t) {
      T z = db[t];
      for (std::size_t c = 0; c < final_channels_; ++c) z += dw[t * final_channels_ + c] * ws.pooled[c];
      ws.logits[t] = z;
    }
    ws.output = ws.logits;
    if (cfg_.head == Head::sigmoid)
      for (auto& v : ws.output) v = T(1) / (T(1) + std::exp(-v));
    return ws.output;
  }

  /// Back-propagates dL/dlogits (pre-head) from the last forward on `ws`,
  /// accumulating parameter gradients into G. Returns dL/dinput (raw input).
  std::vector<T> backward(Workspace<T>& ws, const T* dlogits, Params<T>& G) const {
    const std::size_t HWf = ws.final_h * ws.final_w;
    auto& dgw = G[dense_w_].data;
    auto& dgb = G[dense_b_].data;
    const auto& dw = params_[dense_w_].data;
    std::vector<T> dpooled(final_channels_, T(0));
    for (std::size_t t = 0; t < cfg_.tasks; ++t) {
      dgb[t] += dlogits[t];
      for (std::size_t c = 0; c < final_channels_; ++c) {
        dgw[t * final_channels_ + c] += dlogits[t] * ws.pooled[c];
        dpooled[c] += dlogits[t] * dw[t * final_channels_ + c];
      }
    }
    std::vector<T> d(final_channels_ * HWf);
    for (std::size_t c = 0; c < final_channels_; ++c)
      for (std::size_t i = 0; i < HWf; ++i) d[c * HWf + i] = dpooled[c] / T(HWf);

    for (std::size_t s = kStages; s-- > 0;) {
      d = reduction_backward(reductions_[s], ws.reductions[s], d, G, ws);
      for (std::size_t b = blocks_[s].size(); b-- > 0;) d = block_backward(blocks_[s][b], ws.blocks[s][b], d, G, ws);
    }
    relu_mask(ws.stem_out, d.data());
    const std::size_t C = cfg_.input_channels, S = cfg_.input_size, HW = S * S;
    std::vector<T> dinput(C * HW, T(0));
    conv_backward(stem_, params_, G, ws.stem, d.data(), dinput.data(), ws.scratch);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < HW; ++i) dinput[c * HW + i] /= input_std_[c];
    return dinput;
  }

  template <class U>
  Network<U> cast() const {
    Network<U> out(cfg_);
    for (std::size_t i = 0; i < params_.size(); ++i)
      for (std::size_t k = 0; k < params_[i].size(); ++k) out.params()[i].data[k] = U(params_[i].data[k]);
    std::vector<U> m(input_mean_.begin(), input_mean_.end()), s(input_std_.begin(), input_std_.end());
    out.set_standardization(m, s);
    return out;
  }

  // Building blocks exposed for unit tests.
  void block_forward(const InceptionResNetBlock& B, const std::vector<T>& x, std::size_t h, std::size_t w,
                     BlockCache<T>& c) const {
    if (x.size() != B.channels * h * w) throw ShapeMismatch("Inception-ResNet block input has wrong channel count");
    c.h = h;
    c.w = w;
    auto conv_relu = [&](const Conv2D& L, const T* in, std::vector<T>& out, ConvCache<T>& cache) {
      conv_forward(L, params_, in, h, w, out, cache);
      relu_inplace(out);
    };
    conv_relu(B.b1, x.data(), c.a1, c.c1);
    conv_relu(B.b2a, x.data(), c.a2a, c.c2a);
    conv_relu(B.b2b, c.a2a.data(), c.a2b, c.c2b);
    conv_relu(B.b3a, x.data(), c.a3a, c.c3a);
    conv_relu(B.b3b, c.a3a.data(), c.a3b, c.c3b);
    conv_relu(B.b3c, c.a3b.data(), c.a3c, c.c3c);
    c.cat.clear();
    c.cat.insert(c.cat.end(), c.a1.begin(), c.a1.end());
    c.cat.insert(c.cat.end(), c.a2b.begin(), c.a2b.end());
    c.cat.insert(c.cat.end(), c.a3c.begin(), c.a3c.end());
    conv_forward(B.proj, params_, c.cat.data(), h, w, c.proj, c.cp);
    c.out.resize(x.size());
    const T scale = T(B.scale);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const T v = x[i] + scale * c.proj[i];
      c.out[i] = v > T(0) ? v : T(0);
    }
  }

  std::vector<T> block_backward(const InceptionResNetBlock& B, BlockCache<T>& c, std::vector<T> dout, Params<T>& G,
                                Workspace<T>& ws) const {
    const std::size_t F = B.filters, HW = c.h * c.w;
    relu_mask(c.out, dout.data());
    std::vector<T> dx = dout;
    for (auto& v : dout) v *= T(B.scale);
    std::vector<T> dcat(3 * F * HW, T(0));
    conv_backward(B.proj, params_, G, c.cp, dout.data(), dcat.data(), ws.scratch);
    T* d1 = dcat.data();
    T* d2b = d1 + F * HW;
    T* d3c = d2b + F * HW;
    relu_mask(c.a1, d1);
    conv_backward(B.b1, params_, G, c.c1, d1, dx.data(), ws.scratch);

    relu_mask(c.a2b, d2b);
    ws.grad_a.assign(F * HW, T(0));
    conv_backward(B.b2b, params_, G, c.c2b, d2b, ws.grad_a.data(), ws.scratch);
    relu_mask(c.a2a, ws.grad_a.data());
    conv_backward(B.b2a, params_, G, c.c2a, ws.grad_a.data(), dx.data(), ws.scratch);

    relu_mask(c.a3c, d3c);
    ws.grad_b.assign(F * HW, T(0));
    conv_backward(B.b3c, params_, G, c.c3c, d3c, ws.grad_b.data(), ws.scratch);
    relu_mask(c.a3b, ws.grad_b.data());
    ws.grad_c.assign(F * HW, T(0));
    conv_backward(B.b3b, params_, G, c.c3b, ws.grad_b.data(), ws.grad_c.data(), ws.scratch);
    relu_mask(c.a3a, ws.grad_c.data());
    conv_backward(B.b3a, params_, G, c.c3a, ws.grad_c.data(), dx.data(), ws.scratch);
    return dx;
  }

  void reduction_forward(const ReductionBlock& R, const std::vector<T>& x, std::size_t h, std::size_t w,
                         ReductionCache<T>& c) const {
    if (x.size() != R.in_c * h * w) throw ShapeMismatch("reduction block input has wrong channel count");
    if (h == 0 || w == 0) throw ShapeMismatch("reduction block needs a non-empty input");
    c.h = h;
    c.w = w;
    conv_forward(R.conv, params_, x.data(), h, w, c.conv_out, c.conv);
    relu_inplace(c.conv_out);
    maxpool_forward(x.data(), R.in_c, h, w, c.pool_out, c.argmax, c.pool);
    c.out = c.conv_out;
    c.out.insert(c.out.end(), c.pool_out.begin(), c.pool_out.end());
  }

  std::vector<T> reduction_backward(const ReductionBlock& R, ReductionCache<T>& c, std::vector<T> dout, Params<T>& G,
                                    Workspace<T>& ws) const {
    std::vector<T> dx(R.in_c * c.h * c.w, T(0));
    const std::size_t conv_size = c.conv_out.size();
    relu_mask(c.conv_out, dout.data());
    conv_backward(R.conv, params_, G, c.conv, dout.data(), dx.data(), ws.scratch);
    for (std::size_t i = 0; i < c.argmax.size(); ++i) dx[c.argmax[i]] += dout[conv_size + i];
    return dx;
  }

 private:
  std::size_t add_tensor(const std::string& name, std::vector<std::size_t> dims, std::size_t fan_in = 0) {
    params_.emplace_back(std::move(dims));
    names_.push_back(name);
    fan_in_.push_back(fan_in);
    return params_.size() - 1;
  }

  Conv2D add_conv(const std::string& name, std::size_t in_c, std::size_t out_c, std::size_t k, std::size_t stride) {
    Conv2D L;
    L.in_c = in_c;
    L.out_c = out_c;
    L.k = k;
    L.stride = stride;
    L.weight = add_tensor(name + ".w", {out_c, in_c, k, k}, in_c * k * k);
    L.bias = add_tensor(name + ".b", {out_c});
    return L;
  }

  NetworkConfig cfg_;
  Params<T> params_;
  std::vector<std::string> names_;
  std::vector<std::size_t> fan_in_;
  Conv2D stem_;
  std::vector<std::vector<InceptionResNetBlock>> blocks_;
  std::vector<ReductionBlock> reductions_;
  std::size_t final_channels_ = 0;
  std::size_t dense_w_ = 0, dense_b_ = 0;
  std::vector<T> input_mean_, input_std_;
};

/// Loss value plus dL/dpred; `count` is the number of present entries.
template <class T>
struct LossResult {
  double loss = 0.0;
  std::vector<T> grad;
  std::size_t count = 0;
  bool all_masked = false;
};

inline constexpr double kBceClamp = 1e-7;

/// Mean binary cross-entropy over entries with mask != 0. Predictions are
/// clamped to [1e-7, 1 - 1e-7]; the gradient is zero where clamping is active.
template <class T>
LossResult<T> masked_bce_loss(const std::vector<T>& pred, const std::vector<T>& labels,
                              const std::vector<unsigned char>& mask) {
  if (pred.size() != labels.size() || pred.size() != mask.size()) throw ShapeMismatch("loss inputs differ in length");
  LossResult<T> r;
  r.grad.assign(pred.size(), T(0));
  for (auto m : mask) r.count += m ? 1 : 0;
  if (r.count == 0) {
    r.all_masked = true;
    return r;
  }
  const double n = double(r.count);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    const double p = double(pred[i]), y = double(labels[i]);
    const double pc = std::clamp(p, kBceClamp, 1.0 - kBceClamp);
    r.loss -= (y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc)) / n;
    if (p > kBceClamp && p < 1.0 - kBceClamp) r.grad[i] = T((-y / pc + (1.0 - y) / (1.0 - pc)) / n);
  }
  return r;
}

/// Mean squared error over entries with mask != 0 (all entries when mask is empty).
template <class T>
LossResult<T> mse_loss(const std::vector<T>& pred, const std::vector<T>& labels,
                       const std::vector<unsigned char>& mask = {}) {
  if (pred.size() != labels.size() || (!mask.empty() && mask.size() != pred.size()))
    throw ShapeMismatch("loss inputs differ in length");
  LossResult<T> r;
  r.grad.assign(pred.size(), T(0));
  for (std::size_t i = 0; i < pred.size(); ++i) r.count += (mask.empty() || mask[i]) ? 1 : 0;
  if (r.count == 0) {
    r.all_masked = true;
    return r;
  }
  const double n = double(r.count);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    const double e = double(pred[i]) - double(labels[i]);
    r.loss += e * e / n;
    r.grad[i] = T(2.0 * e / n);
  }
  return r;
}

/// RMSprop with epsilon added outside the square root:
/// cache = rho * cache + (1 - rho) * g^2;  p -= lr * g / (sqrt(cache) + eps).
template <class T>
class RmsProp {
 public:
  explicit RmsProp(double lr = 1e-3, double rho = 0.9, double eps = 1e-8) : lr_(lr), rho_(rho), eps_(eps) {}

  void step(Params<T>& params, const Params<T>& grads) {
    if (cache_.empty()) {
      for (const auto& p : params) cache_.emplace_back(p.size(), T(0));
    }
    if (cache_.size() != params.size() || grads.size() != params.size())
      throw ShapeMismatch("optimizer state does not match parameters");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (grads[i].size() != params[i].size() || cache_[i].size() != params[i].size())
        throw ShapeMismatch("gradient shape does not match parameter");
      auto& p = params[i].data;
      const auto& g = grads[i].data;
      auto& c = cache_[i];
      for (std::size_t k = 0; k < p.size(); ++k) {
        c[k] = T(rho_) * c[k] + T(1.0 - rho_) * g[k] * g[k];
        p[k] -= T(lr_) * g[k] / (std::sqrt(c[k]) + T(eps_));
      }
    }
  }

  const std::vector<std::vector<T>>& cache() const { return cache_; }

 private:
  double lr_, rho_, eps_;
  std::vector<std::vector<T>> cache_;
};

}  // namespace chemimg::nn
