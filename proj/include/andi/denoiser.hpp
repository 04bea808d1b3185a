#pragma once

// Timestep-conditioned convolutional encoder-decoder eps_theta(x_t, t) with a
// hand-written backward pass. Templated on the scalar type so the same code
// runs in f32 for training and in f64 for gradient checks.
//
// Per resolution level l (width base_width * 2^l) the encoder applies a block
// and 2x2 mean pooling; a middle block runs at the coarsest level; the decoder
// upsamples (nearest), concatenates the matching encoder output and applies a
// block. A block is
//
//   a = silu(conv3x3_a(x) + bias_a + P t_emb)
//   b = silu(gain * conv3x3_b(a) + bias)
//
// followed at the end by a 3x3 output convolution back to C channels. All
// convolutions use zero padding and stride 1.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "andi/error.hpp"
#include "andi/grid.hpp"
#include "andi/random.hpp"

namespace andi {

struct DenoiserConfig {
  int in_channels = 2;
  int base_width = 16;
  int depth = 2;
  int time_embed_dim = 32;

  void validate() const {
    detail::require(in_channels >= 1, "denoiser in_channels must be >= 1");
    detail::require(base_width >= 1, "denoiser base_width must be >= 1");
    detail::require(depth >= 1, "denoiser depth must be >= 1");
    detail::require(time_embed_dim >= 2 && time_embed_dim % 2 == 0, "time_embed_dim must be even and >= 2");
  }
  int width_at(int level) const { return base_width << level; }
  bool operator==(const DenoiserConfig&) const = default;
};

struct ParamEntry {
  std::string name;
  std::size_t offset = 0;
  std::vector<int> shape;
  std::size_t size = 0;
};

// Named index over the flat parameter vector. Entries are contiguous and in
// declaration order.
struct ParamLayout {
  std::vector<ParamEntry> entries;
  std::size_t total = 0;

  void add(std::string name, std::vector<int> shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    entries.push_back({std::move(name), total, std::move(shape), n});
    total += n;
  }
  const ParamEntry& find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return e;
    throw InvalidArgument("unknown parameter tensor '" + name + "'");
  }
};

namespace detail {

struct BlockShape {
  std::string name;
  int in = 0;
  int out = 0;
};

inline std::vector<BlockShape> block_shapes(const DenoiserConfig& cfg) {
  std::vector<BlockShape> blocks;
  for (int l = 0; l < cfg.depth; ++l)
    blocks.push_back({"enc" + std::to_string(l), l == 0 ? cfg.in_channels : cfg.width_at(l - 1), cfg.width_at(l)});
  const int deepest = cfg.width_at(cfg.depth - 1);
  blocks.push_back({"mid", deepest, deepest});
  for (int l = cfg.depth - 1; l >= 0; --l) {
    const int below = l == cfg.depth - 1 ? deepest : cfg.width_at(l + 1);
    blocks.push_back({"dec" + std::to_string(l), below + cfg.width_at(l), cfg.width_at(l)});
  }
  return blocks;
}

}  // namespace detail

inline ParamLayout build_layout(const DenoiserConfig& cfg) {
  cfg.validate();
  ParamLayout layout;
  for (const auto& b : detail::block_shapes(cfg)) {
    layout.add(b.name + ".conv_a.weight", {b.out, b.in, 3, 3});
    layout.add(b.name + ".conv_a.bias", {b.out});
    layout.add(b.name + ".time_proj.weight", {b.out, cfg.time_embed_dim});
    layout.add(b.name + ".conv_b.weight", {b.out, b.out, 3, 3});
    layout.add(b.name + ".gain", {b.out});
    layout.add(b.name + ".bias", {b.out});
  }
  layout.add("out.weight", {cfg.in_channels, cfg.base_width, 3, 3});
  layout.add("out.bias", {cfg.in_channels});
  return layout;
}

template <typename Real>
struct BasicDenoiserParams {
  DenoiserConfig config;
  ParamLayout layout;
  std::vector<Real> values;

  std::size_t param_count() const { return values.size(); }
  Real* tensor(const std::string& name) { return values.data() + layout.find(name).offset; }
  const Real* tensor(const std::string& name) const { return values.data() + layout.find(name).offset; }
};

using DenoiserParams = BasicDenoiserParams<float>;

// Fan-in scaled uniform weights, zero biases, unit gains. The output
// convolution starts at zero so a fresh model predicts eps = 0.
template <typename Real = float>
BasicDenoiserParams<Real> init_params(const DenoiserConfig& cfg, std::uint64_t seed) {
  BasicDenoiserParams<Real> p{cfg, build_layout(cfg), {}};
  p.values.assign(p.layout.total, Real(0));
  Rng rng(stream_key(seed, {0x1a17}));
  for (const auto& e : p.layout.entries) {
    Real* w = p.values.data() + e.offset;
    const bool is_out = e.name.rfind("out.", 0) == 0;
    if (e.name.ends_with(".gain")) {
      std::fill(w, w + e.size, Real(1));
    } else if (!is_out && e.shape.size() > 1) {
      const std::size_t fan_in = e.size / static_cast<std::size_t>(e.shape[0]);
      const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
      for (std::size_t i = 0; i < e.size; ++i) w[i] = static_cast<Real>(rng.uniform(-bound, bound));
    }
  }
  return p;
}

template <typename To, typename From>
BasicDenoiserParams<To> cast_params(const BasicDenoiserParams<From>& p) {
  return {p.config, p.layout, std::vector<To>(p.values.begin(), p.values.end())};
}

// Sinusoidal embedding: sin(t f_k) for the first half, cos(t f_k) for the
// second, with f_k = 10000^(-k / half).
template <typename Real = float>
std::vector<Real> timestep_embedding(int t, int dim) {
  detail::require(dim >= 2 && dim % 2 == 0, "embedding dimension must be even");
  const int half = dim / 2;
  std::vector<Real> e(dim);
  for (int k = 0; k < half; ++k) {
    const double f = std::exp(-std::log(10000.0) * static_cast<double>(k) / half);
    e[k] = static_cast<Real>(std::sin(t * f));
    e[half + k] = static_cast<Real>(std::cos(t * f));
  }
  return e;
}

namespace nn {

// Channel-planar activation (C, H, W).
template <typename Real>
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<Real, Eigen::aligned_allocator<Real>> v;

  Tensor() = default;
  Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, Real(0)) {}
  int plane() const { return h * w; }
  Real* channel(int k) { return v.data() + static_cast<std::size_t>(k) * plane(); }
  const Real* channel(int k) const { return v.data() + static_cast<std::size_t>(k) * plane(); }
};

// Convolutions run over bands of image rows so the unfolded patch matrix of
// one band stays cache resident.
inline int band_rows(int width) { return std::max(1, 512 / std::max(1, width)); }

// Unfolds rows [y0, y1) of `in`: rows of `col` are (ci, ky, kx), columns are
// (y - y0, x).
template <typename Real>
void im2col_band(const Tensor<Real>& in, int y0, int y1, std::vector<Real>& col) {
  const int H = in.h, W = in.w, n = (y1 - y0) * W;
  col.resize(static_cast<std::size_t>(in.c) * 9 * n);
  for (int ci = 0; ci < in.c; ++ci) {
    const Real* src = in.channel(ci);
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        Real* dst = col.data() + (static_cast<std::size_t>(ci) * 9 + ky * 3 + kx) * n;
        const int dy = ky - 1, dx = kx - 1;
        const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
        for (int y = y0; y < y1; ++y) {
          Real* drow = dst + static_cast<std::size_t>(y - y0) * W;
          const int sy = y + dy;
          if (sy < 0 || sy >= H) {
            std::fill(drow, drow + W, Real(0));
            continue;
          }
          const Real* srow = src + static_cast<std::size_t>(sy) * W + dx;
          if (x0 > 0) drow[0] = Real(0);
          if (x1 < W) drow[W - 1] = Real(0);
          std::copy(srow + x0, srow + x1, drow + x0);
        }
      }
  }
}

template <typename Real>
void col2im_band_add(const std::vector<Real>& col, int y0, int y1, Tensor<Real>& in_grad) {
  const int H = in_grad.h, W = in_grad.w, n = (y1 - y0) * W;
  for (int ci = 0; ci < in_grad.c; ++ci) {
    Real* dst = in_grad.channel(ci);
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const Real* src = col.data() + (static_cast<std::size_t>(ci) * 9 + ky * 3 + kx) * n;
        const int dy = ky - 1, dx = kx - 1;
        const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
        for (int y = y0; y < y1; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= H) continue;
          Real* drow = dst + static_cast<std::size_t>(sy) * W + dx;
          const Real* srow = src + static_cast<std::size_t>(y - y0) * W;
          for (int x = x0; x < x1; ++x) drow[x] += srow[x];
        }
      }
  }
}

template <typename Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MapMat = Eigen::Map<RowMat<Real>, 0, Eigen::OuterStride<>>;
template <typename Real>
using ConstMapMat = Eigen::Map<const RowMat<Real>, 0, Eigen::OuterStride<>>;

template <typename Real>
Tensor<Real> conv3x3(const Tensor<Real>& in, const Real* weight, const Real* bias, int out_ch, std::vector<Real>& col) {
  Tensor<Real> out(out_ch, in.h, in.w);
  const int K = in.c * 9, N = in.plane(), band = band_rows(in.w);
  ConstMapMat<Real> Wm(weight, out_ch, K, Eigen::OuterStride<>(K));
  for (int y0 = 0; y0 < in.h; y0 += band) {
    const int y1 = std::min(in.h, y0 + band), n = (y1 - y0) * in.w;
    im2col_band(in, y0, y1, col);
    ConstMapMat<Real> Cm(col.data(), K, n, Eigen::OuterStride<>(n));
    MapMat<Real> Om(out.v.data() + static_cast<std::size_t>(y0) * in.w, out_ch, n, Eigen::OuterStride<>(N));
    Om.noalias() = Wm * Cm;
  }
  if (bias)
    for (int o = 0; o < out_ch; ++o) {
      Real* ch = out.channel(o);
      for (int i = 0; i < N; ++i) ch[i] += bias[o];
    }
  return out;
}

// Accumulates weight/bias gradients and returns the input gradient.
template <typename Real>
Tensor<Real> conv3x3_backward(const Tensor<Real>& in, const Real* weight, const Tensor<Real>& grad_out, Real* grad_weight,
                              Real* grad_bias, std::vector<Real>& col, bool need_input_grad = true) {
  const int K = in.c * 9, N = in.plane(), O = grad_out.c, band = band_rows(in.w);
  ConstMapMat<Real> Wm(weight, O, K, Eigen::OuterStride<>(K));
  MapMat<Real> dW(grad_weight, O, K, Eigen::OuterStride<>(K));
  Tensor<Real> grad_in(in.c, in.h, in.w);
  std::vector<Real> dcol;
  for (int y0 = 0; y0 < in.h; y0 += band) {
    const int y1 = std::min(in.h, y0 + band), n = (y1 - y0) * in.w;
    im2col_band(in, y0, y1, col);
    ConstMapMat<Real> Cm(col.data(), K, n, Eigen::OuterStride<>(n));
    ConstMapMat<Real> Gm(grad_out.v.data() + static_cast<std::size_t>(y0) * in.w, O, n, Eigen::OuterStride<>(N));
    dW.noalias() += Gm * Cm.transpose();
    if (need_input_grad) {
      dcol.resize(col.size());
      MapMat<Real> dC(dcol.data(), K, n, Eigen::OuterStride<>(n));
      dC.noalias() = Wm.transpose() * Gm;
      col2im_band_add(dcol, y0, y1, grad_in);
    }
  }
  if (grad_bias)
    for (int o = 0; o < O; ++o) {
      const Real* g = grad_out.channel(o);
      Real acc = 0;
      for (int i = 0; i < N; ++i) acc += g[i];
      grad_bias[o] += acc;
    }
  return grad_in;
}

template <typename Real>
using ArrayMap = Eigen::Map<Eigen::Array<Real, Eigen::Dynamic, 1>>;
template <typename Real>
using ConstArrayMap = Eigen::Map<const Eigen::Array<Real, Eigen::Dynamic, 1>>;

// Returns silu(pre) and stores sigmoid(pre) for the backward pass.
template <typename Real>
Tensor<Real> silu(const Tensor<Real>& pre, Tensor<Real>& sig) {
  const auto n = static_cast<Eigen::Index>(pre.v.size());
  sig = Tensor<Real>(pre.c, pre.h, pre.w);
  Tensor<Real> y(pre.c, pre.h, pre.w);
  ConstArrayMap<Real> x(pre.v.data(), n);
  ArrayMap<Real> s(sig.v.data(), n);
  s = Real(1) / (Real(1) + (-x).exp());
  ArrayMap<Real>(y.v.data(), n) = x * s;
  return y;
}

// grad *= d silu / d pre = s (1 + pre (1 - s)).
template <typename Real>
void silu_backward_inplace(const Tensor<Real>& pre, const Tensor<Real>& sig, Tensor<Real>& grad) {
  const auto n = static_cast<Eigen::Index>(grad.v.size());
  ConstArrayMap<Real> x(pre.v.data(), n), s(sig.v.data(), n);
  ArrayMap<Real>(grad.v.data(), n) *= s * (Real(1) + x * (Real(1) - s));
}

template <typename Real>
Tensor<Real> avg_pool2(const Tensor<Real>& x) {
  Tensor<Real> y(x.c, x.h / 2, x.w / 2);
  for (int c = 0; c < x.c; ++c) {
    const Real* s = x.channel(c);
    Real* d = y.channel(c);
    for (int i = 0; i < y.h; ++i)
      for (int j = 0; j < y.w; ++j) {
        const Real* r0 = s + static_cast<std::size_t>(2 * i) * x.w + 2 * j;
        const Real* r1 = r0 + x.w;
        d[static_cast<std::size_t>(i) * y.w + j] = (r0[0] + r0[1] + r1[0] + r1[1]) * Real(0.25);
      }
  }
  return y;
}

template <typename Real>
Tensor<Real> avg_pool2_backward(const Tensor<Real>& grad, int h, int w) {
  Tensor<Real> g(grad.c, h, w);
  for (int c = 0; c < grad.c; ++c) {
    const Real* s = grad.channel(c);
    Real* d = g.channel(c);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) d[static_cast<std::size_t>(y) * w + x] = s[static_cast<std::size_t>(y / 2) * grad.w + x / 2] * Real(0.25);
  }
  return g;
}

template <typename Real>
Tensor<Real> upsample2(const Tensor<Real>& x) {
  Tensor<Real> y(x.c, x.h * 2, x.w * 2);
  for (int c = 0; c < x.c; ++c) {
    const Real* s = x.channel(c);
    Real* d = y.channel(c);
    for (int i = 0; i < y.h; ++i)
      for (int j = 0; j < y.w; ++j) d[static_cast<std::size_t>(i) * y.w + j] = s[static_cast<std::size_t>(i / 2) * x.w + j / 2];
  }
  return y;
}

template <typename Real>
Tensor<Real> upsample2_backward(const Tensor<Real>& grad) {
  Tensor<Real> g(grad.c, grad.h / 2, grad.w / 2);
  for (int c = 0; c < grad.c; ++c) {
    const Real* s = grad.channel(c);
    Real* d = g.channel(c);
    for (int i = 0; i < grad.h; ++i)
      for (int j = 0; j < grad.w; ++j) d[static_cast<std::size_t>(i / 2) * g.w + j / 2] += s[static_cast<std::size_t>(i) * grad.w + j];
  }
  return g;
}

template <typename Real>
Tensor<Real> concat(const Tensor<Real>& a, const Tensor<Real>& b) {
  Tensor<Real> y(a.c + b.c, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), y.v.begin());
  std::copy(b.v.begin(), b.v.end(), y.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()));
  return y;
}

template <typename Real>
Tensor<Real> to_planar(const BasicSlice<Real>& s) {
  Tensor<Real> t(s.channels, s.height, s.width);
  for (int h = 0; h < s.height; ++h)
    for (int w = 0; w < s.width; ++w)
      for (int c = 0; c < s.channels; ++c) t.channel(c)[static_cast<std::size_t>(h) * s.width + w] = s.at(h, w, c);
  return t;
}

template <typename Real>
BasicSlice<Real> from_planar(const Tensor<Real>& t) {
  BasicSlice<Real> s(t.h, t.w, t.c);
  for (int h = 0; h < t.h; ++h)
    for (int w = 0; w < t.w; ++w)
      for (int c = 0; c < t.c; ++c) s.at(h, w, c) = t.channel(c)[static_cast<std::size_t>(h) * t.w + w];
  return s;
}

template <typename Real>
struct BlockOffsets {
  std::size_t conv_a_w, conv_a_b, time_w, conv_b_w, gain, bias;
  int in, out;
};

template <typename Real>
struct BlockTrace {
  Tensor<Real> input, a_pre, a_sig, a, b_lin, b_pre, b_sig;
};

}  // namespace nn

// Forward pass that keeps the activations needed by `backward`.
template <typename Real>
class DenoiserTrace {
 public:
  DenoiserTrace(const BasicDenoiserParams<Real>& params, const BasicSlice<Real>& xt, int t) : params_(params) {
    const auto& cfg = params.config;
    const int factor = 1 << cfg.depth;
    if (xt.channels != cfg.in_channels)
      throw InvalidArgument("denoiser: input has " + std::to_string(xt.channels) + " channels, model expects " +
                            std::to_string(cfg.in_channels));
    if (xt.height % factor != 0 || xt.width % factor != 0)
      throw InvalidArgument("denoiser: spatial dims must be divisible by " + std::to_string(factor));
    detail::require(t >= 1, "denoiser: timestep must be >= 1");
    detail::require(params.values.size() == params.layout.total, "denoiser: parameter vector does not match layout");

    for (const auto& b : detail::block_shapes(cfg)) {
      const auto& L = params.layout;
      blocks_.push_back({L.find(b.name + ".conv_a.weight").offset, L.find(b.name + ".conv_a.bias").offset,
                         L.find(b.name + ".time_proj.weight").offset, L.find(b.name + ".conv_b.weight").offset,
                         L.find(b.name + ".gain").offset, L.find(b.name + ".bias").offset, b.in, b.out});
    }
    out_w_ = params.layout.find("out.weight").offset;
    out_b_ = params.layout.find("out.bias").offset;
    emb_ = timestep_embedding<Real>(t, cfg.time_embed_dim);
    traces_.resize(blocks_.size());

    const int depth = cfg.depth;
    nn::Tensor<Real> h = nn::to_planar(xt);
    skips_.resize(depth);
    std::size_t bi = 0;
    for (int l = 0; l < depth; ++l) {
      h = block_forward(bi++, std::move(h));
      skips_[l] = h;
      h = nn::avg_pool2(h);
    }
    h = block_forward(bi++, std::move(h));
    for (int l = depth - 1; l >= 0; --l) {
      h = nn::concat(nn::upsample2(h), skips_[l]);
      h = block_forward(bi++, std::move(h));
    }
    final_in_ = std::move(h);
    const Real* P = params_.values.data();
    output_ = nn::from_planar(nn::conv3x3(final_in_, P + out_w_, P + out_b_, cfg.in_channels, col_));
  }

  const BasicSlice<Real>& output() const { return output_; }

  // Adds d<grad_out, output>/d theta into `grad` (same layout as params).
  void backward(const BasicSlice<Real>& grad_out, std::vector<Real>& grad) {
    if (!grad_out.same_shape(output_)) throw InvalidArgument("denoiser backward: grad_out shape mismatch");
    detail::require(grad.size() == params_.values.size(), "denoiser backward: gradient vector size mismatch");
    const auto& cfg = params_.config;
    const Real* P = params_.values.data();
    Real* G = grad.data();
    grad_ptr_ = G;
    nn::Tensor<Real> g = nn::conv3x3_backward(final_in_, P + out_w_, nn::to_planar(grad_out), G + out_w_, G + out_b_, col_);
    std::size_t bi = blocks_.size();
    std::vector<nn::Tensor<Real>> skip_grads(cfg.depth);
    for (int l = 0; l < cfg.depth; ++l) {
      g = block_backward(--bi, std::move(g));
      const int up_c = g.c - skips_[l].c;
      nn::Tensor<Real> g_up(up_c, g.h, g.w), g_skip(skips_[l].c, g.h, g.w);
      std::copy(g.v.begin(), g.v.begin() + static_cast<std::ptrdiff_t>(g_up.v.size()), g_up.v.begin());
      std::copy(g.v.begin() + static_cast<std::ptrdiff_t>(g_up.v.size()), g.v.end(), g_skip.v.begin());
      skip_grads[l] = std::move(g_skip);
      g = nn::upsample2_backward(g_up);
    }
    g = block_backward(--bi, std::move(g));
    for (int l = cfg.depth - 1; l >= 0; --l) {
      g = nn::avg_pool2_backward(g, skips_[l].h, skips_[l].w);
      for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] += skip_grads[l].v[i];
      g = block_backward(--bi, std::move(g), l > 0);
    }
  }

 private:
  nn::Tensor<Real> block_forward(std::size_t bi, nn::Tensor<Real> x) {
    const auto& b = blocks_[bi];
    auto& tr = traces_[bi];
    const Real* P = params_.values.data();
    const int E = params_.config.time_embed_dim;
    tr.input = std::move(x);
    tr.a_pre = nn::conv3x3(tr.input, P + b.conv_a_w, P + b.conv_a_b, b.out, col_);
    for (int o = 0; o < b.out; ++o) {
      Real proj = 0;
      const Real* row = P + b.time_w + static_cast<std::size_t>(o) * E;
      for (int e = 0; e < E; ++e) proj += row[e] * emb_[e];
      Real* ch = tr.a_pre.channel(o);
      for (int i = 0; i < tr.a_pre.plane(); ++i) ch[i] += proj;
    }
    tr.a = nn::silu(tr.a_pre, tr.a_sig);
    tr.b_lin = nn::conv3x3<Real>(tr.a, P + b.conv_b_w, nullptr, b.out, col_);
    tr.b_pre = tr.b_lin;
    for (int o = 0; o < b.out; ++o) {
      const Real gain = P[b.gain + o], bias = P[b.bias + o];
      Real* ch = tr.b_pre.channel(o);
      for (int i = 0; i < tr.b_pre.plane(); ++i) ch[i] = gain * ch[i] + bias;
    }
    return nn::silu(tr.b_pre, tr.b_sig);
  }

  nn::Tensor<Real> block_backward(std::size_t bi, nn::Tensor<Real> g, bool need_input_grad = true) {
    const auto& b = blocks_[bi];
    auto& tr = traces_[bi];
    const Real* P = params_.values.data();
    Real* G = grad_ptr_;
    const int E = params_.config.time_embed_dim;
    const int plane = g.plane();

    nn::silu_backward_inplace(tr.b_pre, tr.b_sig, g);
    for (int o = 0; o < b.out; ++o) {
      const Real* gc = g.channel(o);
      const Real* lin = tr.b_lin.channel(o);
      Real dg = 0, db = 0;
      for (int i = 0; i < plane; ++i) {
        dg += gc[i] * lin[i];
        db += gc[i];
      }
      G[b.gain + o] += dg;
      G[b.bias + o] += db;
      const Real gain = P[b.gain + o];
      Real* gm = g.channel(o);
      for (int i = 0; i < plane; ++i) gm[i] *= gain;
    }
    nn::Tensor<Real> ga = nn::conv3x3_backward<Real>(tr.a, P + b.conv_b_w, g, G + b.conv_b_w, nullptr, col_);
    nn::silu_backward_inplace(tr.a_pre, tr.a_sig, ga);
    for (int o = 0; o < b.out; ++o) {
      const Real* gc = ga.channel(o);
      Real s = 0;
      for (int i = 0; i < plane; ++i) s += gc[i];
      Real* row = G + b.time_w + static_cast<std::size_t>(o) * E;
      for (int e = 0; e < E; ++e) row[e] += s * emb_[e];
    }
    return nn::conv3x3_backward<Real>(tr.input, P + b.conv_a_w, ga, G + b.conv_a_w, G + b.conv_a_b, col_, need_input_grad);
  }

  const BasicDenoiserParams<Real>& params_;
  std::vector<nn::BlockOffsets<Real>> blocks_;
  std::vector<nn::BlockTrace<Real>> traces_;
  std::vector<nn::Tensor<Real>> skips_;
  std::vector<Real> emb_;
  std::vector<Real> col_;
  nn::Tensor<Real> final_in_;
  std::size_t out_w_ = 0, out_b_ = 0;
  BasicSlice<Real> output_;
  Real* grad_ptr_ = nullptr;
};

template <typename Real>
BasicSlice<Real> forward(const BasicDenoiserParams<Real>& params, const BasicSlice<Real>& xt, int t) {
  return DenoiserTrace<Real>(params, xt, t).output();
}

// Gradient of <grad_out, forward(params, xt, t)> with respect to every parameter.
template <typename Real>
std::vector<Real> backward(const BasicDenoiserParams<Real>& params, const BasicSlice<Real>& xt, int t,
                           const BasicSlice<Real>& grad_out) {
  DenoiserTrace<Real> trace(params, xt, t);
  std::vector<Real> grad(params.values.size(), Real(0));
  trace.backward(grad_out, grad);
  return grad;
}

}  // namespace andi
