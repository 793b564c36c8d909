#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "bytegen/autograd.hpp"
#include "bytegen/corpus.hpp"
#include "bytegen/io.hpp"
#include "bytegen/rng.hpp"
#include "bytegen/tensor.hpp"

namespace bytegen {

// Where residual skips sit relative to the conv layers. PairWithinGroup
// wraps every consecutive pair of convolutions inside a prefix/recursion/
// postfix block; PerLayer wraps each shape-preserving convolution on its
// own. Both drop the skip when shapes change, and the stack's output layer
// (logits, pre-normalization features, discriminator head) is always a
// plain convolution. The placement is isolated here so alternatives stay
// testable.
enum class ResidualPlacement : std::uint8_t { PairWithinGroup = 0, PerLayer = 1 };

struct AtnnfaeConfig {
  int k = 1;             // conv layers per block
  int groups = 4;        // recursion-group count G; feature length = len / 2^G
  int feature_dim = 256;
  int kernel = 3;
  double sigma = 0.1;    // feature-noise std
  double margin = 0.001; // hinge margin m
  int max_len = 1024;
  double lr = 0.001;
  std::uint64_t lr_halve_every = 25000;  // full-scale: 10,000,000
  std::uint64_t steps = 100000;          // per objective; full-scale: 40,000,000
  int steps_per_objective = 10;
  bool adversarial = true;        // false trains the auto-encoder objective only
  bool reuse_nnfae_noise = false; // discriminator loss reuses the last AE (y, eta)
  std::uint64_t seed = 1;
  // Per-layer skips are the default: with pair-within-group placement a
  // k=1 model has no skips at all and the tiny initialization leaves it
  // untrainable in any reasonable step budget.
  ResidualPlacement residual = ResidualPlacement::PerLayer;

  int pad_factor() const { return 1 << groups; }

  void validate() const {
    if (k < 1 || groups < 1 || feature_dim < 1 || kernel < 1 ||
        kernel % 2 == 0)
      throw DataError("invalid architecture configuration");
    if (sigma < 0 || margin < 0 || max_len < 1 || lr <= 0 ||
        steps_per_objective < 1)
      throw DataError("invalid training configuration");
  }
};

struct ConvLayer {
  Parameter w;  // [c_out, c_in, kernel]
  Parameter b;  // [c_out]
};

// One encoder-, decoder-, or discriminator-shaped parameter set: a prefix
// block, a single shared recursion block (applied G times), and a postfix
// block.
struct Stack {
  std::vector<ConvLayer> prefix, group, postfix;

  void collect(std::vector<Parameter*>& out) {
    for (auto* block : {&prefix, &group, &postfix})
      for (auto& layer : *block) {
        out.push_back(&layer.w);
        out.push_back(&layer.b);
      }
  }
};

enum class StackKind { Encoder, Decoder, Discriminator };

namespace detail {

inline Tensor init_conv_weight(int c_out, int c_in, int kernel, Rng& rng) {
  // N(0, sqrt(2/tau) / 1000), tau = output units each input connects to.
  // 1000x below the usual he-init scale; signal propagation relies on the
  // residual skips instead of batch normalization.
  const double tau = static_cast<double>(c_out) * kernel;
  const double std_dev = std::sqrt(2.0 / tau) / 1000.0;
  Tensor w = Tensor::zeros({c_out, c_in, kernel});
  for (double& v : w.values()) v = rng.gaussian() * std_dev;
  return w;
}

inline ConvLayer make_conv(const std::string& name, int c_out, int c_in,
                           int kernel, Rng& rng) {
  return ConvLayer{Parameter(name + ".w", init_conv_weight(c_out, c_in, kernel, rng)),
                   Parameter(name + ".b", Tensor::zeros({c_out}))};
}

}  // namespace detail

// in_dim is the byte one-hot width (256) in production; tests shrink it.
inline Stack make_stack(StackKind kind, const AtnnfaeConfig& cfg, int in_dim,
                        Rng& rng, const std::string& name) {
  const int fd = cfg.feature_dim;
  const int k = cfg.k;
  Stack s;
  auto add = [&](std::vector<ConvLayer>& block, const char* bname, int i,
                 int c_out, int c_in) {
    block.push_back(detail::make_conv(
        name + "." + bname + "." + std::to_string(i), c_out, c_in,
        cfg.kernel, rng));
  };
  switch (kind) {
    case StackKind::Encoder:
    case StackKind::Discriminator:
      for (int i = 0; i < k; ++i)
        add(s.prefix, "prefix", i, fd, i == 0 ? in_dim : fd);
      for (int i = 0; i < k; ++i) add(s.group, "group", i, fd, fd);
      for (int i = 0; i < k; ++i) add(s.postfix, "postfix", i, fd, fd);
      break;
    case StackKind::Decoder:
      for (int i = 0; i < k; ++i) add(s.prefix, "prefix", i, fd, fd);
      // first group layer doubles channels, the pixel shuffle turns that
      // into doubled length
      add(s.group, "group", 0, 2 * fd, fd);
      for (int i = 1; i < k; ++i) add(s.group, "group", i, fd, fd);
      for (int i = 0; i + 1 < k; ++i) add(s.postfix, "postfix", i, fd, fd);
      add(s.postfix, "postfix", k - 1, in_dim, fd);
      break;
  }
  return s;
}

// Tape-bound view of a stack: node ids for every layer. Real training binds
// through tape.param (gradients flow into the parameters); gradient checks
// bind through tape.input.
struct BoundConv {
  Tape::Id w, b;
};
struct BoundStack {
  std::vector<BoundConv> prefix, group, postfix;
};

inline BoundStack bind_params(Tape& tape, Stack& s) {
  BoundStack out;
  auto bind = [&](std::vector<ConvLayer>& block, std::vector<BoundConv>& dst) {
    for (auto& layer : block)
      dst.push_back({tape.param(layer.w), tape.param(layer.b)});
  };
  bind(s.prefix, out.prefix);
  bind(s.group, out.group);
  bind(s.postfix, out.postfix);
  return out;
}

inline BoundStack bind_constants(Tape& tape, const Stack& s) {
  BoundStack out;
  auto bind = [&](const std::vector<ConvLayer>& block,
                  std::vector<BoundConv>& dst) {
    for (const auto& layer : block)
      dst.push_back({tape.constant(layer.w.value), tape.constant(layer.b.value)});
  };
  bind(s.prefix, out.prefix);
  bind(s.group, out.group);
  bind(s.postfix, out.postfix);
  return out;
}

namespace detail {

inline int node_channels(const Tape& t, Tape::Id x) {
  return t.value(x).channels();
}

// Applies one block of convolutions with the configured residual/ReLU
// pattern. final_linear marks a block whose last layer is the stack output:
// that layer is applied as a plain convolution (no skip, no ReLU).
inline Tape::Id apply_block(Tape& t, Tape::Id x,
                            std::span<const BoundConv> layers,
                            bool final_linear, ResidualPlacement rp) {
  const std::size_t n = layers.size();
  const std::size_t body = final_linear ? n - 1 : n;
  if (rp == ResidualPlacement::PerLayer) {
    for (std::size_t i = 0; i < body; ++i) {
      Tape::Id c = t.conv1d_same(x, layers[i].w, layers[i].b);
      x = node_channels(t, x) == node_channels(t, c) ? t.relu(t.add(x, c))
                                                     : t.relu(c);
    }
  } else {
    std::size_t i = 0;
    while (i + 1 < body) {  // consecutive pairs, skip when shapes allow
      Tape::Id h = t.relu(t.conv1d_same(x, layers[i].w, layers[i].b));
      Tape::Id c = t.conv1d_same(h, layers[i + 1].w, layers[i + 1].b);
      x = node_channels(t, x) == node_channels(t, c) ? t.relu(t.add(x, c))
                                                     : t.relu(c);
      i += 2;
    }
    if (i < body)  // odd trailing layer
      x = t.relu(t.conv1d_same(x, layers[i].w, layers[i].b));
  }
  if (final_linear)
    x = t.conv1d_same(x, layers[n - 1].w, layers[n - 1].b);
  return x;
}

}  // namespace detail

// prefix -> G x (recursion block + pool) -> postfix -> per-column L2
// normalization. Input length must be a multiple of 2^G.
inline Tape::Id encoder_forward(Tape& t, const BoundStack& s, Tape::Id x,
                                int groups, ResidualPlacement rp) {
  x = detail::apply_block(t, x, s.prefix, false, rp);
  for (int g = 0; g < groups; ++g) {
    x = detail::apply_block(t, x, s.group, false, rp);
    x = t.maxpool2(x);
  }
  x = detail::apply_block(t, x, s.postfix, true, rp);
  return t.l2_normalize_cols(x);
}

// normalize -> prefix -> G x (expanding block) -> postfix; the output is
// unnormalized byte log-probabilities of length 2^G * t. The expanding
// block's first layer doubles the channels and the pixel shuffle folds them
// into doubled length.
inline Tape::Id decoder_forward(Tape& t, const BoundStack& s, Tape::Id feature,
                                int groups, ResidualPlacement rp) {
  Tape::Id x = t.l2_normalize_cols(feature);
  x = detail::apply_block(t, x, s.prefix, false, rp);
  for (int g = 0; g < groups; ++g) {
    Tape::Id c = t.conv1d_same(x, s.group[0].w, s.group[0].b);
    x = t.relu(t.subpixel2(c));
    x = detail::apply_block(
        t, x, std::span<const BoundConv>(s.group).subspan(1), false, rp);
  }
  return detail::apply_block(t, x, s.postfix, true, rp);
}

// Encoder-shaped, no normalization layer; the scalar is the mean over all
// output values. Consumes raw logits.
inline Tape::Id discriminator_forward(Tape& t, const BoundStack& s,
                                      Tape::Id logits, int groups,
                                      ResidualPlacement rp) {
  Tape::Id x = detail::apply_block(t, logits, s.prefix, false, rp);
  for (int g = 0; g < groups; ++g) {
    x = detail::apply_block(t, x, s.group, false, rp);
    x = t.maxpool2(x);
  }
  x = detail::apply_block(t, x, s.postfix, true, rp);
  return t.mean_all(x);
}

// --- byte <-> tensor plumbing ---------------------------------------------

// One-hot byte columns over the padded span. The terminal 0x00 is encoded
// at position s when it fits; padding positions beyond it stay all-zero so
// they are distinguishable from the terminator.
inline Tensor one_hot(const PaddedSample& p, int in_dim = 256) {
  const int len = static_cast<int>(p.bytes.size());
  Tensor t = Tensor::zeros({in_dim, len});
  for (std::size_t i = 0; i < p.original_len; ++i) t.at(p.bytes[i], static_cast<int>(i)) = 1.0;
  if (p.original_len < p.bytes.size())
    t.at(0, static_cast<int>(p.original_len)) = 1.0;
  return t;
}

// Target equals the input encoding; the mask covers the s bytes plus the
// terminator when present and zeroes the padding.
inline std::vector<double> supervision_mask(const PaddedSample& p) {
  std::vector<double> mask(p.bytes.size(), 0.0);
  const std::size_t events =
      p.original_len + (p.original_len < p.bytes.size() ? 1 : 0);
  for (std::size_t i = 0; i < events; ++i) mask[i] = 1.0;
  return mask;
}

// Per-column argmax with ties broken toward the smaller byte value.
inline std::vector<std::uint8_t> argmax_bytes(const Tensor& logits) {
  std::vector<std::uint8_t> out(logits.length());
  for (int l = 0; l < logits.length(); ++l) {
    int best = 0;
    double best_v = logits.at(0, l);
    for (int c = 1; c < logits.channels(); ++c)
      if (logits.at(c, l) > best_v) {
        best_v = logits.at(c, l);
        best = c;
      }
    out[l] = static_cast<std::uint8_t>(best);
  }
  return out;
}

inline ByteSample truncate_at_nul(std::span<const std::uint8_t> bytes) {
  ByteSample out;
  for (std::uint8_t b : bytes) {
    if (b == 0) break;
    out.push_back(b);
  }
  return out;
}

// t column vectors uniform on the unit sphere in `dim` dimensions.
inline Tensor sample_latent(Rng& rng, int t_cols, int dim) {
  Tensor z = Tensor::zeros({dim, t_cols});
  for (int l = 0; l < t_cols; ++l) {
    double sq = 0.0;
    for (int c = 0; c < dim; ++c) {
      double g = rng.gaussian();
      z.at(c, l) = g;
      sq += g * g;
    }
    const double inv = 1.0 / std::sqrt(sq);
    for (int c = 0; c < dim; ++c) z.at(c, l) *= inv;
  }
  return z;
}

inline Tensor gaussian_noise(Rng& rng, const std::vector<int>& shape,
                             double sigma) {
  Tensor n = Tensor::zeros(shape);
  if (sigma > 0)
    for (double& v : n.values()) v = rng.gaussian() * sigma;
  return n;
}

// --- the full model --------------------------------------------------------

struct AtnnfaeParams {
  AtnnfaeConfig cfg;
  Stack enc, dec, disc;              // dec doubles as the generator
  LengthDistribution length_dist;    // training lengths, used for generation

  std::vector<Parameter*> encoder_params() {
    std::vector<Parameter*> out;
    enc.collect(out);
    return out;
  }
  std::vector<Parameter*> generator_params() {
    std::vector<Parameter*> out;
    dec.collect(out);
    return out;
  }
  std::vector<Parameter*> discriminator_params() {
    std::vector<Parameter*> out;
    disc.collect(out);
    return out;
  }
  std::vector<Parameter*> autoencoder_params() {
    std::vector<Parameter*> out;
    enc.collect(out);
    dec.collect(out);
    return out;
  }
  std::vector<Parameter*> all_params() {
    std::vector<Parameter*> out;
    enc.collect(out);
    dec.collect(out);
    disc.collect(out);
    return out;
  }
};

inline AtnnfaeParams make_atnnfae(const AtnnfaeConfig& cfg,
                                  const LengthDistribution& length_dist) {
  cfg.validate();
  AtnnfaeParams p;
  p.cfg = cfg;
  p.length_dist = length_dist;
  Rng init(cfg.seed, "init");
  p.enc = make_stack(StackKind::Encoder, cfg, 256, init, "enc");
  p.dec = make_stack(StackKind::Decoder, cfg, 256, init, "dec");
  p.disc = make_stack(StackKind::Discriminator, cfg, 256, init, "disc");
  return p;
}

// --- evaluation paths (no parameter gradients) -----------------------------

inline Tensor encode(const AtnnfaeParams& p, std::span<const std::uint8_t> sample) {
  if (sample.size() > static_cast<std::size_t>(p.cfg.max_len))
    throw DataError("sample exceeds the configured maximum length");
  Tape t;
  auto bound = bind_constants(t, p.enc);
  auto padded = pad_to_multiple(sample, p.cfg.pad_factor());
  Tape::Id x = t.constant(one_hot(padded));
  return t.value(encoder_forward(t, bound, x, p.cfg.groups, p.cfg.residual));
}

// Additive N(0, sigma^2) noise followed by re-normalization of each column.
inline Tensor corrupt(const Tensor& feature, double sigma, Rng& rng) {
  Tape t;
  Tape::Id x = t.constant(feature);
  Tape::Id noisy =
      t.add(x, t.constant(gaussian_noise(rng, feature.shape(), sigma)));
  return t.value(t.l2_normalize_cols(noisy));
}

inline Tensor decode(const AtnnfaeParams& p, const Tensor& feature) {
  Tape t;
  auto bound = bind_constants(t, p.dec);
  return t.value(
      decoder_forward(t, bound, t.constant(feature), p.cfg.groups, p.cfg.residual));
}

inline double discriminate(const AtnnfaeParams& p, const Tensor& logits) {
  Tape t;
  auto bound = bind_constants(t, p.disc);
  return t
      .value(discriminator_forward(t, bound, t.constant(logits), p.cfg.groups,
                                   p.cfg.residual))
      .item();
}

// Fraction of supervised byte positions (the s bytes plus the terminator
// when present, padding excluded) whose argmax reconstruction differs from
// the input, with noise drawn from a fixed per-sample stream.
inline double reconstruction_error(const AtnnfaeParams& p, const Corpus& corpus,
                                   double sigma, std::uint64_t eval_seed,
                                   int threads = 1,
                                   std::size_t max_samples = 0) {
  const std::size_t n = max_samples == 0
                            ? corpus.samples.size()
                            : std::min(max_samples, corpus.samples.size());
  std::vector<std::uint64_t> mism(threads > 1 ? threads : 1, 0);
  std::vector<std::uint64_t> events(mism.size(), 0);
  auto work = [&](std::size_t worker, std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& y = corpus.samples[i];
      Rng rng(eval_seed, "recon/" + std::to_string(i));
      Tensor feat = encode(p, y);
      Tensor noisy = corrupt(feat, sigma, rng);
      Tensor logits = decode(p, noisy);
      auto pred = argmax_bytes(logits);
      const std::size_t s = y.size();
      const std::size_t span = pred.size();
      const std::size_t ev = s + (s < span ? 1 : 0);
      for (std::size_t j = 0; j < ev; ++j) {
        const std::uint8_t expect = j < s ? y[j] : 0;
        if (pred[j] != expect) ++mism[worker];
      }
      events[worker] += ev;
    }
  };
  if (threads <= 1) {
    work(0, 0, n);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w)
      pool.emplace_back(work, w, n * w / threads, n * (w + 1) / threads);
    for (auto& th : pool) th.join();
  }
  std::uint64_t total_mism = 0, total_events = 0;
  for (std::size_t w = 0; w < mism.size(); ++w) {
    total_mism += mism[w];
    total_events += events[w];
  }
  return total_events == 0
             ? 0.0
             : static_cast<double>(total_mism) / static_cast<double>(total_events);
}

// Non-sequential generation: z on the unit sphere with t drawn from the
// training length distribution, argmax per position, truncated at the first
// 0x00 or the full 2^G * t span. Sample i always uses the stream
// "ae-gen/i", so results are identical for any thread count.
inline std::vector<ByteSample> generate_text(const AtnnfaeParams& p,
                                             std::uint64_t seed,
                                             std::size_t count,
                                             int threads = 1) {
  std::vector<ByteSample> out(count);
  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      Rng rng(seed, "ae-gen/" + std::to_string(i));
      const std::size_t len = p.length_dist.sample(rng);
      const int t_cols = static_cast<int>(
          (len + p.cfg.pad_factor() - 1) / p.cfg.pad_factor());
      Tensor z = sample_latent(rng, std::max(1, t_cols), p.cfg.feature_dim);
      Tensor logits = decode(p, z);
      out[i] = truncate_at_nul(argmax_bytes(logits));
    }
  };
  if (threads <= 1) {
    work(0, count);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w)
      pool.emplace_back(work, count * w / threads, count * (w + 1) / threads);
    for (auto& th : pool) th.join();
  }
  return out;
}

// Feature-space interpolation: per-column renormalized linear mixes of the
// two encodings. An all-zero mix column (antipodal inputs) is recomputed at
// alpha nudged by 1e-6.
inline std::vector<ByteSample> interpolate(const AtnnfaeParams& p,
                                           std::span<const std::uint8_t> a,
                                           std::span<const std::uint8_t> b,
                                           int steps) {
  if (steps < 1) throw DataError("interpolate needs steps >= 1");
  const std::size_t common =
      std::max(a.size(), b.size());  // pad the shorter sample
  auto pa = pad_to_multiple(a, p.cfg.pad_factor());
  auto pb = pad_to_multiple(b, p.cfg.pad_factor());
  const std::size_t padded =
      p.cfg.pad_factor() *
      ((common + p.cfg.pad_factor() - 1) / p.cfg.pad_factor());
  pa.bytes.resize(padded, 0);
  pb.bytes.resize(padded, 0);

  auto encode_padded = [&](const PaddedSample& ps) {
    Tape t;
    auto bound = bind_constants(t, p.enc);
    return t.value(encoder_forward(t, bound, t.constant(one_hot(ps)),
                                   p.cfg.groups, p.cfg.residual));
  };
  Tensor fa = encode_padded(pa);
  Tensor fb = encode_padded(pb);

  const int dim = fa.channels(), t_cols = fa.length();
  const double eps = 1e-12;
  std::vector<ByteSample> out;
  for (int step = 0; step < steps; ++step) {
    const double alpha =
        steps == 1 ? 0.0 : static_cast<double>(step) / (steps - 1);
    Tensor mix = Tensor::zeros({dim, t_cols});
    for (int l = 0; l < t_cols; ++l) {
      double col_alpha = alpha;
      for (int attempt = 0; attempt < 2; ++attempt) {
        double sq = 0.0;
        for (int c = 0; c < dim; ++c) {
          const double v =
              (1.0 - col_alpha) * fa.at(c, l) + col_alpha * fb.at(c, l);
          mix.at(c, l) = v;
          sq += v * v;
        }
        if (std::sqrt(sq) > eps) {
          const double inv = 1.0 / std::sqrt(sq);
          for (int c = 0; c < dim; ++c) mix.at(c, l) *= inv;
          break;
        }
        col_alpha = alpha < 1.0 ? alpha + 1e-6 : alpha - 1e-6;
      }
    }
    out.push_back(truncate_at_nul(argmax_bytes(decode(p, mix))));
  }
  return out;
}

// --- objectives -------------------------------------------------------------

// Cross-entropy of the noisy reconstruction against the input bytes
// (evaluation form; no parameters touched).
inline double loss_nnfae(const AtnnfaeParams& p,
                         std::span<const std::uint8_t> y, double sigma,
                         Rng& rng) {
  auto padded = pad_to_multiple(y, p.cfg.pad_factor());
  Tape t;
  auto enc_b = bind_constants(t, p.enc);
  auto dec_b = bind_constants(t, p.dec);
  Tape::Id feat = encoder_forward(t, enc_b, t.constant(one_hot(padded)),
                                  p.cfg.groups, p.cfg.residual);
  Tensor eta = gaussian_noise(rng, t.value(feat).shape(), sigma);
  Tape::Id noisy = t.l2_normalize_cols(t.add(feat, t.constant(eta)));
  Tape::Id logits = decoder_forward(t, dec_b, noisy, p.cfg.groups, p.cfg.residual);
  return t
      .value(t.softmax_cross_entropy(logits, one_hot(padded),
                                     supervision_mask(padded)))
      .item();
}

// max(0, m - d(g(f(y)+eta))) + max(0, m + d(g(z))), evaluation form.
inline double loss_d(const AtnnfaeParams& p, std::span<const std::uint8_t> y,
                     const Tensor& z, double sigma, double margin, Rng& rng) {
  Tensor feat = encode(p, y);
  Tensor noisy = corrupt(feat, sigma, rng);
  const double d_ae = discriminate(p, decode(p, noisy));
  const double d_gen = discriminate(p, decode(p, z));
  return std::max(0.0, margin - d_ae) + std::max(0.0, margin + d_gen);
}

// max(0, m - d(g(z))), evaluation form.
inline double loss_g(const AtnnfaeParams& p, const Tensor& z, double margin) {
  return std::max(0.0, margin - discriminate(p, decode(p, z)));
}

// --- single optimization steps ----------------------------------------------
// Each step builds one tape, backpropagates, and updates exactly its own
// trainee: the auto-encoder objective steps f and g, the discriminator
// objective steps d against detached network outputs, and the generator
// objective steps g through a frozen d.

inline double nnfae_step(AtnnfaeParams& p, std::span<const std::uint8_t> y,
                         double lr, Rng& noise_rng, Tensor* eta_out = nullptr) {
  auto padded = pad_to_multiple(y, p.cfg.pad_factor());
  Tape t;
  auto enc_b = bind_params(t, p.enc);
  auto dec_b = bind_params(t, p.dec);
  Tape::Id feat = encoder_forward(t, enc_b, t.constant(one_hot(padded)),
                                  p.cfg.groups, p.cfg.residual);
  Tensor eta = gaussian_noise(noise_rng, t.value(feat).shape(), p.cfg.sigma);
  Tape::Id noisy = t.l2_normalize_cols(t.add(feat, t.constant(eta)));
  Tape::Id logits = decoder_forward(t, dec_b, noisy, p.cfg.groups, p.cfg.residual);
  Tape::Id loss = t.softmax_cross_entropy(logits, one_hot(padded),
                                          supervision_mask(padded));
  const double lv = t.value(loss).item();
  if (std::isfinite(lv)) {
    t.backward(loss);
    auto trainees = p.autoencoder_params();
    sgd_momentum_step(trainees, lr);
  }
  if (eta_out) *eta_out = std::move(eta);
  return lv;
}

inline double discriminator_step(AtnnfaeParams& p,
                                 std::span<const std::uint8_t> y,
                                 const Tensor& eta, const Tensor& z,
                                 double lr) {
  // both discriminator inputs are detached: f and g receive no gradient
  Tensor ae_logits;
  {
    auto padded = pad_to_multiple(y, p.cfg.pad_factor());
    Tape t;
    auto enc_b = bind_constants(t, p.enc);
    auto dec_b = bind_constants(t, p.dec);
    Tape::Id feat = encoder_forward(t, enc_b, t.constant(one_hot(padded)),
                                    p.cfg.groups, p.cfg.residual);
    Tape::Id noisy = t.l2_normalize_cols(t.add(feat, t.constant(eta)));
    ae_logits =
        t.value(decoder_forward(t, dec_b, noisy, p.cfg.groups, p.cfg.residual));
  }
  Tensor gen_logits = decode(p, z);

  Tape t;
  auto disc_b = bind_params(t, p.disc);
  Tape::Id d_ae = discriminator_forward(t, disc_b, t.constant(ae_logits),
                                        p.cfg.groups, p.cfg.residual);
  Tape::Id d_gen = discriminator_forward(t, disc_b, t.constant(gen_logits),
                                         p.cfg.groups, p.cfg.residual);
  Tape::Id loss = t.add(t.hinge(d_ae, p.cfg.margin, -1.0),
                        t.hinge(d_gen, p.cfg.margin, +1.0));
  const double lv = t.value(loss).item();
  if (std::isfinite(lv)) {
    t.backward(loss);
    auto trainees = p.discriminator_params();
    sgd_momentum_step(trainees, lr);
  }
  return lv;
}

inline double generator_step(AtnnfaeParams& p, const Tensor& z, double lr) {
  Tape t;
  auto dec_b = bind_params(t, p.dec);
  auto disc_b = bind_params(t, p.disc);
  Tape::Id gen_logits = decoder_forward(t, dec_b, t.constant(z), p.cfg.groups,
                                        p.cfg.residual);
  Tape::Id d_gen = discriminator_forward(t, disc_b, gen_logits, p.cfg.groups,
                                         p.cfg.residual);
  Tape::Id loss = t.hinge(d_gen, p.cfg.margin, -1.0);
  const double lv = t.value(loss).item();
  if (std::isfinite(lv)) {
    t.backward(loss);
    auto trainees = p.generator_params();
    sgd_momentum_step(trainees, lr);
    auto frozen = p.discriminator_params();
    clear_gradients(frozen);
  }
  return lv;
}

// --- training ---------------------------------------------------------------

struct TrainLogRow {
  std::uint64_t step;   // per-objective step count after this cycle
  char objective;       // 'A' = auto-encoder, 'D', 'G'
  double loss;          // mean loss over the cycle
  double error;         // last evaluated reconstruction error (NaN before)
  double lr;
};

struct TrainControl {
  std::uint64_t eval_every = 1000;   // reconstruction-error cadence, in steps
  std::size_t eval_samples = 0;      // 0 = the whole corpus
  double eval_sigma = -1.0;          // <0 = the training sigma
  double stop_below_error = -1.0;    // early stop threshold; <0 disables
  std::uint64_t log_every = 100;     // log row cadence, in steps
  std::string checkpoint_path;       // written on divergence and at the end
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  std::uint64_t steps_done = 0;      // per objective
  double final_error = 0.0;
  bool early_stopped = false;
};

inline void save_checkpoint(AtnnfaeParams& params, const std::string& path);

inline TrainResult train(AtnnfaeParams& params, const Corpus& corpus,
                         const TrainControl& ctrl_in = {}) {
  TrainControl ctrl = ctrl_in;
  if (ctrl.eval_every == 0) ctrl.eval_every = 1;
  if (ctrl.log_every == 0) ctrl.log_every = 1;
  const AtnnfaeConfig& cfg = params.cfg;
  cfg.validate();
  for (const auto& s : corpus.samples)
    if (s.size() > static_cast<std::size_t>(cfg.max_len))
      throw DataError("corpus sample exceeds max_len; reload with truncation");

  Rng rng_sample(cfg.seed, "train-sample");
  Rng rng_noise(cfg.seed, "train-noise");
  Rng rng_noise_d(cfg.seed, "train-noise-d");
  Rng rng_latent(cfg.seed, "train-latent");
  const std::uint64_t eval_seed = cfg.seed ^ 0x9e3779b97f4a7c15ull;

  const double eval_sigma = ctrl.eval_sigma < 0 ? cfg.sigma : ctrl.eval_sigma;
  TrainResult result;
  double last_error = std::numeric_limits<double>::quiet_NaN();

  // most recent AE draw, reused by the discriminator objective when
  // reuse_nnfae_noise is set
  ByteSample last_y;
  Tensor last_eta;

  auto lr_at = [&](std::uint64_t step) {
    return cfg.lr * std::pow(0.5, static_cast<double>(step / cfg.lr_halve_every));
  };

  auto diverged = [&](double loss, std::uint64_t step, char obj) {
    if (std::isfinite(loss)) return;
    if (!ctrl.checkpoint_path.empty())
      save_checkpoint(params, ctrl.checkpoint_path);
    throw DataError("training diverged (loss not finite) at step " +
                    std::to_string(step) + " of objective " +
                    std::string(1, obj));
  };

  auto draw_latent = [&]() {
    const std::size_t len = params.length_dist.sample(rng_latent);
    const int t_cols = static_cast<int>(
        (len + cfg.pad_factor() - 1) / cfg.pad_factor());
    return sample_latent(rng_latent, std::max(1, t_cols), cfg.feature_dim);
  };

  std::uint64_t step = 0;
  bool stop = false;
  while (step < cfg.steps && !stop) {
    const int cycle_steps = static_cast<int>(
        std::min<std::uint64_t>(cfg.steps_per_objective, cfg.steps - step));
    const double lr = lr_at(step);

    // --- auto-encoder objective: update f and g
    double loss_a = 0.0;
    for (int i = 0; i < cycle_steps; ++i) {
      const ByteSample& y = sample_paragraph(corpus, rng_sample);
      Tensor eta;
      const double lv = nnfae_step(params, y, lr, rng_noise, &eta);
      diverged(lv, step + i, 'A');
      loss_a += lv;
      if (cfg.reuse_nnfae_noise) {
        last_y = y;
        last_eta = std::move(eta);
      }
    }
    loss_a /= cycle_steps;

    double loss_d = 0.0, loss_g = 0.0;
    if (cfg.adversarial) {
      // --- discriminator objective: update d only
      for (int i = 0; i < cycle_steps; ++i) {
        ByteSample y;
        Tensor eta;
        if (cfg.reuse_nnfae_noise && !last_y.empty()) {
          y = last_y;
          eta = last_eta;
        } else {
          y = sample_paragraph(corpus, rng_sample);
          const int t_cols = static_cast<int>(
              pad_to_multiple(y, cfg.pad_factor()).bytes.size() /
              cfg.pad_factor());
          eta = gaussian_noise(rng_noise_d, {cfg.feature_dim, t_cols},
                               cfg.sigma);
        }
        const double lv = discriminator_step(params, y, eta, draw_latent(), lr);
        diverged(lv, step + i, 'D');
        loss_d += lv;
      }
      loss_d /= cycle_steps;

      // --- generator objective: update g only; gradients flow through d
      // but d's parameters are not stepped
      for (int i = 0; i < cycle_steps; ++i) {
        const double lv = generator_step(params, draw_latent(), lr);
        diverged(lv, step + i, 'G');
        loss_g += lv;
      }
      loss_g /= cycle_steps;
    }

    const std::uint64_t prev = step;
    step += cycle_steps;

    const bool eval_now =
        (prev / ctrl.eval_every) != (step / ctrl.eval_every) ||
        step >= cfg.steps;
    if (eval_now) {
      last_error = reconstruction_error(params, corpus, eval_sigma, eval_seed,
                                        1, ctrl.eval_samples);
      if (ctrl.stop_below_error >= 0 && last_error < ctrl.stop_below_error)
        stop = true;
    }
    const bool log_now = (prev / ctrl.log_every) != (step / ctrl.log_every) ||
                         step >= cfg.steps || stop;
    if (log_now) {
      result.log.push_back({step, 'A', loss_a, last_error, lr});
      if (cfg.adversarial) {
        result.log.push_back({step, 'D', loss_d, last_error, lr});
        result.log.push_back({step, 'G', loss_g, last_error, lr});
      }
    }
  }

  result.steps_done = step;
  result.final_error = last_error;
  result.early_stopped = stop;
  if (!ctrl.checkpoint_path.empty())
    save_checkpoint(params, ctrl.checkpoint_path);
  return result;
}

// --- checkpoint format "ATNNFAE1" ------------------------------------------
// magic, config block, the training length distribution, then every
// parameter tensor in a fixed order (encoder, decoder, discriminator; each
// prefix/group/postfix; per layer weight then bias) as little-endian f64.

inline void save_checkpoint(AtnnfaeParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  const AtnnfaeConfig& c = params.cfg;
  write_magic(out, "ATNNFAE1");
  write_u32le(out, static_cast<std::uint32_t>(c.k));
  write_u32le(out, static_cast<std::uint32_t>(c.groups));
  write_u32le(out, static_cast<std::uint32_t>(c.feature_dim));
  write_u32le(out, static_cast<std::uint32_t>(c.kernel));
  write_u32le(out, static_cast<std::uint32_t>(c.max_len));
  write_u32le(out, static_cast<std::uint32_t>(c.steps_per_objective));
  write_u32le(out, static_cast<std::uint32_t>(c.residual));
  write_u32le(out, (c.adversarial ? 1u : 0u) | (c.reuse_nnfae_noise ? 2u : 0u));
  write_f64le(out, c.sigma);
  write_f64le(out, c.margin);
  write_f64le(out, c.lr);
  write_u64le(out, c.lr_halve_every);
  write_u64le(out, c.steps);
  write_u64le(out, c.seed);

  auto entries = params.length_dist.entries();
  write_u64le(out, entries.size());
  for (const auto& [len, count] : entries) {
    write_u64le(out, len);
    write_u64le(out, count);
  }

  auto all = params.all_params();
  write_u64le(out, all.size());
  for (const Parameter* p : all) {
    write_u64le(out, p->value.numel());
    for (double v : p->value.values()) write_f64le(out, v);
  }
  if (!out) throw DataError("error writing checkpoint: " + path);
}

inline AtnnfaeParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  expect_magic(in, "ATNNFAE1", path);
  AtnnfaeConfig c;
  c.k = static_cast<int>(read_u32le(in));
  c.groups = static_cast<int>(read_u32le(in));
  c.feature_dim = static_cast<int>(read_u32le(in));
  c.kernel = static_cast<int>(read_u32le(in));
  c.max_len = static_cast<int>(read_u32le(in));
  c.steps_per_objective = static_cast<int>(read_u32le(in));
  c.residual = static_cast<ResidualPlacement>(read_u32le(in));
  const std::uint32_t flags = read_u32le(in);
  c.adversarial = flags & 1u;
  c.reuse_nnfae_noise = flags & 2u;
  c.sigma = read_f64le(in);
  c.margin = read_f64le(in);
  c.lr = read_f64le(in);
  c.lr_halve_every = read_u64le(in);
  c.steps = read_u64le(in);
  c.seed = read_u64le(in);

  LengthDistribution dist;
  const std::uint64_t n_entries = read_u64le(in);
  for (std::uint64_t i = 0; i < n_entries; ++i) {
    const std::uint64_t len = read_u64le(in);
    const std::uint64_t count = read_u64le(in);
    dist.add(len, count);
  }

  AtnnfaeParams params = make_atnnfae(c, dist);
  auto all = params.all_params();
  const std::uint64_t n_tensors = read_u64le(in);
  if (n_tensors != all.size())
    throw DataError("checkpoint tensor count mismatch: " + path);
  for (Parameter* p : all) {
    const std::uint64_t numel = read_u64le(in);
    if (numel != p->value.numel())
      throw DataError("checkpoint tensor shape mismatch: " + path);
    for (double& v : p->value.values()) v = read_f64le(in);
  }
  return params;
}

}  // namespace bytegen
