#pragma once

#include <string>
#include <vector>

#include "bytegen/atnnfae.hpp"
#include "bytegen/autograd.hpp"
#include "bytegen/rng.hpp"

namespace bytegen {

struct GradcheckRow {
  std::string name;
  int instances = 0;
  std::size_t coords = 0;
  double max_rel_err = 0.0;
  bool pass = true;
};

namespace detail {

inline Tensor gc_random(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.values()) v = rng.gaussian() * scale;
  return t;
}

inline Tensor gc_away_from_zero(std::vector<int> shape, Rng& rng,
                                double min_abs = 1e-2) {
  Tensor t = gc_random(std::move(shape), rng);
  for (double& v : t.values())
    if (std::abs(v) < min_abs) v = v < 0 ? v - min_abs : v + min_abs;
  return t;
}

// Random stack with well-conditioned weights. The finite-difference oracle
// needs O(1) gradients; the production 1/1000 init would drown them in
// differencing noise.
inline Stack gc_stack(StackKind kind, const AtnnfaeConfig& cfg, int in_dim,
                      Rng& rng) {
  Stack s = make_stack(kind, cfg, in_dim, rng, "gc");
  for (auto* block : {&s.prefix, &s.group, &s.postfix})
    for (auto& layer : *block) {
      const auto& shape = layer.w.value.shape();
      const double scale = std::sqrt(1.0 / (shape[1] * shape[2]));
      for (double& v : layer.w.value.values()) v = rng.gaussian() * scale;
      for (double& v : layer.b.value.values()) v = rng.gaussian() * 0.05;
    }
  return s;
}

inline std::vector<Tensor> flatten_stack(const Stack& s) {
  std::vector<Tensor> out;
  for (const auto* block : {&s.prefix, &s.group, &s.postfix})
    for (const auto& layer : *block) {
      out.push_back(layer.w.value);
      out.push_back(layer.b.value);
    }
  return out;
}

// ids[0] is the map input; the rest pair up (w, b) in flatten_stack order.
inline BoundStack rebind_stack(const Stack& shape_of,
                               std::span<const Tape::Id> ids) {
  BoundStack b;
  std::size_t i = 0;
  auto fill = [&](const std::vector<ConvLayer>& block,
                  std::vector<BoundConv>& dst) {
    for (std::size_t j = 0; j < block.size(); ++j) {
      dst.push_back({ids[i], ids[i + 1]});
      i += 2;
    }
  };
  fill(shape_of.prefix, b.prefix);
  fill(shape_of.group, b.group);
  fill(shape_of.postfix, b.postfix);
  return b;
}

}  // namespace detail

// Runs the finite-difference oracle over every differentiable operation and
// the three full network stacks at k=1, G=2. Stack checks sample parameter
// coordinates and skip coordinates whose difference quotient is unstable
// across step sizes (a ReLU/max kink moved between x-h and x+h).
inline std::vector<GradcheckRow> run_gradcheck_suite(
    std::uint64_t seed = 20240901, int instances = 20, double tol = 1e-4) {
  using detail::gc_away_from_zero;
  using detail::gc_random;
  std::vector<GradcheckRow> rows;

  auto run = [&](const std::string& name, auto make_inputs, auto build,
                 std::size_t max_coords = 0, bool skip_unstable = false) {
    GradcheckRow row;
    row.name = name;
    row.instances = instances;
    Rng rng(seed, "gradcheck/" + name);
    for (int i = 0; i < instances; ++i) {
      auto inputs = make_inputs(rng);
      auto report = gradcheck(inputs, build, tol, 1e-5, max_coords,
                              skip_unstable);
      row.coords += report.coords_checked;
      row.max_rel_err = std::max(row.max_rel_err, report.max_rel_err);
      row.pass = row.pass && report.pass;
    }
    rows.push_back(row);
  };

  // fixed heads keep each op's output scalar-valued
  Rng head_rng(seed, "gradcheck-heads");

  {
    Tensor head = gc_random({3, 6}, head_rng);
    run(
        "conv1d",
        [&](Rng& rng) {
          return std::vector<Tensor>{gc_random({2, 6}, rng),
                                     gc_random({3, 2, 3}, rng),
                                     gc_random({3}, rng)};
        },
        [head](Tape& t, const std::vector<Tape::Id>& in) {
          return t.weighted_sum(t.conv1d_same(in[0], in[1], in[2]), head);
        });
  }
  {
    Tensor head = gc_random({3, 4}, head_rng);
    run(
        "relu",
        [&](Rng& rng) {
          return std::vector<Tensor>{gc_away_from_zero({3, 4}, rng)};
        },
        [head](Tape& t, const std::vector<Tape::Id>& in) {
          return t.weighted_sum(t.relu(in[0]), head);
        });
  }
  {
    Tensor head = gc_random({3, 4}, head_rng);
    run(
        "residual_add",
        [&](Rng& rng) {
          return std::vector<Tensor>{gc_random({3, 4}, rng),
                                     gc_random({3, 4}, rng)};
        },
        [head](Tape& t, const std::vector<Tape::Id>& in) {
          return t.weighted_sum(t.add(in[0], in[1]), head);
        });
  }
  {
    Tensor head = gc_random({2, 4}, head_rng);
    run(
        "maxpool1d",
        [&](Rng& rng) {
          Tensor x = gc_random({2, 8}, rng);
          for (int c = 0; c < 2; ++c)
            for (int l = 0; l < 4; ++l)
              while (std::abs(x.at(c, 2 * l) - x.at(c, 2 * l + 1)) < 1e-2)
                x.at(c, 2 * l) = rng.gaussian();
          return std::vector<Tensor>{x};
        },
        [head](Tape& t, const std::vector<Tape::Id>& in) {
          return t.weighted_sum(t.maxpool2(in[0]), head);
        });
  }
  {
    Tensor head = gc_random({2, 8}, head_rng);
    run(
        "subpixel_upsample",
        [&](Rng& rng) {
          return std::vector<Tensor>{gc_random({4, 4}, rng)};
        },
        [head](Tape& t, const std::vector<Tape::Id>& in) {
          return t.weighted_sum(t.subpixel2(in[0]), head);
        });
  }
  {
    Tensor head = gc_random({4, 5}, head_rng);
    run(
        "l2_normalize",
        [&](Rng& rng) {
          Tensor x = gc_random({4, 5}, rng);
          for (int l = 0; l < 5; ++l) {
            double sq = 0;
            for (int c = 0; c < 4; ++c) sq += x.at(c, l) * x.at(c, l);
            if (sq < 0.1) x.at(0, l) += 1.0;
          }
          return std::vector<Tensor>{x};
        },
        [head](Tape& t, const std::vector<Tape::Id>& in) {
          return t.weighted_sum(t.l2_normalize_cols(in[0]), head);
        });
  }
  {
    run(
        "softmax_cross_entropy",
        [&](Rng& rng) {
          return std::vector<Tensor>{gc_random({6, 5}, rng)};
        },
        [&](Tape& t, const std::vector<Tape::Id>& in) {
          Rng tr(seed, "gradcheck-ce-target");
          Tensor target = Tensor::zeros({6, 5});
          std::vector<double> mask(5, 0.0);
          for (int l = 0; l < 4; ++l) {
            target.at(static_cast<int>(tr.uniform_index(6)), l) = 1.0;
            mask[l] = 1.0;
          }
          return t.softmax_cross_entropy(in[0], target, mask);
        });
  }
  {
    // alternating signs across instances; a single hinge term keeps the
    // flat region exactly zero so the difference quotient is noise-free
    int hinge_instance = 0;
    double hinge_sign = -1.0;
    run(
        "hinge",
        [&](Rng& rng) {
          hinge_sign = (hinge_instance++ % 2) ? 1.0 : -1.0;
          Tensor d = Tensor::scalar(0.0);
          do {
            d.values()[0] = rng.gaussian();
          } while (std::abs(0.3 + hinge_sign * d.item()) < 1e-2);
          return std::vector<Tensor>{d};
        },
        [&hinge_sign](Tape& t, const std::vector<Tape::Id>& in) {
          return t.hinge(in[0], 0.3, hinge_sign);
        });
  }

  // full stacks, k=1, G=2, small dims
  AtnnfaeConfig cfg;
  cfg.k = 1;
  cfg.groups = 2;
  cfg.feature_dim = 6;
  cfg.seed = seed;
  const int in_dim = 6;
  const int len = 8;  // divisible by 2^G

  {
    Rng stack_rng(seed, "gradcheck-enc-setup");
    Stack shape_of = detail::gc_stack(StackKind::Encoder, cfg, in_dim, stack_rng);
    Tensor head = gc_random({cfg.feature_dim, len / 4}, head_rng);
    run(
        "encoder_stack",
        [&](Rng& rng) {
          Stack s = detail::gc_stack(StackKind::Encoder, cfg, in_dim, rng);
          std::vector<Tensor> inputs{gc_random({in_dim, len}, rng)};
          for (auto& t : detail::flatten_stack(s)) inputs.push_back(std::move(t));
          return inputs;
        },
        [&, head](Tape& t, const std::vector<Tape::Id>& in) {
          BoundStack b = detail::rebind_stack(
              shape_of, std::span<const Tape::Id>(in).subspan(1));
          return t.weighted_sum(
              encoder_forward(t, b, in[0], cfg.groups, cfg.residual), head);
        },
        24, true);
  }
  {
    Rng stack_rng(seed, "gradcheck-dec-setup");
    Stack shape_of = detail::gc_stack(StackKind::Decoder, cfg, in_dim, stack_rng);
    Tensor head = gc_random({in_dim, len}, head_rng);
    run(
        "decoder_stack",
        [&](Rng& rng) {
          Stack s = detail::gc_stack(StackKind::Decoder, cfg, in_dim, rng);
          std::vector<Tensor> inputs{
              gc_away_from_zero({cfg.feature_dim, len / 4}, rng)};
          for (auto& t : detail::flatten_stack(s)) inputs.push_back(std::move(t));
          return inputs;
        },
        [&, head](Tape& t, const std::vector<Tape::Id>& in) {
          BoundStack b = detail::rebind_stack(
              shape_of, std::span<const Tape::Id>(in).subspan(1));
          return t.weighted_sum(
              decoder_forward(t, b, in[0], cfg.groups, cfg.residual), head);
        },
        24, true);
  }
  {
    Rng stack_rng(seed, "gradcheck-disc-setup");
    Stack shape_of =
        detail::gc_stack(StackKind::Discriminator, cfg, in_dim, stack_rng);
    run(
        "discriminator_stack",
        [&](Rng& rng) {
          Stack s = detail::gc_stack(StackKind::Discriminator, cfg, in_dim, rng);
          std::vector<Tensor> inputs{gc_random({in_dim, len}, rng)};
          for (auto& t : detail::flatten_stack(s)) inputs.push_back(std::move(t));
          return inputs;
        },
        [&](Tape& t, const std::vector<Tape::Id>& in) {
          BoundStack b = detail::rebind_stack(
              shape_of, std::span<const Tape::Id>(in).subspan(1));
          return discriminator_forward(t, b, in[0], cfg.groups, cfg.residual);
        },
        24, true);
  }

  return rows;
}

}  // namespace bytegen
