#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "bytegen/tensor.hpp"

namespace bytegen {

// A trainable tensor with its SGD momentum buffer. Gradients accumulate
// across backward passes (and across shared uses within one pass) until an
// optimizer step consumes them.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor momentum;
  bool grad_ready = false;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)),
        value(std::move(v)),
        grad(Tensor::zeros(value.shape())),
        momentum(Tensor::zeros(value.shape())) {}
};

// v <- momentum * v + grad;  p <- p - lr * v;  grads cleared.
inline void sgd_momentum_step(std::span<Parameter* const> params, double lr,
                              double momentum = 0.9) {
  bool any_ready = false;
  for (Parameter* p : params) any_ready |= p->grad_ready;
  if (!any_ready)
    throw std::logic_error("sgd_momentum_step: no gradients populated");
  for (Parameter* p : params) {
    auto& v = p->momentum.values();
    auto& g = p->grad.values();
    auto& w = p->value.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum * v[i] + g[i];
      w[i] -= lr * v[i];
      g[i] = 0.0;
    }
    p->grad_ready = false;
  }
}

inline void clear_gradients(std::span<Parameter* const> params) {
  for (Parameter* p : params) {
    p->grad.fill(0.0);
    p->grad_ready = false;
  }
}

// Reverse-mode tape over 1-D feature maps. One tape records one forward
// pass; backward() replays it once in reverse. Parallelism, when used, is
// across independent tapes.
class Tape {
 public:
  using Id = int;

  Id input(Tensor t) { return make_node(std::move(t)); }

  Id constant(Tensor t) { return make_node(std::move(t)); }

  // Leaf bound to a persistent parameter. Repeated calls for the same
  // parameter return the same node, so shared weights (the recursion groups,
  // the decoder/generator identity) accumulate gradients naturally.
  Id param(Parameter& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return it->second;
    Id id = make_node(p.value);
    nodes_[id].bound = &p;
    param_nodes_.emplace(&p, id);
    return id;
  }

  const Tensor& value(Id id) const { return nodes_[id].val; }
  const Tensor& grad(Id id) const { return nodes_[id].grad; }

  // --- operations -------------------------------------------------------

  // Same-padded 1-D cross-correlation: x [C_in, L], w [C_out, C_in, K]
  // (K odd), b [C_out] -> [C_out, L]. The inner product runs as a GEMM on an
  // im2col buffer, which is what makes desk-scale training tractable.
  Id conv1d_same(Id x, Id w, Id b) {
    const Tensor& xv = nodes_[x].val;
    const Tensor& wv = nodes_[w].val;
    const Tensor& bv = nodes_[b].val;
    if (xv.rank() != 2 || wv.rank() != 3 || bv.rank() != 1)
      throw std::invalid_argument("conv1d_same: bad ranks");
    const int c_in = xv.channels(), len = xv.length();
    const int c_out = wv.shape()[0], k = wv.shape()[2];
    if (wv.shape()[1] != c_in || bv.shape()[0] != c_out)
      throw std::invalid_argument("conv1d_same: shape mismatch");
    if (k % 2 == 0) throw std::invalid_argument("conv1d_same: kernel must be odd");
    const int off = k / 2;

    auto cols = std::make_shared<RowMat>(RowMat::Zero(c_in * k, len));
    for (int ci = 0; ci < c_in; ++ci) {
      for (int dk = 0; dk < k; ++dk) {
        // destination column l reads x[ci, l + dk - off]
        const int src_lo = std::max(0, off - dk);
        const int src_hi = std::min(len, len + off - dk);
        for (int l = src_lo; l < src_hi; ++l)
          (*cols)(ci * k + dk, l) = xv.at(ci, l + dk - off);
      }
    }

    Tensor out = Tensor::zeros({c_out, len});
    {
      Eigen::Map<const RowMat> wm(wv.data(), c_out, c_in * k);
      Eigen::Map<RowMat> om(out.data(), c_out, len);
      om.noalias() = wm * (*cols);
      for (int co = 0; co < c_out; ++co) om.row(co).array() += bv[co];
    }
    debug_check_finite(out);

    Id y = make_node(std::move(out));
    nodes_[y].back = [this, x, w, b, y, cols, c_in, c_out, k, len, off] {
      Eigen::Map<const RowMat> gy(nodes_[y].grad.data(), c_out, len);
      {
        Eigen::Map<RowMat> gw(nodes_[w].grad.data(), c_out, c_in * k);
        gw.noalias() += gy * cols->transpose();
      }
      {
        Tensor& gb = nodes_[b].grad;
        for (int co = 0; co < c_out; ++co) gb[co] += gy.row(co).sum();
      }
      {
        Eigen::Map<const RowMat> wm(nodes_[w].val.data(), c_out, c_in * k);
        RowMat gcols = wm.transpose() * gy;
        Tensor& gx = nodes_[x].grad;
        for (int ci = 0; ci < c_in; ++ci) {
          for (int dk = 0; dk < k; ++dk) {
            const int src_lo = std::max(0, off - dk);
            const int src_hi = std::min(len, len + off - dk);
            for (int l = src_lo; l < src_hi; ++l)
              gx.at(ci, l + dk - off) += gcols(ci * k + dk, l);
          }
        }
      }
    };
    return y;
  }

  Id relu(Id x) {
    Tensor out = nodes_[x].val;
    for (double& v : out.values()) v = std::max(0.0, v);
    Id y = make_node(std::move(out));
    nodes_[y].back = [this, x, y] {
      const auto& xv = nodes_[x].val.values();
      const auto& gy = nodes_[y].grad.values();
      auto& gx = nodes_[x].grad.values();
      for (std::size_t i = 0; i < gx.size(); ++i)
        if (xv[i] > 0.0) gx[i] += gy[i];  // subgradient at 0 is 0
    };
    return y;
  }

  Id add(Id a, Id b) {
    const Tensor& av = nodes_[a].val;
    const Tensor& bv = nodes_[b].val;
    if (!av.same_shape(bv)) throw std::invalid_argument("add: shape mismatch");
    Tensor out = av;
    for (std::size_t i = 0; i < out.numel(); ++i)
      out.values()[i] += bv.values()[i];
    Id y = make_node(std::move(out));
    nodes_[y].back = [this, a, b, y] {
      const auto& gy = nodes_[y].grad.values();
      auto& ga = nodes_[a].grad.values();
      auto& gb = nodes_[b].grad.values();
      for (std::size_t i = 0; i < gy.size(); ++i) {
        ga[i] += gy[i];
        gb[i] += gy[i];
      }
    };
    return y;
  }

  // Pairwise max over length, [C, L] -> [C, L/2]. Ties route the gradient to
  // the earlier index.
  Id maxpool2(Id x) {
    const Tensor& xv = nodes_[x].val;
    if (xv.rank() != 2 || xv.length() % 2 != 0)
      throw std::invalid_argument("maxpool2 needs rank 2 and even length");
    const int c = xv.channels(), half = xv.length() / 2;
    Tensor out = Tensor::zeros({c, half});
    auto argmax = std::make_shared<std::vector<int>>(
        static_cast<std::size_t>(c) * half);
    for (int ci = 0; ci < c; ++ci) {
      for (int l = 0; l < half; ++l) {
        const double a = xv.at(ci, 2 * l), b = xv.at(ci, 2 * l + 1);
        const int pick = b > a ? 2 * l + 1 : 2 * l;
        out.at(ci, l) = std::max(a, b);
        (*argmax)[static_cast<std::size_t>(ci) * half + l] = pick;
      }
    }
    Id y = make_node(std::move(out));
    nodes_[y].back = [this, x, y, argmax, c, half] {
      Tensor& gx = nodes_[x].grad;
      const Tensor& gy = nodes_[y].grad;
      for (int ci = 0; ci < c; ++ci)
        for (int l = 0; l < half; ++l)
          gx.at(ci, (*argmax)[static_cast<std::size_t>(ci) * half + l]) +=
              gy.at(ci, l);
    };
    return y;
  }

  // Pixel shuffle, [C, L] -> [C/2, 2L]: channel pair (2c, 2c+1) interleaves
  // into positions (2l, 2l+1). A bijection, so the backward pass is the
  // inverse permutation.
  Id subpixel2(Id x) {
    const Tensor& xv = nodes_[x].val;
    if (xv.rank() != 2 || xv.channels() % 2 != 0)
      throw std::invalid_argument("subpixel2 needs rank 2 and even channels");
    const int c_out = xv.channels() / 2, len = xv.length();
    Tensor out = Tensor::zeros({c_out, 2 * len});
    for (int c = 0; c < c_out; ++c) {
      for (int l = 0; l < len; ++l) {
        out.at(c, 2 * l) = xv.at(2 * c, l);
        out.at(c, 2 * l + 1) = xv.at(2 * c + 1, l);
      }
    }
    Id y = make_node(std::move(out));
    nodes_[y].back = [this, x, y, c_out, len] {
      Tensor& gx = nodes_[x].grad;
      const Tensor& gy = nodes_[y].grad;
      for (int c = 0; c < c_out; ++c)
        for (int l = 0; l < len; ++l) {
          gx.at(2 * c, l) += gy.at(c, 2 * l);
          gx.at(2 * c + 1, l) += gy.at(c, 2 * l + 1);
        }
    };
    return y;
  }

  // Per-position L2 normalization of the channel vector, with an epsilon
  // guard so all-zero columns (padding) stay finite.
  Id l2_normalize_cols(Id x, double eps = 1e-12) {
    const Tensor& xv = nodes_[x].val;
    if (xv.rank() != 2)
      throw std::invalid_argument("l2_normalize_cols needs rank 2");
    const int c = xv.channels(), len = xv.length();
    auto norms = std::make_shared<std::vector<double>>(len);
    Tensor out = Tensor::zeros({c, len});
    for (int l = 0; l < len; ++l) {
      double sq = 0.0;
      for (int ci = 0; ci < c; ++ci) sq += xv.at(ci, l) * xv.at(ci, l);
      const double n = std::sqrt(sq);
      (*norms)[l] = n;
      const double denom = std::max(n, eps);
      for (int ci = 0; ci < c; ++ci) out.at(ci, l) = xv.at(ci, l) / denom;
    }
    Id y = make_node(std::move(out));
    nodes_[y].back = [this, x, y, norms, eps, c, len] {
      const Tensor& yv = nodes_[y].val;
      const Tensor& gy = nodes_[y].grad;
      Tensor& gx = nodes_[x].grad;
      for (int l = 0; l < len; ++l) {
        const double n = (*norms)[l];
        if (n > eps) {
          double dot = 0.0;
          for (int ci = 0; ci < c; ++ci) dot += gy.at(ci, l) * yv.at(ci, l);
          for (int ci = 0; ci < c; ++ci)
            gx.at(ci, l) += (gy.at(ci, l) - yv.at(ci, l) * dot) / n;
        } else {
          for (int ci = 0; ci < c; ++ci) gx.at(ci, l) += gy.at(ci, l) / eps;
        }
      }
    };
    return y;
  }

  // Masked mean of per-position cross-entropies. target columns are one-hot
  // (or all-zero for padding); mask holds per-position weights and zeroes
  // padded positions.
  Id softmax_cross_entropy(Id logits, Tensor target,
                           std::vector<double> mask) {
    const Tensor& zv = nodes_[logits].val;
    if (zv.rank() != 2 || !zv.same_shape(target))
      throw std::invalid_argument("softmax_cross_entropy: shape mismatch");
    const int c = zv.channels(), len = zv.length();
    if (static_cast<int>(mask.size()) != len)
      throw std::invalid_argument("softmax_cross_entropy: mask length");
    double weight_total = 0.0;
    for (double w : mask) weight_total += w;
    if (weight_total <= 0.0)
      throw std::invalid_argument("softmax_cross_entropy: empty mask");

    auto probs = std::make_shared<Tensor>(Tensor::zeros({c, len}));
    double loss = 0.0;
    for (int l = 0; l < len; ++l) {
      double mx = zv.at(0, l);
      for (int ci = 1; ci < c; ++ci) mx = std::max(mx, zv.at(ci, l));
      double sum = 0.0;
      for (int ci = 0; ci < c; ++ci) sum += std::exp(zv.at(ci, l) - mx);
      const double lse = mx + std::log(sum);
      double z_target = 0.0;
      for (int ci = 0; ci < c; ++ci) {
        probs->at(ci, l) = std::exp(zv.at(ci, l) - lse);
        z_target += target.at(ci, l) * zv.at(ci, l);
      }
      if (mask[l] > 0.0) loss += mask[l] * (lse - z_target);
    }
    loss /= weight_total;

    Id y = make_node(Tensor::scalar(loss));
    auto tgt = std::make_shared<Tensor>(std::move(target));
    auto msk = std::make_shared<std::vector<double>>(std::move(mask));
    nodes_[y].back = [this, logits, y, probs, tgt, msk, weight_total, c,
                      len] {
      const double g = nodes_[y].grad.item();
      Tensor& gx = nodes_[logits].grad;
      for (int l = 0; l < len; ++l) {
        const double w = (*msk)[l];
        if (w <= 0.0) continue;
        const double scale = g * w / weight_total;
        for (int ci = 0; ci < c; ++ci)
          gx.at(ci, l) += scale * (probs->at(ci, l) - tgt->at(ci, l));
      }
    };
    return y;
  }

  // max(0, margin + sign * d) on a scalar; flat region passes no gradient.
  Id hinge(Id d, double margin, double sign) {
    const double dv = nodes_[d].val.item();
    const double val = std::max(0.0, margin + sign * dv);
    Id y = make_node(Tensor::scalar(val));
    nodes_[y].back = [this, d, y, val, sign] {
      if (val > 0.0) nodes_[d].grad.values()[0] += sign * nodes_[y].grad.item();
    };
    return y;
  }

  // Mean over all elements -> scalar (the discriminator head).
  Id mean_all(Id x) {
    const Tensor& xv = nodes_[x].val;
    const double n = static_cast<double>(xv.numel());
    double sum = 0.0;
    for (double v : xv.values()) sum += v;
    Id y = make_node(Tensor::scalar(sum / n));
    nodes_[y].back = [this, x, y, n] {
      const double g = nodes_[y].grad.item() / n;
      for (double& v : nodes_[x].grad.values()) v += g;
    };
    return y;
  }

  // Sum of elementwise products with a fixed tensor -> scalar. Used by
  // gradient checks to collapse a map output into one differentiable value.
  Id weighted_sum(Id x, Tensor weights) {
    const Tensor& xv = nodes_[x].val;
    if (!xv.same_shape(weights))
      throw std::invalid_argument("weighted_sum: shape mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < xv.numel(); ++i)
      sum += xv.values()[i] * weights.values()[i];
    Id y = make_node(Tensor::scalar(sum));
    auto w = std::make_shared<Tensor>(std::move(weights));
    nodes_[y].back = [this, x, y, w] {
      const double g = nodes_[y].grad.item();
      auto& gx = nodes_[x].grad.values();
      for (std::size_t i = 0; i < gx.size(); ++i)
        gx[i] += g * w->values()[i];
    };
    return y;
  }

  // --- backward ---------------------------------------------------------

  // Seeds d(loss)/d(loss) = 1, sweeps the recorded ops once in reverse
  // creation order, then folds leaf gradients into their bound parameters.
  void backward(Id loss) {
    if (nodes_[loss].val.numel() != 1)
      throw std::invalid_argument("backward needs a scalar loss");
    nodes_[loss].grad.values()[0] = 1.0;
    for (Id i = loss; i >= 0; --i)
      if (nodes_[i].back) nodes_[i].back();
    for (auto& [param, id] : param_nodes_) {
      auto& pg = param->grad.values();
      const auto& ng = nodes_[id].grad.values();
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += ng[i];
      param->grad_ready = true;
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor val;
    Tensor grad;
    std::function<void()> back;  // empty for leaves
    Parameter* bound = nullptr;
  };

  using RowMat =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Id make_node(Tensor t) {
    debug_check_finite(t);
    Node n;
    n.grad = Tensor::zeros(t.shape());
    n.val = std::move(t);
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
  std::unordered_map<Parameter*, Id> param_nodes_;
};

// --- finite-difference gradient check ------------------------------------

struct GradcheckReport {
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
  std::size_t coords_skipped = 0;  // kink-adjacent (unstable difference quotient)
  bool pass = true;
};

// Central differences (h default 1e-5) against the tape gradient, relative
// error |a - n| / max(|a|, |n|, 1e-8). `build` maps (tape, input node ids)
// to a scalar node id and must be a pure function of the inputs.
//
// skip_unstable handles kinks inside composite graphs: a mismatching
// coordinate is re-estimated at h/8, and if the two difference quotients
// disagree with each other the point straddles a ReLU/max kink and is
// excluded rather than counted as a failure. A genuinely wrong gradient
// yields consistent quotients and still fails.
template <typename BuildFn>
GradcheckReport gradcheck(std::vector<Tensor> inputs, BuildFn&& build,
                          double tol = 1e-4, double h = 1e-5,
                          std::size_t max_coords_per_input = 0,
                          bool skip_unstable = false) {
  GradcheckReport report;

  // analytic gradients
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Tape::Id> ids;
    ids.reserve(inputs.size());
    for (const auto& x : inputs) ids.push_back(tape.input(x));
    Tape::Id out = build(tape, ids);
    tape.backward(out);
    for (Tape::Id id : ids) analytic.push_back(tape.grad(id));
  }

  auto forward_scalar = [&](const std::vector<Tensor>& xs) {
    Tape tape;
    std::vector<Tape::Id> ids;
    ids.reserve(xs.size());
    for (const auto& x : xs) ids.push_back(tape.input(x));
    return tape.value(build(tape, ids)).item();
  };

  auto rel_err = [](double a, double n) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
  };

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::size_t n = inputs[i].numel();
    const std::size_t stride =
        max_coords_per_input > 0 && n > max_coords_per_input
            ? (n + max_coords_per_input - 1) / max_coords_per_input
            : 1;
    for (std::size_t j = 0; j < n; j += stride) {
      std::vector<Tensor> xs = inputs;
      const double orig = xs[i].values()[j];
      auto numeric_at = [&](double step) {
        xs[i].values()[j] = orig + step;
        const double fp = forward_scalar(xs);
        xs[i].values()[j] = orig - step;
        const double fm = forward_scalar(xs);
        xs[i].values()[j] = orig;
        return (fp - fm) / (2.0 * step);
      };
      const double numeric = numeric_at(h);
      const double a = analytic[i].values()[j];
      double rel = rel_err(a, numeric);
      if (rel >= tol && skip_unstable) {
        const double numeric_small = numeric_at(h / 8.0);
        if (rel_err(numeric, numeric_small) >= tol) {
          ++report.coords_skipped;
          continue;
        }
        rel = std::min(rel, rel_err(a, numeric_small));
      }
      report.max_rel_err = std::max(report.max_rel_err, rel);
      ++report.coords_checked;
    }
  }
  report.pass = report.max_rel_err < tol;
  return report;
}

}  // namespace bytegen
