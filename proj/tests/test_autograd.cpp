#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "bytegen/autograd.hpp"
#include "bytegen/rng.hpp"

using namespace bytegen;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.values()) v = rng.gaussian() * scale;
  return t;
}

// keeps relu/maxpool/hinge checks away from their kinks
Tensor random_away_from_zero(std::vector<int> shape, Rng& rng,
                             double min_abs = 1e-2) {
  Tensor t = random_tensor(std::move(shape), rng);
  for (double& v : t.values())
    if (std::abs(v) < min_abs) v = v < 0 ? v - min_abs : v + min_abs;
  return t;
}

}  // namespace

TEST_CASE("conv1d with an identity kernel is the identity") {
  Rng rng(1, "conv");
  Tensor x = random_tensor({1, 8}, rng);
  Tensor w = Tensor::zeros({1, 1, 3});
  w.at(0, 0, 1) = 1.0;
  Tensor b = Tensor::zeros({1});
  Tape tape;
  auto y = tape.conv1d_same(tape.input(x), tape.input(w), tape.input(b));
  for (int l = 0; l < 8; ++l)
    CHECK(tape.value(y).at(0, l) == Catch::Approx(x.at(0, l)));
}

TEST_CASE("conv1d with zero weights yields the bias per channel") {
  Rng rng(2, "conv");
  Tensor x = random_tensor({3, 6}, rng);
  Tensor w = Tensor::zeros({2, 3, 3});
  Tensor b = Tensor::from({2}, {0.5, -1.25});
  Tape tape;
  auto y = tape.conv1d_same(tape.input(x), tape.input(w), tape.input(b));
  for (int l = 0; l < 6; ++l) {
    CHECK(tape.value(y).at(0, l) == 0.5);
    CHECK(tape.value(y).at(1, l) == -1.25);
  }
}

TEST_CASE("conv1d rejects bad shapes") {
  Tape tape;
  auto x = tape.input(Tensor::zeros({2, 4}));
  auto w = tape.input(Tensor::zeros({3, 9, 3}));
  auto b = tape.input(Tensor::zeros({3}));
  CHECK_THROWS_AS(tape.conv1d_same(x, w, b), std::invalid_argument);
  auto w_even = tape.input(Tensor::zeros({3, 2, 4}));
  CHECK_THROWS_AS(tape.conv1d_same(x, w_even, b), std::invalid_argument);
}

TEST_CASE("conv1d passes the finite-difference check") {
  Rng rng(3, "conv-gc");
  for (int inst = 0; inst < 20; ++inst) {
    int c_in = 1 + static_cast<int>(rng.uniform_index(4));
    int c_out = 1 + static_cast<int>(rng.uniform_index(4));
    int len = 2 + static_cast<int>(rng.uniform_index(7));
    Tensor head = random_tensor({c_out, len}, rng);
    auto report = gradcheck(
        {random_tensor({c_in, len}, rng), random_tensor({c_out, c_in, 3}, rng),
         random_tensor({c_out}, rng)},
        [&](Tape& t, const std::vector<Tape::Id>& in) {
          return t.weighted_sum(t.conv1d_same(in[0], in[1], in[2]), head);
        });
    REQUIRE(report.pass);
  }
}

TEST_CASE("relu clamps negatives and passes gradcheck off the kink") {
  Tape tape;
  auto y = tape.relu(tape.input(Tensor::from({1, 2}, {-1.0, 2.0})));
  CHECK(tape.value(y).at(0, 0) == 0.0);
  CHECK(tape.value(y).at(0, 1) == 2.0);

  Rng rng(4, "relu-gc");
  for (int inst = 0; inst < 20; ++inst) {
    Tensor head = random_tensor({3, 4}, rng);
    auto report = gradcheck(
        {random_away_from_zero({3, 4}, rng)},
        [&](Tape& t, const std::vector<Tape::Id>& in) {
          return t.weighted_sum(t.relu(in[0]), head);
        });
    REQUIRE(report.pass);
  }
}

TEST_CASE("residual add requires matching shapes and adds elementwise") {
  Rng rng(5, "add");
  Tensor x = random_tensor({2, 3}, rng);
  Tape tape;
  auto y = tape.add(tape.input(x), tape.input(Tensor::zeros({2, 3})));
  for (std::size_t i = 0; i < x.numel(); ++i)
    CHECK(tape.value(y).values()[i] == x.values()[i]);
  auto bad = tape.input(Tensor::zeros({2, 4}));
  CHECK_THROWS_AS(tape.add(tape.input(x), bad), std::invalid_argument);

  for (int inst = 0; inst < 20; ++inst) {
    Tensor head = random_tensor({2, 3}, rng);
    auto report = gradcheck(
        {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)},
        [&](Tape& t, const std::vector<Tape::Id>& in) {
          return t.weighted_sum(t.add(in[0], in[1]), head);
        });
    REQUIRE(report.pass);
  }
}

TEST_CASE("maxpool2 takes pairwise maxima with earlier-index ties") {
  Tape tape;
  auto y = tape.maxpool2(tape.input(Tensor::from({1, 4}, {1, 3, 2, 4})));
  CHECK(tape.value(y).at(0, 0) == 3.0);
  CHECK(tape.value(y).at(0, 1) == 4.0);

  CHECK_THROWS_AS(tape.maxpool2(tape.input(Tensor::zeros({1, 5}))),
                  std::invalid_argument);

  // tie: gradient goes to the first element of each pair
  Tape t2;
  auto x = t2.input(Tensor::from({1, 4}, {7, 7, 7, 7}));
  auto pooled = t2.maxpool2(x);
  auto loss = t2.weighted_sum(pooled, Tensor::from({1, 2}, {1, 1}));
  t2.backward(loss);
  CHECK(t2.grad(x).at(0, 0) == 1.0);
  CHECK(t2.grad(x).at(0, 1) == 0.0);
  CHECK(t2.grad(x).at(0, 2) == 1.0);
  CHECK(t2.grad(x).at(0, 3) == 0.0);

  Rng rng(6, "pool-gc");
  for (int inst = 0; inst < 20; ++inst) {
    // resample until no near-ties within pairs
    Tensor input = random_tensor({2, 8}, rng);
    for (int c = 0; c < 2; ++c)
      for (int l = 0; l < 4; ++l)
        while (std::abs(input.at(c, 2 * l) - input.at(c, 2 * l + 1)) < 1e-2)
          input.at(c, 2 * l) = rng.gaussian();
    Tensor head = random_tensor({2, 4}, rng);
    auto report = gradcheck(
        {input},
        [&](Tape& t, const std::vector<Tape::Id>& in) {
          return t.weighted_sum(t.maxpool2(in[0]), head);
        });
    REQUIRE(report.pass);
  }
}

TEST_CASE("subpixel2 interleaves channel pairs into doubled length") {
  Tape tape;
  auto y = tape.subpixel2(tape.input(Tensor::from({2, 1}, {1, 2})));
  REQUIRE(tape.value(y).shape() == std::vector<int>{1, 2});
  CHECK(tape.value(y).at(0, 0) == 1.0);
  CHECK(tape.value(y).at(0, 1) == 2.0);

  CHECK_THROWS_AS(tape.subpixel2(tape.input(Tensor::zeros({3, 2}))),
                  std::invalid_argument);

  // bijection: undo by hand and recover the input
  Rng rng(7, "shuf");
  Tensor x = random_tensor({4, 5}, rng);
  Tape t2;
  auto up = t2.subpixel2(t2.input(x));
  const Tensor& u = t2.value(up);
  for (int c = 0; c < 2; ++c)
    for (int l = 0; l < 5; ++l) {
      CHECK(u.at(c, 2 * l) == x.at(2 * c, l));
      CHECK(u.at(c, 2 * l + 1) == x.at(2 * c + 1, l));
    }

  for (int inst = 0; inst < 20; ++inst) {
    Tensor head = random_tensor({2, 6}, rng);
    auto report = gradcheck(
        {random_tensor({4, 3}, rng)},
        [&](Tape& t, const std::vector<Tape::Id>& in) {
          return t.weighted_sum(t.subpixel2(in[0]), head);
        });
    REQUIRE(report.pass);
  }
}

TEST_CASE("l2_normalize_cols makes unit columns and is idempotent") {
  Tape tape;
  auto y = tape.l2_normalize_cols(tape.input(Tensor::from({2, 1}, {3, 4})));
  CHECK(tape.value(y).at(0, 0) == Catch::Approx(0.6));
  CHECK(tape.value(y).at(1, 0) == Catch::Approx(0.8));

  auto z = tape.l2_normalize_cols(y);
  CHECK(tape.value(z).at(0, 0) == Catch::Approx(0.6));
  CHECK(tape.value(z).at(1, 0) == Catch::Approx(0.8));

  // column norms are 1, or <= 1 in the epsilon branch
  Rng rng(8, "norm");
  Tensor x = random_tensor({4, 6}, rng);
  for (int c = 0; c < 4; ++c) x.at(c, 2) = 0.0;  // zero column
  Tape t2;
  auto n = t2.l2_normalize_cols(t2.input(x));
  for (int l = 0; l < 6; ++l) {
    double sq = 0;
    for (int c = 0; c < 4; ++c) sq += t2.value(n).at(c, l) * t2.value(n).at(c, l);
    if (l == 2)
      CHECK(sq == 0.0);
    else
      CHECK(std::sqrt(sq) == Catch::Approx(1.0).epsilon(1e-9));
  }

  for (int inst = 0; inst < 20; ++inst) {
    Tensor input = random_tensor({4, 6}, rng);
    // keep away from the epsilon regime
    for (int l = 0; l < 6; ++l) {
      double sq = 0;
      for (int c = 0; c < 4; ++c) sq += input.at(c, l) * input.at(c, l);
      if (sq < 0.1) input.at(0, l) += 1.0;
    }
    Tensor head = random_tensor({4, 6}, rng);
    auto report = gradcheck(
        {input},
        [&](Tape& t, const std::vector<Tape::Id>& in) {
          return t.weighted_sum(t.l2_normalize_cols(in[0]), head);
        });
    REQUIRE(report.pass);
  }
}

TEST_CASE("softmax cross entropy on uniform logits is ln(C)") {
  const int c = 256, len = 3;
  Tensor logits = Tensor::zeros({c, len});
  Tensor target = Tensor::zeros({c, len});
  target.at(7, 0) = 1.0;
  target.at(200, 1) = 1.0;
  target.at(0, 2) = 1.0;
  Tape tape;
  auto loss = tape.softmax_cross_entropy(tape.input(logits), target,
                                         {1.0, 1.0, 1.0});
  CHECK(tape.value(loss).item() == Catch::Approx(std::log(256.0)));
}

TEST_CASE("softmax cross entropy goes to zero with a huge target margin") {
  Tensor logits = Tensor::zeros({4, 1});
  logits.at(2, 0) = 60.0;
  Tensor target = Tensor::zeros({4, 1});
  target.at(2, 0) = 1.0;
  Tape tape;
  auto loss = tape.softmax_cross_entropy(tape.input(logits), target, {1.0});
  CHECK(tape.value(loss).item() < 1e-12);
}

TEST_CASE("softmax cross entropy ignores masked positions") {
  Rng rng(9, "ce");
  Tensor logits = random_tensor({8, 4}, rng);
  Tensor target = Tensor::zeros({8, 4});
  for (int l = 0; l < 2; ++l)
    target.at(static_cast<int>(rng.uniform_index(8)), l) = 1.0;
  // positions 2,3 are padding: all-zero targets, mask 0
  Tape tape;
  auto a = tape.softmax_cross_entropy(tape.input(logits), target,
                                      {1.0, 1.0, 0.0, 0.0});
  // changing padded logits must not change the loss
  Tensor logits2 = logits;
  logits2.at(0, 3) += 100.0;
  Tape tape2;
  auto b = tape2.softmax_cross_entropy(tape2.input(logits2), target,
                                       {1.0, 1.0, 0.0, 0.0});
  CHECK(tape.value(a).item() == Catch::Approx(tape2.value(b).item()));
}

TEST_CASE("softmax cross entropy passes gradcheck") {
  Rng rng(10, "ce-gc");
  for (int inst = 0; inst < 20; ++inst) {
    const int c = 6, len = 5;
    Tensor target = Tensor::zeros({c, len});
    std::vector<double> mask(len, 0.0);
    for (int l = 0; l < 4; ++l) {
      target.at(static_cast<int>(rng.uniform_index(c)), l) = 1.0;
      mask[l] = 1.0;
    }
    auto report = gradcheck(
        {random_tensor({c, len}, rng)},
        [&](Tape& t, const std::vector<Tape::Id>& in) {
          return t.softmax_cross_entropy(in[0], target, mask);
        });
    REQUIRE(report.pass);
  }
}

TEST_CASE("hinge terms match hand computation") {
  Tape tape;
  auto d_half = tape.input(Tensor::scalar(0.5));
  CHECK(tape.value(tape.hinge(d_half, 0.001, -1.0)).item() == 0.0);

  auto d_zero = tape.input(Tensor::scalar(0.0));
  auto h1 = tape.hinge(d_zero, 0.001, -1.0);
  auto h2 = tape.hinge(d_zero, 0.001, +1.0);
  CHECK(tape.value(h1).item() == Catch::Approx(0.001));
  CHECK(tape.value(h2).item() == Catch::Approx(0.001));
  CHECK(tape.value(tape.add(h1, h2)).item() == Catch::Approx(0.002));
}

TEST_CASE("hinge has zero gradient in the flat region") {
  Tape tape;
  auto d = tape.input(Tensor::scalar(5.0));
  auto h = tape.hinge(d, 0.001, -1.0);  // max(0, 0.001 - 5) = 0
  tape.backward(h);
  CHECK(tape.grad(d).item() == 0.0);
}

TEST_CASE("hinge passes gradcheck away from the kink") {
  Rng rng(11, "hinge-gc");
  for (int inst = 0; inst < 20; ++inst) {
    double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    double margin = rng.uniform();
    Tensor d = Tensor::scalar(0.0);
    do {
      d.values()[0] = rng.gaussian();
    } while (std::abs(margin + sign * d.item()) < 1e-2);
    auto report = gradcheck(
        {d},
        [&](Tape& t, const std::vector<Tape::Id>& in) {
          return t.hinge(in[0], margin, sign);
        });
    REQUIRE(report.pass);
  }
}

TEST_CASE("mean_all averages and distributes gradient evenly") {
  Tape tape;
  auto x = tape.input(Tensor::from({2, 2}, {1, 2, 3, 4}));
  auto m = tape.mean_all(x);
  CHECK(tape.value(m).item() == Catch::Approx(2.5));
  tape.backward(m);
  for (double g : tape.grad(x).values()) CHECK(g == Catch::Approx(0.25));
}

TEST_CASE("sgd with zero momentum is plain gradient descent") {
  Parameter p("p", Tensor::from({2}, {1.0, -2.0}));
  p.grad = Tensor::from({2}, {0.5, 0.25});
  p.grad_ready = true;
  Parameter* ptr = &p;
  sgd_momentum_step({&ptr, 1}, 0.1, 0.0);
  CHECK(p.value[0] == Catch::Approx(1.0 - 0.1 * 0.5));
  CHECK(p.value[1] == Catch::Approx(-2.0 - 0.1 * 0.25));
  CHECK(p.grad[0] == 0.0);
}

TEST_CASE("two momentum steps on a constant gradient unroll to lr*g*2.9") {
  Parameter p("p", Tensor::from({1}, {0.0}));
  Parameter* ptr = &p;
  for (int step = 0; step < 2; ++step) {
    p.grad[0] = 1.0;
    p.grad_ready = true;
    sgd_momentum_step({&ptr, 1}, 0.01, 0.9);
  }
  CHECK(p.value[0] == Catch::Approx(-0.01 * (1.0 + 1.9)));
}

TEST_CASE("sgd rejects a step without gradients") {
  Parameter p("p", Tensor::from({1}, {0.0}));
  Parameter* ptr = &p;
  CHECK_THROWS_AS(sgd_momentum_step({&ptr, 1}, 0.1), std::logic_error);
}

TEST_CASE("momentum sgd converges on a quadratic bowl") {
  // f(p) = 0.5 * ||p - t||^2, grad = p - t
  Parameter p("p", Tensor::from({3}, {5.0, -3.0, 1.0}));
  const std::vector<double> target = {1.0, 2.0, -0.5};
  Parameter* ptr = &p;
  int steps = 0;
  for (; steps < 500; ++steps) {
    double err = 0;
    for (int i = 0; i < 3; ++i) {
      p.grad[i] = p.value[i] - target[i];
      err = std::max(err, std::abs(p.grad[i]));
    }
    if (err < 1e-6) break;
    p.grad_ready = true;
    sgd_momentum_step({&ptr, 1}, 0.1, 0.9);
  }
  REQUIRE(steps < 500);
}

TEST_CASE("forward of a frozen graph is deterministic bit for bit") {
  Rng rng(12, "det");
  Tensor x = random_tensor({4, 8}, rng);
  Tensor w = random_tensor({4, 4, 3}, rng, 0.1);
  Tensor b = random_tensor({4}, rng, 0.1);
  auto run = [&] {
    Tape tape;
    auto y = tape.relu(
        tape.conv1d_same(tape.input(x), tape.input(w), tape.input(b)));
    auto pooled = tape.maxpool2(y);
    return tape.value(tape.mean_all(pooled)).item();
  };
  double first = run();
  for (int i = 0; i < 5; ++i) REQUIRE(run() == first);
}

TEST_CASE("gradients stay finite through 48 residual blocks at tiny init") {
  // y_{i+1} = relu(y_i + conv(y_i)) with N(0, sqrt(2/tau)/1000) weights
  Rng rng(13, "deep");
  const int channels = 8, len = 8, k = 3;
  const double std_dev = std::sqrt(2.0 / (channels * k)) / 1000.0;

  std::vector<Parameter> weights, biases;
  for (int i = 0; i < 48; ++i) {
    Tensor w = Tensor::zeros({channels, channels, k});
    for (double& v : w.values()) v = rng.gaussian() * std_dev;
    weights.emplace_back("w", std::move(w));
    biases.emplace_back("b", Tensor::zeros({channels}));
  }

  Tensor x = Tensor::zeros({channels, len});
  for (double& v : x.values()) v = std::abs(rng.gaussian());

  Tape tape;
  auto h = tape.input(x);
  for (int i = 0; i < 48; ++i) {
    auto c = tape.conv1d_same(h, tape.param(weights[i]),
                              tape.param(biases[i]));
    h = tape.relu(tape.add(h, c));
  }
  auto loss = tape.mean_all(h);
  tape.backward(loss);

  for (const auto& w : weights) {
    REQUIRE(w.grad.all_finite());
  }
  REQUIRE(tape.grad(0).all_finite());
  // the near-identity path keeps some signal flowing to the bottom
  double sum = 0;
  for (double g : tape.grad(0).values()) sum += std::abs(g);
  CHECK(sum > 0.0);
}

TEST_CASE("shared parameters accumulate gradients across uses") {
  Parameter w("w", Tensor::from({1, 1, 3}, {0.0, 1.0, 0.0}));
  Parameter b("b", Tensor::from({1}, {0.0}));
  Tape tape;
  auto x = tape.input(Tensor::from({1, 4}, {1, 2, 3, 4}));
  auto wid = tape.param(w);
  auto bid = tape.param(b);
  auto y1 = tape.conv1d_same(x, wid, bid);
  auto y2 = tape.conv1d_same(y1, wid, bid);  // same parameter twice
  auto loss = tape.mean_all(y2);
  tape.backward(loss);
  REQUIRE(w.grad_ready);
  double total = 0;
  for (double g : w.grad.values()) total += std::abs(g);
  CHECK(total > 0.0);
}
