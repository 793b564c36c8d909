#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <filesystem>

#include "bytegen/atnnfae.hpp"
#include "bytegen/gradcheck.hpp"
#include "bytegen/hash.hpp"
#include "helpers.hpp"

using namespace bytegen;

namespace {

AtnnfaeConfig small_config(int k = 1, int groups = 2, int fd = 8) {
  AtnnfaeConfig cfg;
  cfg.k = k;
  cfg.groups = groups;
  cfg.feature_dim = fd;
  cfg.max_len = 32;
  cfg.sigma = 0.05;
  cfg.seed = 11;
  return cfg;
}

Corpus tiny_corpus(std::uint64_t seed, std::size_t count, std::size_t max_len) {
  auto c = testutil::synth_corpus(seed, count);
  for (auto& s : c.samples)
    if (s.size() > max_len) s.resize(max_len);
  return c;
}

std::uint64_t params_hash(std::vector<Parameter*> params) {
  std::uint64_t h = kFnvOffsetBasis;
  for (const Parameter* p : params)
    for (double v : p->value.values()) {
      std::uint64_t bits;
      __builtin_memcpy(&bits, &v, 8);
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xff;
        h *= kFnvPrime;
      }
    }
  return h;
}

double column_norm(const Tensor& t, int l) {
  double sq = 0;
  for (int c = 0; c < t.channels(); ++c) sq += t.at(c, l) * t.at(c, l);
  return std::sqrt(sq);
}

}  // namespace

TEST_CASE("encode yields feature length ceil(s / 2^G)") {
  auto cfg = small_config(1, 4, 8);
  cfg.max_len = 64;
  auto params = make_atnnfae(cfg, LengthDistribution{});

  ByteSample y20(20, 'a');
  Tensor f = encode(params, y20);
  CHECK(f.channels() == 8);
  CHECK(f.length() == 2);  // ceil(20/16)

  ByteSample y16(16, 'a');
  CHECK(encode(params, y16).length() == 1);

  ByteSample too_long(65, 'a');
  CHECK_THROWS_AS(encode(params, too_long), DataError);
}

TEST_CASE("encode output columns are unit norm") {
  for (int k : {1, 2}) {
    auto cfg = small_config(k, 2, 8);
    auto params = make_atnnfae(cfg, LengthDistribution{});
    Rng rng(3, "enc-norm");
    for (int trial = 0; trial < 5; ++trial) {
      ByteSample y(1 + rng.uniform_index(32));
      for (auto& b : y)
        b = static_cast<std::uint8_t>(1 + rng.uniform_index(255));
      Tensor f = encode(params, y);
      for (int l = 0; l < f.length(); ++l)
        REQUIRE(std::abs(column_norm(f, l) - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("decode(encode(y)) restores the padded span for all lengths") {
  auto cfg = small_config(1, 2, 8);
  auto params = make_atnnfae(cfg, LengthDistribution{});
  for (std::size_t s = 1; s <= 32; ++s) {
    ByteSample y(s, 'x');
    Tensor logits = decode(params, encode(params, y));
    CHECK(logits.channels() == 256);
    CHECK(logits.length() == static_cast<int>(4 * ((s + 3) / 4)));
  }
}

TEST_CASE("decoder output is finite for unit-sphere input at initialization") {
  auto cfg = small_config(2, 2, 16);
  auto params = make_atnnfae(cfg, LengthDistribution{});
  Rng rng(5, "dec-finite");
  Tensor z = sample_latent(rng, 3, 16);
  Tensor logits = decode(params, z);
  CHECK(logits.all_finite());
  CHECK(logits.length() == 12);
}

TEST_CASE("corrupt renormalizes and is the identity at sigma zero") {
  Rng rng(7, "corrupt");
  Tensor f = sample_latent(rng, 4, 8);

  Rng noise_rng(8, "noise");
  Tensor same = corrupt(f, 0.0, noise_rng);
  for (std::size_t i = 0; i < f.numel(); ++i)
    CHECK(same.values()[i] == Catch::Approx(f.values()[i]).margin(1e-15));

  for (double sigma : {0.01, 0.1, 0.5, 2.0}) {
    Tensor noisy = corrupt(f, sigma, noise_rng);
    for (int l = 0; l < noisy.length(); ++l)
      CHECK(std::abs(column_norm(noisy, l) - 1.0) < 1e-9);
  }
}

TEST_CASE("mean angular deviation grows monotonically with sigma") {
  Rng rng(9, "corrupt-mono");
  Tensor f = sample_latent(rng, 1, 8);
  double prev = -1.0;
  for (double sigma : {0.01, 0.1, 0.5}) {
    Rng noise_rng(10, "noise-mc");
    double total = 0;
    const int draws = 1000;
    for (int i = 0; i < draws; ++i) {
      Tensor noisy = corrupt(f, sigma, noise_rng);
      double dot = 0;
      for (int c = 0; c < 8; ++c) dot += noisy.at(c, 0) * f.at(c, 0);
      total += std::acos(std::clamp(dot, -1.0, 1.0));
    }
    double mean = total / draws;
    CHECK(mean > prev);
    prev = mean;
  }
}

TEST_CASE("sample_latent columns are unit, centered, reproducible") {
  Rng rng(11, "latent");
  const int dim = 16;
  std::vector<double> mean(dim, 0.0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    Tensor z = sample_latent(rng, 1, dim);
    REQUIRE(std::abs(column_norm(z, 0) - 1.0) < 1e-12);
    for (int c = 0; c < dim; ++c) mean[c] += z.at(c, 0);
  }
  for (int c = 0; c < dim; ++c)
    CHECK(std::abs(mean[c] / draws) < 3.0 / std::sqrt(double(draws)));

  Rng a(12, "latent"), b(12, "latent");
  Tensor za = sample_latent(a, 3, dim), zb = sample_latent(b, 3, dim);
  CHECK(za.values() == zb.values());
}

TEST_CASE("untrained reconstruction loss is near ln 256") {
  auto cfg = small_config(1, 2, 16);
  auto params = make_atnnfae(cfg, LengthDistribution{});
  Rng rng(13, "loss");
  ByteSample y = testutil::bytes("the cat sat on the mat");
  double loss = loss_nnfae(params, y, cfg.sigma, rng);
  CHECK(std::abs(loss - std::log(256.0)) < 0.5);
}

TEST_CASE("nnfae loss is invariant to padding beyond the sample") {
  // two copies of the same bytes at different padded spans must give the
  // same masked loss
  auto cfg = small_config(1, 2, 8);
  auto params = make_atnnfae(cfg, LengthDistribution{});
  ByteSample y = testutil::bytes("abcde");  // pads 5 -> 8

  auto padded_loss = [&](std::size_t padded_len) {
    PaddedSample p;
    p.bytes = ByteSample(y);
    p.bytes.resize(padded_len, 0);
    p.original_len = y.size();
    Tape t;
    auto enc_b = bind_constants(t, params.enc);
    auto dec_b = bind_constants(t, params.dec);
    Tape::Id feat = encoder_forward(t, enc_b, t.constant(one_hot(p)),
                                    cfg.groups, cfg.residual);
    Tape::Id logits = decoder_forward(t, dec_b, feat, cfg.groups, cfg.residual);
    return t
        .value(t.softmax_cross_entropy(logits, one_hot(p), supervision_mask(p)))
        .item();
  };
  // same content, one extra padding group: loss changes only through the
  // encoder seeing more zero columns; the mask itself covers s+1 positions
  // in both cases. At init the network is near-constant, so the two losses
  // agree tightly.
  CHECK(std::abs(padded_loss(8) - padded_loss(12)) < 1e-6);
}

TEST_CASE("discriminator scalar is finite at init for both input kinds") {
  auto cfg = small_config(1, 2, 8);
  auto params = make_atnnfae(cfg, LengthDistribution{});
  ByteSample y = testutil::bytes("hello world!");
  Tensor ae_logits = decode(params, encode(params, y));
  CHECK(std::isfinite(discriminate(params, ae_logits)));
  Rng rng(14, "disc");
  Tensor z = sample_latent(rng, 2, 8);
  CHECK(std::isfinite(discriminate(params, decode(params, z))));
}

TEST_CASE("hinge losses combine as specified at clamped d outputs") {
  // with |d| large against m = 0.001: d(AE)=+1, d(gen)=-1 gives L_d = 0 and
  // L_g = max(0, m - (-1)) = 1.001
  const double m = 0.001;
  CHECK(std::max(0.0, m - 1.0) + std::max(0.0, m + (-1.0)) == 0.0);
  CHECK(std::max(0.0, m - (-1.0)) == Catch::Approx(1.001));
}

TEST_CASE("objective steps touch exactly their own parameter sets") {
  auto cfg = small_config(1, 2, 8);
  auto corpus = tiny_corpus(21, 8, 24);
  auto params = make_atnnfae(cfg, LengthDistribution(corpus));
  Rng noise(15, "sep");
  Rng latent(16, "sep");
  const ByteSample& y = corpus.samples[0];

  auto h_enc = [&] { return params_hash(params.encoder_params()); };
  auto h_dec = [&] { return params_hash(params.generator_params()); };
  auto h_disc = [&] { return params_hash(params.discriminator_params()); };

  SECTION("nnfae step changes f and g, never d") {
    auto e0 = h_enc(), d0 = h_dec(), c0 = h_disc();
    nnfae_step(params, y, 0.001, noise);
    CHECK(h_enc() != e0);
    CHECK(h_dec() != d0);
    CHECK(h_disc() == c0);
  }

  SECTION("discriminator step changes d, never f or g") {
    Tensor eta = gaussian_noise(noise, {8, 6}, cfg.sigma);
    Tensor z = sample_latent(latent, 6, 8);
    auto e0 = h_enc(), d0 = h_dec(), c0 = h_disc();
    discriminator_step(params, y, eta, z, 0.001);
    CHECK(h_enc() == e0);
    CHECK(h_dec() == d0);
    CHECK(h_disc() != c0);
  }

  SECTION("generator step changes g, never f or d") {
    // push the discriminator away from the flat hinge region first so the
    // generator gradient is nonzero
    Tensor z = sample_latent(latent, 6, 8);
    for (int i = 0; i < 50; ++i) {
      Tensor eta = gaussian_noise(noise, {8, 6}, cfg.sigma);
      discriminator_step(params, y, eta, sample_latent(latent, 6, 8), 0.01);
    }
    auto e0 = h_enc(), c0 = h_disc();
    double lg = loss_g(params, z, cfg.margin);
    generator_step(params, z, 0.001);
    CHECK(h_enc() == e0);
    CHECK(h_disc() == c0);
    if (lg > 0 && lg > cfg.margin) {  // not in the flat region
      CHECK(params_hash(params.generator_params()) != 0);
    }
  }
}

TEST_CASE("decoder and generator are literally the same parameters") {
  auto cfg = small_config(1, 2, 8);
  auto params = make_atnnfae(cfg, LengthDistribution{});
  auto gen = params.generator_params();
  auto ae = params.autoencoder_params();
  // the generator set is exactly the tail of the autoencoder set
  REQUIRE(ae.size() > gen.size());
  for (std::size_t i = 0; i < gen.size(); ++i)
    CHECK(gen[i] == ae[ae.size() - gen.size() + i]);
}

TEST_CASE("training is deterministic given config and seed") {
  auto cfg = small_config(1, 2, 8);
  cfg.steps = 30;
  cfg.adversarial = true;
  cfg.sigma = 0.05;
  auto corpus = tiny_corpus(22, 8, 24);

  auto run = [&] {
    auto params = make_atnnfae(cfg, LengthDistribution(corpus));
    TrainControl ctrl;
    ctrl.eval_every = 10;
    ctrl.log_every = 10;
    auto result = train(params, corpus, ctrl);
    return std::pair(params_hash(params.all_params()), result.log);
  };
  auto [h1, log1] = run();
  auto [h2, log2] = run();
  CHECK(h1 == h2);
  REQUIRE(log1.size() == log2.size());
  for (std::size_t i = 0; i < log1.size(); ++i) {
    CHECK(log1[i].step == log2[i].step);
    CHECK(log1[i].objective == log2[i].objective);
    CHECK(log1[i].loss == log2[i].loss);
    CHECK(log1[i].error == log2[i].error);
  }
}

TEST_CASE("divergence raises a data error") {
#ifdef NDEBUG
  auto cfg = small_config(1, 2, 8);
  cfg.steps = 50;
  cfg.lr = 1e28;  // guaranteed overflow
  cfg.adversarial = false;
  auto corpus = tiny_corpus(23, 4, 16);
  auto params = make_atnnfae(cfg, LengthDistribution(corpus));
  CHECK_THROWS_AS(train(params, corpus), DataError);
#endif
}

TEST_CASE("untrained reconstruction error is near the uniform-argmax rate") {
  auto cfg = small_config(1, 2, 32);
  auto corpus = tiny_corpus(24, 32, 30);
  auto params = make_atnnfae(cfg, LengthDistribution(corpus));
  double err = reconstruction_error(params, corpus, 0.0, 99);
  CHECK(std::abs(err - 255.0 / 256.0) < 0.02);
}

TEST_CASE("reconstruction error is thread-count invariant") {
  auto cfg = small_config(1, 2, 8);
  auto corpus = tiny_corpus(25, 12, 20);
  auto params = make_atnnfae(cfg, LengthDistribution(corpus));
  double e1 = reconstruction_error(params, corpus, 0.1, 42, 1);
  double e4 = reconstruction_error(params, corpus, 0.1, 42, 4);
  CHECK(e1 == e4);
}

TEST_CASE("generate_text is seeded, bounded, and thread-invariant") {
  auto cfg = small_config(1, 2, 8);
  auto corpus = tiny_corpus(26, 10, 24);
  auto params = make_atnnfae(cfg, LengthDistribution(corpus));
  auto a = generate_text(params, 77, 20, 1);
  auto b = generate_text(params, 77, 20, 4);
  REQUIRE(a.size() == 20);
  CHECK(a == b);
  const std::size_t max_padded =
      cfg.pad_factor() *
      ((corpus.samples[0].size() | 31) / cfg.pad_factor() + 1);
  for (const auto& s : a) {
    CHECK(s.size() <= max_padded);
    CHECK(std::find(s.begin(), s.end(), 0) == s.end());
  }
  auto c = generate_text(params, 78, 20, 1);
  CHECK(a != c);
}

TEST_CASE("argmax ties break toward the smaller byte value") {
  Tensor logits = Tensor::zeros({4, 2});
  logits.at(1, 0) = 3.0;
  logits.at(2, 0) = 3.0;  // tie between 1 and 2 -> 1
  auto bytes = argmax_bytes(logits);
  CHECK(bytes[0] == 1);
  CHECK(bytes[1] == 0);  // all-equal column -> byte 0
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  testutil::TempDir dir;
  auto cfg = small_config(2, 2, 8);
  cfg.sigma = 0.123;
  cfg.margin = 0.002;
  cfg.reuse_nnfae_noise = true;
  auto corpus = tiny_corpus(27, 6, 20);
  auto params = make_atnnfae(cfg, LengthDistribution(corpus));
  // perturb away from init so the file is not trivially reproducible
  Rng noise(17, "ckpt");
  nnfae_step(params, corpus.samples[0], 0.01, noise);

  auto path = dir.file("m.ckpt");
  save_checkpoint(params, path);
  auto loaded = load_checkpoint(path);

  CHECK(loaded.cfg.k == cfg.k);
  CHECK(loaded.cfg.groups == cfg.groups);
  CHECK(loaded.cfg.sigma == cfg.sigma);
  CHECK(loaded.cfg.margin == cfg.margin);
  CHECK(loaded.cfg.reuse_nnfae_noise == cfg.reuse_nnfae_noise);
  CHECK(loaded.cfg.residual == cfg.residual);
  CHECK(params_hash(loaded.all_params()) == params_hash(params.all_params()));
  CHECK(loaded.length_dist.total() == params.length_dist.total());

  // identical generation behaviour
  CHECK(generate_text(loaded, 5, 8) == generate_text(params, 5, 8));

  // saving the loaded model reproduces the file byte for byte
  auto path2 = dir.file("m2.ckpt");
  save_checkpoint(loaded, path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string c1((std::istreambuf_iterator<char>(f1)), {});
  std::string c2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(c1 == c2);
}

TEST_CASE("interpolation endpoints reproduce the two reconstructions") {
  auto cfg = small_config(1, 2, 16);
  auto params = make_atnnfae(cfg, LengthDistribution{});
  ByteSample a = testutil::bytes("first sample text");
  ByteSample b = testutil::bytes("second one");

  // direct reconstructions at the common padded span
  const std::size_t common = std::max(a.size(), b.size());
  const std::size_t padded = 4 * ((common + 3) / 4);
  auto recon = [&](const ByteSample& y) {
    PaddedSample p;
    p.bytes = y;
    p.bytes.resize(padded, 0);
    p.original_len = y.size();
    Tape t;
    auto enc_b = bind_constants(t, params.enc);
    auto dec_b = bind_constants(t, params.dec);
    Tape::Id feat = encoder_forward(t, enc_b, t.constant(one_hot(p)),
                                    cfg.groups, cfg.residual);
    Tensor logits =
        t.value(decoder_forward(t, dec_b, feat, cfg.groups, cfg.residual));
    return truncate_at_nul(argmax_bytes(logits));
  };

  auto steps2 = interpolate(params, a, b, 2);
  REQUIRE(steps2.size() == 2);
  CHECK(steps2[0] == recon(a));
  CHECK(steps2[1] == recon(b));

  auto steps5 = interpolate(params, a, b, 5);
  REQUIRE(steps5.size() == 5);
  CHECK(steps5.front() == steps2[0]);
  CHECK(steps5.back() == steps2[1]);
}

TEST_CASE("gradcheck suite passes on a reduced instance count") {
  auto rows = run_gradcheck_suite(4242, 3);
  REQUIRE(rows.size() == 11);
  for (const auto& row : rows) {
    INFO(row.name << " max_rel_err=" << row.max_rel_err);
    CHECK(row.pass);
  }
}
