// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "lrdm/data_io.hpp"
#include "lrdm/models.hpp"
#include "lrdm/trainer.hpp"
#include "support.hpp"

using namespace lrdm;
using lrdm::test::check_gradients;
using lrdm::test::random_matrix;

TEST_CASE("timestep embedding") {
  const auto e0 = timestep_embedding(0, 32, 1000);
  REQUIRE(e0.size() == 32);
  for (std::size_t k = 0; k < 16; ++k) {
    CHECK(e0[k] == 0.0);
    CHECK(e0[16 + k] == 1.0);
  }
  CHECK_THROWS_AS(timestep_embedding(3, 31, 1000), std::invalid_argument);
  CHECK_THROWS_AS(timestep_embedding(1001, 32, 1000), std::out_of_range);

  // frequencies 10000^(-2k/dim)
  const auto e7 = timestep_embedding(7, 8, 100);
  CHECK(e7[1] == doctest::Approx(std::sin(7.0 * std::pow(10000.0, -2.0 / 8.0))).epsilon(1e-14));
  CHECK(e7[4 + 3] == doctest::Approx(std::cos(7.0 * std::pow(10000.0, -6.0 / 8.0))).epsilon(1e-14));

  const Matrix all = [] {
    std::vector<int> ts(1000);
    for (int t = 1; t <= 1000; ++t) ts[t - 1] = t;
    return timestep_embedding(ts, 32, 1000);
  }();
  double min_dist = 1e300;
  for (std::size_t i = 0; i < all.rows; ++i) {
    for (double v : all.row(i)) {
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
    }
    for (std::size_t j = i + 1; j < all.rows; ++j) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < all.cols; ++k) d2 += std::pow(all(i, k) - all(j, k), 2);
      min_dist = std::min(min_dist, std::sqrt(d2));
    }
  }
  CHECK(min_dist > 0.0);
}

namespace {

DenoiserConfig small_denoiser(std::size_t repr_dim = 0, std::size_t classes = 0) {
  DenoiserConfig c;
  c.data_dim = 2;
  c.hidden = 8;
  c.depth = 2;
  c.embed_dim = 4;
  c.repr_dim = repr_dim;
  c.num_classes = classes;
  c.T = 10;
  return c;
}

}  // namespace

TEST_CASE("denoiser forward contracts") {
  Rng rng(1);
  auto cfg = small_denoiser();
  cfg.zero_init_output = true;
  DenoiserNet net(cfg, rng);
  CHECK(net.input_dim() == 2 + 4);
  const Matrix x = random_matrix(5, 2, 2);
  const std::vector<int> t{1, 2, 3, 4, 10};
  Tape tape(false);
  const Matrix out = net.forward(tape, {tape.constant(x), t}).to_matrix();
  CHECK(out == Matrix(5, 2, 0.0));

  DenoiserNet plain(small_denoiser(), rng);
  Tape t1(false), t2(false);
  CHECK(plain.forward(t1, {t1.constant(x), t}).to_matrix() ==
        plain.forward(t2, {t2.constant(x), t}).to_matrix());

  // conditioning that the net does not expect is an error
  Tape t3(false);
  DenoiserInput bad{t3.constant(x), t, t3.constant(random_matrix(5, 3, 3))};
  CHECK_THROWS_AS(plain.forward(t3, bad), std::invalid_argument);
  const std::vector<int> labels{0, 1, 0, 1, 0};
  CHECK_THROWS_AS(plain.forward(t3, {t3.constant(x), t, std::nullopt, labels}), std::invalid_argument);

  DenoiserNet cond(small_denoiser(3), rng);
  CHECK(cond.input_dim() == 2 + 4 + 3);
  CHECK_THROWS_AS(cond.forward(t3, {t3.constant(x), t}), std::invalid_argument);
}

TEST_CASE("denoiser gradients match finite differences") {
  Rng rng(4);
  DenoiserNet net(small_denoiser(3, 4), rng);
  CHECK(net.param_count() <= 500);
  const Matrix x = random_matrix(4, 2, 5);
  const Matrix r = random_matrix(4, 3, 6);
  const std::vector<int> t{1, 4, 7, 10};
  const std::vector<int> labels{0, 3, 1, 2};
  const auto gc = check_gradients(net.parameters(), [&](Tape& tape) {
    DenoiserInput in{tape.constant(x), t, tape.constant(r), labels};
    return mean(net.forward(tape, in));
  });
  CHECK(gc.max_rel_err < 1e-4);
}

TEST_CASE("dropout") {
  Rng rng(7);
  Tape tape(false);
  auto x = tape.constant(Tensor({100000}, std::vector<double>(100000, 1.0)));
  CHECK(dropout(tape, x, 0.0, rng).node() == x.node());
  const auto y = dropout(tape, x, 0.2, rng);
  double m = 0.0;
  for (double v : y.values()) m += v;
  m /= 100000.0;
  CHECK(std::abs(m - 1.0) < 0.02);

  // dropout only in train mode
  auto cfg = small_denoiser();
  cfg.dropout = 0.5;
  DenoiserNet net(cfg, rng);
  const Matrix xs = random_matrix(3, 2, 8);
  const std::vector<int> t{1, 2, 3};
  Tape a(false), b(false), c(false);
  CHECK(net.forward(a, {a.constant(xs), t}).to_matrix() == net.forward(b, {b.constant(xs), t}).to_matrix());
  Rng drop(1);
  CHECK(net.forward(c, {c.constant(xs), t}, true, &drop).to_matrix() !=
        net.forward(a, {a.constant(xs), t}).to_matrix());
}

TEST_CASE("forward passes stay finite for large inputs at initialization") {
  Rng rng(9);
  DenoiserConfig cfg;  // default 3 x 128
  cfg.repr_dim = 8;
  DenoiserNet net(cfg, rng);
  EncoderConfig ecfg;
  ecfg.zero_init_heads = false;
  ReprEncoder enc(ecfg, rng);
  Matrix x = random_matrix(64, 2, 10, -1.0, 1.0);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double n = std::hypot(x(i, 0), x(i, 1));
    x(i, 0) *= 100.0 / n;
    x(i, 1) *= 100.0 / n;
  }
  std::vector<int> t(64);
  for (int i = 0; i < 64; ++i) t[i] = 1 + i;
  Tape tape(false);
  const auto h = enc.encode(tape, tape.constant(x));
  const Var out = net.forward(tape, {tape.constant(x), t, h.mu});
  for (double v : out.values()) CHECK(std::isfinite(v));
  for (double v : h.logvar.values()) CHECK(std::isfinite(v));
}

TEST_CASE("representation encoder") {
  Rng rng(11);
  EncoderConfig cfg;
  cfg.hidden = 8;
  cfg.depth = 1;
  cfg.repr_dim = 3;
  cfg.embed_dim = 4;
  cfg.T = 10;
  cfg.num_classes = 2;
  cfg.timestep_conditional = true;
  cfg.zero_init_heads = false;
  ReprEncoder enc(cfg, rng);
  const Matrix z = random_matrix(4, 2, 12);
  const std::vector<int> t{1, 2, 9, 10};
  const std::vector<int> labels{0, 1, 1, 0};

  Tape a(false), b(false);
  const auto ha = enc.encode(a, a.constant(z), t, labels);
  const auto hb = enc.encode(b, b.constant(z), t, labels);
  CHECK(ha.mu.to_matrix() == hb.mu.to_matrix());
  CHECK(ha.logvar.to_matrix() == hb.logvar.to_matrix());
  CHECK(ha.mu.shape() == Shape{4, 3});
  CHECK(ha.logvar.shape() == Shape{4, 3});

  // a different t changes the posterior mean
  const std::vector<int> t2{5, 5, 5, 5};
  Tape c(false);
  CHECK(enc.encode(c, c.constant(z), t2, labels).mu.to_matrix() != ha.mu.to_matrix());

  CHECK_THROWS_AS(enc.encode(c, c.constant(z), {}, labels), std::invalid_argument);
  CHECK_THROWS_AS(enc.encode(c, c.constant(z), t), std::invalid_argument);

  const auto gc = check_gradients(enc.parameters(), [&](Tape& tape) {
    const auto h = enc.encode(tape, tape.constant(z), t, labels);
    return mean(h.mu) + mean(square(h.logvar));
  });
  CHECK(enc.param_count() <= 500);
  CHECK(gc.max_rel_err < 1e-4);

  // zero-initialized heads give the prior
  EncoderConfig zcfg = cfg;
  zcfg.zero_init_heads = true;
  ReprEncoder zero(zcfg, rng);
  Tape d(false);
  const auto hz = zero.encode(d, d.constant(z), t, labels);
  for (double v : hz.mu.values()) CHECK(v == 0.0);
  for (double v : hz.logvar.values()) CHECK(v == 0.0);
}

TEST_CASE("reparameterize") {
  Tape tape;
  auto mu = tape.constant(Tensor({3}, {0.5, -1.0, 2.0}));
  auto lv = tape.constant(Tensor({3}, {0.0, 0.0, 0.0}));
  auto zero = tape.constant(Tensor({3}, {0.0, 0.0, 0.0}));
  auto n = tape.constant(Tensor({3}, {1.0, 2.0, -3.0}));
  CHECK(reparameterize(mu, lv, zero).to_matrix() == mu.to_matrix());
  const auto r = reparameterize(mu, lv, n);
  CHECK(r.values()[0] == 1.5);
  CHECK(r.values()[1] == 1.0);
  CHECK(r.values()[2] == -1.0);

  // variance of draws equals exp(logvar)
  Rng rng(13);
  const double logvar = -0.7;
  std::vector<double> noise(100000);
  rng.fill_normal(noise);
  Tape t2(false);
  const std::size_t N = noise.size();
  const auto draws = reparameterize(t2.constant(Tensor({N}, std::vector<double>(N, 0.3))),
                                    t2.constant(Tensor({N}, std::vector<double>(N, logvar))),
                                    t2.constant(Tensor({N}, noise)));
  double m = 0.0, v = 0.0;
  for (double d : draws.values()) m += d;
  m /= static_cast<double>(N);
  for (double d : draws.values()) v += (d - m) * (d - m);
  v /= static_cast<double>(N - 1);
  const double target = std::exp(logvar);
  CHECK(std::abs(v - target) < 4.0 * target * std::sqrt(2.0 / static_cast<double>(N - 1)));

  // gradients reach mu and logvar
  auto pm = make_parameter({2}, {0.1, 0.2});
  auto pl = make_parameter({2}, {-0.3, 0.4});
  const Matrix nz = random_matrix(1, 2, 14);
  const ParamList ps{{"mu", pm}, {"logvar", pl}};
  const auto gc = check_gradients(ps, [&](Tape& t) {
    return sum(square(reparameterize(t.param(pm), t.param(pl), t.constant(Tensor({2}, nz.data)))));
  });
  CHECK(gc.max_rel_err < 1e-4);
  CHECK(gc.nonzero == 4);
}

TEST_CASE("identity first stage is a passthrough") {
  Rng rng(15);
  FirstStage fs(FirstStageConfig{}, rng);
  CHECK(fs.identity());
  const Matrix x = random_matrix(6, 2, 16);
  CHECK(fs.encode(x) == x);
  CHECK(fs.decode(x) == x);
  CHECK(fs.parameters().empty());
}

TEST_CASE("trained toy autoencoder: unit-variance latents and better than the mean predictor") {
  Rng rng(17);
  FirstStageConfig cfg;
  cfg.kind = FirstStageKind::Mlp;
  cfg.latent_dim = 2;
  cfg.hidden = 32;
  FirstStage fs(cfg, rng);
  MixtureSpec spec;
  spec.n = 2048;
  spec.seed = 3;
  const Dataset d = make_mixture(spec);
  FirstStageTrainConfig tc;
  tc.steps = 2000;
  first_stage_train(fs, d.points, tc, 5);
  CHECK(fs.scale() > 0.0);

  const Matrix z = fs.encode(d.points);
  CHECK(z.cols == 2);
  double mean = 0.0, var = 0.0;
  for (double v : z.data) mean += v;
  mean /= static_cast<double>(z.data.size());
  for (double v : z.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(z.data.size() - 1);
  CHECK(var >= 0.8);
  CHECK(var <= 1.25);

  const Matrix rec = fs.decode(z);
  double mse = 0.0, baseline = 0.0;
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) m += d.points(i, c);
    m /= static_cast<double>(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
      mse += std::pow(rec(i, c) - d.points(i, c), 2);
      baseline += std::pow(d.points(i, c) - m, 2);
    }
  }
  CHECK(mse < baseline);
}
