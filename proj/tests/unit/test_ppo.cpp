#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "srblab/error.hpp"
#include "srblab/ppo.hpp"
#include "test_util.hpp"

using namespace srblab;

namespace {

MLP random_net(std::mt19937_64& rng, int in, std::vector<int> hidden, int out) {
  MLP m(in, hidden, out);
  m.initialize(rng, 1.0);
  VecX p = m.params();
  std::normal_distribution<double> n(0.0, 0.3);
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] += n(rng);
  m.set_params(p);
  return m;
}

// Central-difference gradient of sum_i <dY_i, f(x_i)>.
VecX fd_gradient(MLP m, const MatX& X, const MatX& dY, double h = 1e-6) {
  const VecX p0 = m.params();
  VecX g(p0.size());
  for (Eigen::Index k = 0; k < p0.size(); ++k) {
    VecX p = p0;
    p[k] += h;
    m.set_params(p);
    const double fp = (m.forward_batch(X).array() * dY.array()).sum();
    p[k] -= 2 * h;
    m.set_params(p);
    const double fm = (m.forward_batch(X).array() * dY.array()).sum();
    g[k] = (fp - fm) / (2 * h);
  }
  return g;
}

}  // namespace

TEST_CASE("mlp forward") {
  MLP z(3, {4, 4}, 2);
  CHECK(z.forward(Vec3(1, -2, 3)).norm() == 0.0);

  MLP m(1, {1, 1}, 1);
  m.layers()[0].W(0, 0) = 0.5;
  m.layers()[0].b[0] = 0.1;
  m.layers()[1].W(0, 0) = -2.0;
  m.layers()[2].W(0, 0) = 3.0;
  m.layers()[2].b[0] = 0.25;
  VecX x(1);
  x << 0.7;
  CHECK(m.forward(x)[0] == doctest::Approx(3.0 * std::tanh(-2.0 * std::tanh(0.5 * 0.7 + 0.1)) + 0.25).epsilon(1e-14));

  std::mt19937_64 rng(1);
  const MLP r = random_net(rng, 5, {64, 64}, 3);
  double lip = 1.0;
  for (const auto& L : r.layers()) lip *= Eigen::JacobiSVD<MatX>(L.W).singularValues()[0];
  for (int t = 0; t < 100; ++t) {
    const VecX a = VecX::Random(5), b = VecX::Random(5);
    CHECK((r.forward(a) - r.forward(b)).norm() <= lip * (a - b).norm() + 1e-12);
  }
  MatX X = MatX::Random(5, 7);
  const MatX Y = r.forward_batch(X);
  for (int i = 0; i < 7; ++i) CHECK((Y.col(i) - r.forward(VecX(X.col(i)))).norm() < 1e-12);
  CHECK_THROWS_AS(r.forward(VecX::Zero(4)), Error);
}

TEST_CASE("mlp backward matches finite differences") {
  std::mt19937_64 rng(7);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const MLP m = random_net(rng, 4, {6, 5}, 3);
    const MatX X = MatX::Random(4, 3), dY = MatX::Random(3, 3);
    MLP::Cache c;
    m.forward_batch(X, c);
    const VecX g = m.backward(c, dY);
    const VecX fd = fd_gradient(m, X, dY);
    worst = std::max(worst, (g - fd).norm() / std::max(fd.norm(), 1e-12));
  }
  CHECK(worst < 1e-5);

  const MLP m = random_net(rng, 4, {6, 5}, 3);
  const MatX X = MatX::Random(4, 5);
  MLP::Cache c;
  m.forward_batch(X, c);
  CHECK(m.backward(c, MatX::Zero(3, 5)).norm() == 0.0);

  // Batch gradient is the sum of per-sample gradients.
  const MatX dY = MatX::Random(3, 5);
  const VecX gb = m.backward(c, dY);
  VecX gs = VecX::Zero(gb.size());
  for (int i = 0; i < 5; ++i) {
    MLP::Cache ci;
    m.forward_batch(X.col(i), ci);
    gs += m.backward(ci, dY.col(i));
  }
  CHECK((gb - gs).norm() < 1e-12 * std::max(1.0, gb.norm()));

  MatX dX;
  m.backward(c, dY, &dX);
  const double h = 1e-6;
  MatX Xp = X;
  Xp(2, 1) += h;
  MatX Xm = X;
  Xm(2, 1) -= h;
  const double fd = ((m.forward_batch(Xp) - m.forward_batch(Xm)).array() * dY.array()).sum() / (2 * h);
  CHECK(dX(2, 1) == doctest::Approx(fd).epsilon(1e-6));
}

TEST_CASE("gaussian log probability") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    const VecX mu = VecX::Random(4), ls = 0.5 * VecX::Random(4), a = VecX::Random(4);
    double oracle = 0.0;
    for (int i = 0; i < 4; ++i) {
      const double s = std::exp(ls[i]);
      oracle += std::log(std::exp(-0.5 * std::pow((a[i] - mu[i]) / s, 2)) / (s * std::sqrt(2 * M_PI)));
    }
    CHECK(std::abs(gaussian_log_prob(mu, ls, a) - oracle) < 1e-10);
  }
}

TEST_CASE("gae") {
  VecX r(4), v(5);
  r << 1, 2, 3, 4;
  v << 0.5, -1, 2, 0.3, 0.7;
  const std::vector<bool> none(4, false);
  const GAEResult td = gae(r, v, none, 0.9, 0.0);
  for (int t = 0; t < 4; ++t) CHECK(td.advantages[t] == doctest::Approx(r[t] + 0.9 * v[t + 1] - v[t]));

  const GAEResult mc = gae(r, VecX::Zero(5), std::vector<bool>{false, false, false, true}, 1.0, 1.0);
  CHECK(mc.returns[0] == doctest::Approx(10));
  CHECK(mc.returns[2] == doctest::Approx(7));

  // Brute-force sum of discounted TD residuals inside each episode.
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 30;
    const VecX rr = VecX::Random(n), vv = VecX::Random(n + 1);
    std::vector<bool> done(n);
    for (int t = 0; t < n; ++t) done[t] = srblab::testing::uniform(rng, 0, 1) < 0.15;
    const double g = 0.97, l = 0.8;
    const GAEResult res = gae(rr, vv, done, g, l);
    for (int t = 0; t < n; ++t) {
      double sum = 0.0, w = 1.0;
      for (int k = t; k < n; ++k) {
        const double delta = rr[k] + (done[k] ? 0.0 : g * vv[k + 1]) - vv[k];
        sum += w * delta;
        if (done[k]) break;
        w *= g * l;
      }
      CHECK(res.advantages[t] == doctest::Approx(sum).epsilon(1e-12));
    }
  }
}

TEST_CASE("clipped surrogate") {
  double d = 0.0;
  CHECK(clipped_surrogate(1.5, 2.0, 0.2, &d) == doctest::Approx(2.4));
  CHECK(d == 0.0);
  CHECK(clipped_surrogate(0.5, 2.0, 0.2, &d) == doctest::Approx(1.0));
  CHECK(d == doctest::Approx(1.0));
  CHECK(clipped_surrogate(0.5, -2.0, 0.2, &d) == doctest::Approx(-1.6));
  CHECK(d == 0.0);
  CHECK(clipped_surrogate(1.0, 3.0, 0.2, &d) == 3.0);
  CHECK(d == 3.0);
  CHECK(clipped_surrogate(1.0, 3.0, 0.0, &d) == 3.0);
  CHECK(d == 0.0);
}

TEST_CASE("ppo update edge cases") {
  std::mt19937_64 rng(5);
  PPOLearner L;
  L.policy.mean = random_net(rng, 6, {8, 8}, 2);
  L.policy.log_std = VecX::Constant(2, -0.5);
  L.value = random_net(rng, 6, {8, 8}, 1);
  RolloutBatch b;
  const int n = 64;
  b.obs = MatX::Random(6, n);
  b.actions = MatX::Random(2, n);
  b.log_probs.resize(n);
  for (int i = 0; i < n; ++i) b.log_probs[i] = L.policy.log_prob(b.obs.col(i), b.actions.col(i));
  b.returns = VecX::Random(n);
  PPOConfig c;
  c.minibatch = 16;
  c.epochs = 3;

  b.advantages = VecX::Zero(n);
  const VecX p0 = L.policy.params();
  ppo_update(b, L, c, rng);
  CHECK((L.policy.params() - p0).norm() == 0.0);

  b.advantages = VecX::Random(n);
  PPOConfig c0 = c;
  c0.clip = 0.0;
  ppo_update(b, L, c0, rng);
  CHECK((L.policy.params() - p0).norm() == 0.0);

  const UpdateStats s = ppo_update(b, L, c, rng);
  CHECK((L.policy.params() - p0).norm() > 0.0);
  CHECK(std::isfinite(s.kl));
  CHECK(s.clip_fraction >= 0.0);
}

TEST_CASE("running normalizer") {
  const MatX A = MatX::Random(3, 40) * 4.0;
  RunningNormalizer full(3), parts(3);
  full.update(A);
  parts.update(A.leftCols(13));
  parts.update(A.middleCols(13, 20));
  parts.update(A.rightCols(7));
  CHECK((full.mean - parts.mean).norm() < 1e-12);
  CHECK((full.var - parts.var).norm() < 1e-12);
  const VecX z = full.normalize(VecX(A.col(0)));
  CHECK((z - full.normalize_batch(A).col(0)).norm() < 1e-12);
}

TEST_CASE("checkpoint round trip and short deterministic training") {
  auto ref = std::make_shared<ReferenceSRBMotion>(synth_reference(default_synth_params(GaitKind::InPlaceStep)));
  EnvFactory make = [&](std::uint64_t s) { return std::make_unique<Env>(EnvConfig(), ref, s); };
  PPOConfig c;
  c.total_steps = 2048;
  c.epochs = 2;
  const TrainResult a = train(make, c, 9), b = train(make, c, 9);
  REQUIRE(a.curve.size() == 2);
  for (std::size_t i = 0; i < a.curve.size(); ++i) {
    CHECK(a.curve[i].mean_return == b.curve[i].mean_return);
    CHECK(a.curve[i].kl == b.curve[i].kl);
  }
  CHECK(a.checkpoint.policy.params() == b.checkpoint.policy.params());
  CHECK(a.checkpoint.obs_dim() == kObsDim);
  CHECK(a.checkpoint.act_dim() == 10);

  const std::string path = "test_ppo_ckpt.json";
  save_checkpoint(a.checkpoint, path);
  const PolicyCheckpoint r = load_checkpoint(path);
  CHECK(r.policy.params() == a.checkpoint.policy.params());
  CHECK(r.value.params() == a.checkpoint.value.params());
  CHECK(r.obs_norm.mean == a.checkpoint.obs_norm.mean);
  CHECK(r.obs_norm.var == a.checkpoint.obs_norm.var);
  CHECK(r.steps == 2048);

  // Resumed training continues the step count.
  c.total_steps = 3072;
  const TrainResult cont = train(make, c, 10, &r);
  REQUIRE(!cont.curve.empty());
  CHECK(cont.curve.front().step == 3072);
  std::remove(path.c_str());
}

TEST_CASE("ppo config parsing") {
  const PPOConfig c = parse_ppo_config(R"({"total_steps": 1000000, "minibatch": 128, "stop_cap": 20})");
  CHECK(c.total_steps == 1000000);
  CHECK(c.minibatch == 128);
  CHECK(c.stop_cap == 20.0);
  CHECK_THROWS_AS(parse_ppo_config(R"({"minibatch": 300})"), Error);
  CHECK_THROWS_AS(parse_ppo_config(R"({"gama": 0.9})"), Error);
}
