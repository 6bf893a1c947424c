#include <doctest.h>

#include <cmath>

#include "skel3d/core/error.hpp"
#include "skel3d/core/rng.hpp"
#include "skel3d/diffusion/diffusion.hpp"
#include "skel3d/nn/ops.hpp"

using namespace skel3d;
using namespace skel3d::diffusion;
using skel3d::nn::Var;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal() * scale;
  return t;
}

// Predicts a fixed tensor per row chosen by the caller.
struct ConstantModel : NoisePredictor {
  std::function<Tensor(const Var&, std::span<const int>, const Conditioning&)> fn;
  Var predict(const Var& z_t, std::span<const int> t, const Conditioning& cond, const PreparedConditioning*) const override {
    return nn::constant(fn(z_t, t, cond));
  }
};

// Cheating model: recovers eps exactly from z_t and the (known) clean latent.
struct OracleModel : NoisePredictor {
  const NoiseSchedule* sched = nullptr;
  std::vector<Tensor> clean;  // per row
  Var predict(const Var& z_t, std::span<const int> t, const Conditioning&, const PreparedConditioning*) const override {
    Tensor out(z_t.shape());
    const std::size_t per = z_t.value().numel() / t.size();
    for (std::size_t r = 0; r < t.size(); ++r) {
      const double ab = sched->alpha_bar[static_cast<std::size_t>(t[r])];
      for (std::size_t i = 0; i < per; ++i)
        out[r * per + i] = (z_t.value()[r * per + i] - std::sqrt(ab) * clean[r][i]) / std::sqrt(1.0 - ab);
    }
    return nn::constant(out);
  }
};

// Per-row model: eps_hat = a * z_t + b * mean(skeleton) + c * z_src; rows never mix.
struct LinearModel : NoisePredictor {
  Var predict(const Var& z_t, std::span<const int> t, const Conditioning& cond, const PreparedConditioning*) const override {
    Tensor out(z_t.shape());
    const std::size_t per = z_t.value().numel() / t.size();
    const std::size_t sper = cond.skeleton.numel() / t.size();
    for (std::size_t r = 0; r < t.size(); ++r) {
      double sm = 0;
      for (std::size_t i = 0; i < sper; ++i) sm += cond.skeleton[r * sper + i];
      sm /= static_cast<double>(sper);
      for (std::size_t i = 0; i < per; ++i)
        out[r * per + i] = 0.3 * z_t.value()[r * per + i] + 0.5 * sm + 0.1 * cond.z_src[r * per + i] + 1e-3 * t[r];
    }
    return nn::constant(out);
  }
};

DiffusionBatch make_batch(int n, std::uint64_t seed) {
  DiffusionBatch b;
  b.z_src = random_tensor({2, 4, 4}, seed);
  for (int j = 0; j < n; ++j) {
    b.z_tgt.push_back(random_tensor({2, 4, 4}, seed + 10 + j));
    b.skeleton.push_back(random_tensor({2, 4, 4}, seed + 20 + j));
    b.eps.push_back(random_tensor({2, 4, 4}, seed + 30 + j));
    CameraPose c;
    c.azimuth = 0.4 * j;
    b.target_cameras.push_back(c);
    b.t.push_back(17 * (j + 1));
  }
  b.global = {0.1, 0.2, 0.3};
  return b;
}

}  // namespace

TEST_CASE("linear schedule: hand arithmetic, monotonicity and errors") {
  const NoiseSchedule s = make_schedule({2, 0.1, 0.2});
  REQUIRE(s.T == 2);
  CHECK(s.alpha_bar[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(s.alpha_bar[1] == doctest::Approx(0.72).epsilon(1e-15));
  const NoiseSchedule d = make_schedule({});
  CHECK(d.T == 256);
  CHECK(d.alpha_bar[0] >= 0.99);
  for (int t = 1; t < d.T; ++t) {
    CHECK(d.beta[t] > d.beta[t - 1]);
    CHECK(d.alpha_bar[t] < d.alpha_bar[t - 1]);
    CHECK(d.alpha_bar[t] > 0.0);
  }
  CHECK(d.beta.front() == doctest::Approx(1e-4));
  CHECK(d.beta.back() == doctest::Approx(2e-2));
  CHECK_THROWS_AS(make_schedule({10, 0.01, 0.01}), ConfigError);
  CHECK_THROWS_AS(make_schedule({1, 0.01, 0.02}), ConfigError);
  CHECK_THROWS_AS(make_schedule({10, 0.0, 0.02}), ConfigError);
  CHECK_THROWS_AS(make_schedule({10, 0.01, 1.0}), ConfigError);
}

TEST_CASE("q_sample endpoints and Monte Carlo moments") {
  const Tensor z0 = random_tensor({3, 2, 2}, 1);
  const Tensor eps = random_tensor({3, 2, 2}, 2);
  const Tensor a = q_sample(z0, 1.0, eps);
  const Tensor b = q_sample(z0, 0.0, eps);
  for (std::size_t i = 0; i < z0.numel(); ++i) {
    CHECK(a[i] == z0[i]);
    CHECK(b[i] == eps[i]);
  }
  CHECK_THROWS_AS(q_sample(z0, 0.5, Tensor({3, 2, 1})), InputError);

  const NoiseSchedule s = make_schedule({});
  const int t = 120;
  const double ab = s.alpha_bar[t];
  Tensor one({1});
  one[0] = 0.8;
  Rng rng(5);
  const int n = 10000;
  double sum = 0, sq = 0;
  for (int k = 0; k < n; ++k) {
    const double v = q_sample(one, t, standard_normal({1}, rng), s)[0];
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n, var = sq / n - mean * mean;
  const double expected_var = 1.0 - ab;
  CHECK(std::abs(mean - std::sqrt(ab) * 0.8) < 3.0 * std::sqrt(expected_var / n));
  // Var of the sample variance for a Gaussian: 2 sigma^4 / (n - 1).
  CHECK(std::abs(var - expected_var) < 3.0 * std::sqrt(2.0 / (n - 1)) * expected_var);
  CHECK_THROWS_AS(q_sample(one, s.T, Tensor({1}), s), InputError);
}

TEST_CASE("training loss: oracle model, zero model and per-target independence") {
  const NoiseSchedule s = make_schedule({});
  DiffusionBatch b = make_batch(3, 40);
  OracleModel oracle;
  oracle.sched = &s;
  oracle.clean = b.z_tgt;
  CHECK(std::abs(training_loss(b, oracle, s).loss.value()[0]) < 1e-20);

  DiffusionBatch big;
  big.z_src = Tensor({1, 50, 50});
  big.global = {0.0};
  Rng rng(8);
  for (int j = 0; j < 4; ++j) {
    big.z_tgt.push_back(Tensor({1, 50, 50}));
    big.skeleton.push_back(Tensor({1, 50, 50}));
    big.eps.push_back(standard_normal({1, 50, 50}, rng));
    big.target_cameras.emplace_back();
    big.t.push_back(3);
  }
  ConstantModel zero;
  zero.fn = [](const Var& z, std::span<const int>, const Conditioning&) { return Tensor(z.shape()); };
  const double l = training_loss(big, zero, s).loss.value()[0];
  // mean(eps^2) over 10^4 standard-normal draws: SE = sqrt(2 / 10^4).
  CHECK(std::abs(l - 1.0) < 3.0 * std::sqrt(2.0 / 10000));

  LinearModel lin;
  const auto base = training_loss(b, lin, s);
  REQUIRE(base.per_target.size() == 3);
  double avg = 0;
  for (double v : base.per_target) avg += v / 3;
  CHECK(base.loss.value()[0] == doctest::Approx(avg).epsilon(1e-12));
  // Permute targets 1 and 2 (with their skeletons, noise, timesteps and cameras).
  DiffusionBatch p = b;
  for (auto* v : {&p.z_tgt, &p.skeleton, &p.eps}) std::swap((*v)[1], (*v)[2]);
  std::swap(p.t[1], p.t[2]);
  std::swap(p.target_cameras[1], p.target_cameras[2]);
  const auto perm = training_loss(p, lin, s);
  CHECK(perm.per_target[0] == base.per_target[0]);
  CHECK(perm.per_target[1] == base.per_target[2]);
  CHECK(perm.per_target[2] == base.per_target[1]);
  CHECK(std::abs(perm.loss.value()[0] - base.loss.value()[0]) < 1e-12);
  // Replacing target 2's skeleton leaves targets 0 and 1 untouched.
  DiffusionBatch q = b;
  q.skeleton[2] = random_tensor({2, 4, 4}, 999);
  const auto changed = training_loss(q, lin, s);
  CHECK(changed.per_target[0] == base.per_target[0]);
  CHECK(changed.per_target[1] == base.per_target[1]);
  CHECK(changed.per_target[2] != base.per_target[2]);

  DiffusionBatch empty = make_batch(0, 1);
  CHECK_THROWS_AS(training_loss(empty, lin, s), InputError);
  DiffusionBatch bad_t = make_batch(2, 1);
  bad_t.t[0] = s.T;
  CHECK_THROWS_AS(training_loss(bad_t, lin, s), InputError);
}

TEST_CASE("sampling: timesteps, determinism and skeleton-following noise") {
  const NoiseSchedule s = make_schedule({});
  const auto ts = sampling_timesteps(256, 4);
  CHECK(ts == std::vector<int>{192, 128, 64, 0});
  CHECK(sampling_timesteps(256, 256).front() == 255);
  CHECK(sampling_timesteps(256, 256).back() == 0);
  SamplerConfig bad;
  bad.steps = 300;
  CHECK_THROWS_AS(bad.validate(s), ConfigError);
  bad.steps = 10;
  bad.eta = 1.5;
  CHECK_THROWS_AS(bad.validate(s), ConfigError);

  LinearModel lin;
  const Tensor z_src = random_tensor({2, 4, 4}, 3);
  const std::vector<Tensor> skels{random_tensor({2, 4, 4}, 4), random_tensor({2, 4, 4}, 5)};
  const std::vector<double> g{0.1, 0.2, 0.3};
  CameraPose src;
  const std::vector<CameraPose> cams(2);
  SamplerConfig cfg;
  cfg.steps = 20;
  cfg.seed = 77;
  const auto a = sample(lin, z_src, skels, g, src, cams, cfg, s);
  const auto b = sample(lin, z_src, skels, g, src, cams, cfg, s);
  REQUIRE(a.size() == 2);
  for (int j = 0; j < 2; ++j) {
    CHECK(a[j].shape() == Shape{2, 4, 4});
    for (std::size_t i = 0; i < a[j].numel(); ++i) {
      CHECK(a[j][i] == b[j][i]);
      CHECK(std::isfinite(a[j][i]));
    }
  }
  const std::vector<Tensor> swapped{skels[1], skels[0]};
  const auto c = sample(lin, z_src, swapped, g, src, cams, cfg, s);
  for (std::size_t i = 0; i < a[0].numel(); ++i) {
    CHECK(c[0][i] == a[1][i]);
    CHECK(c[1][i] == a[0][i]);
  }
  cfg.seed = 78;
  const auto d = sample(lin, z_src, skels, g, src, cams, cfg, s);
  double diff = 0;
  for (std::size_t i = 0; i < a[0].numel(); ++i) diff += std::abs(d[0][i] - a[0][i]);
  CHECK(diff > 0.0);
  for (SamplerKind k : {SamplerKind::ddpm, SamplerKind::ddim}) {
    cfg.kind = k;
    cfg.eta = 1.0;
    for (const Tensor& z : sample(lin, z_src, skels, g, src, cams, cfg, s))
      for (double v : z.values()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("oracle denoiser recovers the clean latent") {
  // With eps_hat computed from the true clean latent, the deterministic sampler returns it.
  const NoiseSchedule s = make_schedule({});
  const Tensor clean = random_tensor({2, 4, 4}, 12);
  OracleModel oracle;
  oracle.sched = &s;
  oracle.clean = {clean};
  SamplerConfig cfg;
  cfg.steps = 10;
  const std::vector<Tensor> skels{Tensor({2, 4, 4})};
  const std::vector<CameraPose> cams(1);
  const auto out = sample(oracle, Tensor({2, 4, 4}), skels, std::vector<double>{0.0}, CameraPose{}, cams, cfg, s);
  for (std::size_t i = 0; i < clean.numel(); ++i) CHECK(out[0][i] == doctest::Approx(clean[i]).epsilon(1e-9));
}
