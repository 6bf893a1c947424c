#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "gradcheck.hpp"
#include "skel3d/core/error.hpp"
#include "skel3d/core/rng.hpp"
#include "skel3d/nn/ops.hpp"
#include "skel3d/unet/unet.hpp"

using namespace skel3d;
using namespace skel3d::unet;
using skel3d::nn::Var;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal() * scale;
  return t;
}

void randomize(nn::ParameterStore& p, std::uint64_t seed, double scale, bool modulation_only = false) {
  Rng rng(seed);
  for (const auto& [name, cv] : p.entries()) {
    if (modulation_only && !UNet::is_modulation_parameter(name)) continue;
    Var v = cv;
    for (double& x : v.mutable_value().values()) x = rng.normal() * scale;
  }
}

UNetConfig micro_config(Mode mode) {
  UNetConfig c;
  c.mode = mode;
  c.latent_channels = 2;
  c.skeleton_channels = 2;
  c.global_dim = 2;
  c.global_tokens = 2;
  c.base_channels = 2;
  c.channel_mult = {1, 1};
  c.groups = 2;
  c.mlp_hidden_mult = 1;
  c.seed = 3;
  return c;
}

UNetConfig small_config(Mode mode) {
  UNetConfig c;
  c.mode = mode;
  c.base_channels = 16;
  c.channel_mult = {1, 2, 2};
  c.global_dim = 32;
  c.groups = 4;
  c.mlp_hidden_mult = 2;
  return c;
}

CameraPose cam(double az, double el) {
  CameraPose p;
  p.azimuth = az;
  p.elevation = el;
  return p;
}

diffusion::Conditioning make_cond(const UNetConfig& c, int n, int h, int w, std::uint64_t seed, int skel_factor = 1) {
  diffusion::Conditioning cond;
  cond.z_src = random_tensor({n, c.latent_channels, h, w}, seed);
  cond.skeleton = random_tensor({n, c.skeleton_channels, h * skel_factor, w * skel_factor}, seed + 1);
  cond.global = random_tensor({n, c.global_dim}, seed + 2);
  for (int i = 0; i < n; ++i) {
    cond.source_cameras.push_back(cam(0.3 * i, 0.1));
    cond.target_cameras.push_back(cam(0.3 * i + 1.0 + 0.2 * i, -0.2));
  }
  return cond;
}

Tensor run(const UNet& net, const Tensor& z, const std::vector<int>& t, const diffusion::Conditioning& cond,
           bool use_prepare = false) {
  nn::NoGradGuard g;
  auto prep = use_prepare ? net.prepare(cond) : nullptr;
  return net.predict(nn::constant(z), t, cond, prep.get()).value();
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("group_normalize matches a scalar-loop oracle") {
  const Tensor x = random_tensor({2, 8, 4, 4}, 7, 3.0);
  const int G = 2;
  const double eps = 1e-5;
  const Tensor y = group_normalize(nn::constant(x), G, eps).value();
  const int cg = 4, plane = 16;
  for (int n = 0; n < 2; ++n) {
    for (int g = 0; g < G; ++g) {
      double s = 0;
      for (int c = g * cg; c < (g + 1) * cg; ++c)
        for (int i = 0; i < plane; ++i) s += x[(n * 8 + c) * plane + i];
      const double mu = s / (cg * plane);
      double v = 0;
      for (int c = g * cg; c < (g + 1) * cg; ++c)
        for (int i = 0; i < plane; ++i) v += std::pow(x[(n * 8 + c) * plane + i] - mu, 2);
      v /= cg * plane;
      double ym = 0, yv = 0;
      for (int c = g * cg; c < (g + 1) * cg; ++c) {
        for (int i = 0; i < plane; ++i) {
          const std::size_t k = (n * 8 + c) * plane + i;
          CHECK(y[k] == doctest::Approx((x[k] - mu) / std::sqrt(v + eps)).epsilon(1e-9));
          ym += y[k];
          yv += y[k] * y[k];
        }
      }
      CHECK(std::abs(ym / (cg * plane)) < 1e-6);
      CHECK(std::abs(yv / (cg * plane) - 1.0) < 1e-4);
    }
  }
  // Constant input → zeros.
  Tensor c({1, 4, 3, 3});
  c.fill(2.5);
  for (double v : group_normalize(nn::constant(c), 2, eps).value().values()) CHECK(std::abs(v) < 1e-12);
  // Already normalized input is (almost) unchanged.
  CHECK(max_abs_diff(group_normalize(nn::constant(y), G, eps).value(), y) < 1e-4);
  // G must divide the channel count.
  CHECK_THROWS_AS(group_normalize(nn::constant(random_tensor({1, 6, 2, 2}, 1)), 4, eps), InputError);
}

TEST_CASE("modulation MLP: zero init, position sharing and the modulation formula") {
  nn::ParameterStore p(9);
  const ModulationMlp mlp = add_modulation_mlp(p, "m", 3, 8, 4);
  const Tensor s = random_tensor({2, 3, 5, 5}, 4);
  {
    auto [g, b] = modulation_mlp(nn::constant(s), mlp);
    CHECK(g.shape() == Shape{2, 4, 5, 5});
    for (double v : g.value().values()) CHECK(v == 0.0);
    for (double v : b.value().values()) CHECK(v == 0.0);
  }
  const Tensor f = random_tensor({2, 4, 5, 5}, 5);
  const Tensor gn = group_normalize(nn::constant(f), 2, 1e-5).value();
  CHECK(max_abs_diff(scn_modulate(nn::constant(f), nn::constant(s), mlp, 2, 1e-5).value(), gn) == 0.0);

  // Forced gamma = 1, beta = 0 through the output bias → exactly 2 * GN(F).
  Var b2 = mlp.b2;
  for (int c = 0; c < 4; ++c) b2.mutable_value()[c] = 1.0;
  {
    const Tensor y = scn_modulate(nn::constant(f), nn::constant(s), mlp, 2, 1e-5).value();
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == 2.0 * gn[i]);
  }

  // Random MLP: elementwise oracle of GN(F)(1 + gamma) + beta, and a literal 1x1 MLP.
  randomize(p, 77, 0.5);
  const Tensor y = scn_modulate(nn::constant(f), nn::constant(s), mlp, 2, 1e-5).value();
  const Tensor& w1 = mlp.w1.value();
  const Tensor& bb1 = mlp.b1.value();
  const Tensor& w2 = mlp.w2.value();
  const Tensor& bb2 = mlp.b2.value();
  for (int n = 0; n < 2; ++n) {
    for (int pix = 0; pix < 25; ++pix) {
      double hid[8];
      for (int k = 0; k < 8; ++k) {
        double a = bb1[k];
        for (int c = 0; c < 3; ++c) a += w1[k * 3 + c] * s[(n * 3 + c) * 25 + pix];
        hid[k] = a / (1.0 + std::exp(-a));
      }
      for (int c = 0; c < 4; ++c) {
        double gamma = bb2[c], beta = bb2[4 + c];
        for (int k = 0; k < 8; ++k) {
          gamma += w2[c * 8 + k] * hid[k];
          beta += w2[(4 + c) * 8 + k] * hid[k];
        }
        const std::size_t i = (n * 4 + c) * 25 + pix;
        CHECK(std::abs(y[i] - (gn[i] * (1.0 + gamma) + beta)) < 1e-6);
      }
    }
  }

  // Spatially constant input → spatially constant (gamma, beta).
  Tensor sc({1, 3, 4, 4});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 16; ++i) sc[c * 16 + i] = 0.3 * (c + 1);
  auto [g, b] = modulation_mlp(nn::constant(sc), mlp);
  for (int c = 0; c < 4; ++c)
    for (int i = 1; i < 16; ++i) {
      CHECK(g.value()[c * 16 + i] == g.value()[c * 16]);
      CHECK(b.value()[c * 16 + i] == b.value()[c * 16]);
    }
  CHECK_THROWS_AS(modulation_mlp(nn::constant(random_tensor({1, 2, 4, 4}, 1)), mlp), InputError);
}

TEST_CASE("ray_map: centre ray, unit directions and the Plucker identity") {
  CameraPose c = cam(0.0, 0.0);  // at (0, 0, 3) looking down -z
  c.height = c.width = 17;
  c.focal = 20;
  const Tensor r = ray_map(c, 9, 9);
  const int centre = 4 * 9 + 4;
  const Vec3 d{r[0 * 81 + centre], r[1 * 81 + centre], r[2 * 81 + centre]};
  const Vec3 m{r[3 * 81 + centre], r[4 * 81 + centre], r[5 * 81 + centre]};
  CHECK(std::abs(d.x) < 1e-12);
  CHECK(std::abs(d.y) < 1e-12);
  CHECK(d.z == doctest::Approx(-1.0));
  const Vec3 expected_m = Vec3{0, 0, 3}.cross(d);
  CHECK((m - expected_m).norm() < 1e-12);

  for (const CameraPose& p : {cam(0.7, 0.3), cam(2.5, -0.4)}) {
    for (const CameraPose* ref : {static_cast<const CameraPose*>(nullptr), static_cast<const CameraPose*>(&c)}) {
      const Tensor q = ray_map(p, 8, 8, ref);
      CHECK(q.shape() == Shape{6, 8, 8});
      for (int i = 0; i < 64; ++i) {
        const Vec3 di{q[i], q[64 + i], q[128 + i]};
        const Vec3 mi{q[192 + i], q[256 + i], q[320 + i]};
        CHECK(std::abs(di.norm() - 1.0) < 1e-12);
        CHECK(std::abs(di.dot(mi)) < 1e-6);
      }
    }
  }
  // Relative rays depend only on the relative pose: a common azimuth offset cancels.
  const Tensor a = ray_map(cam(1.2, 0.2), 6, 6, &c);
  CameraPose c2 = c;
  c2.azimuth += 0.9;
  const Tensor b = ray_map(cam(2.1, 0.2), 6, 6, &c2);
  CHECK(max_abs_diff(a, b) < 1e-12);
  // Expressed in its own frame, a camera sits at the origin: every moment vanishes.
  const Tensor self = ray_map(c, 5, 5, &c);
  for (int i = 3 * 25; i < 6 * 25; ++i) CHECK(std::abs(self[i]) < 1e-12);
}

TEST_CASE("zero-initialized modulation reproduces the baseline exactly") {
  UNet base(small_config(Mode::baseline));
  randomize(base.params(), 31, 0.2);
  const auto cond = make_cond(base.config(), 2, 8, 8, 50);
  const Tensor z = random_tensor({2, 4, 8, 8}, 60);
  const std::vector<int> t{10, 200};
  const Tensor ref = run(base, z, t, cond);
  for (Mode m : {Mode::scn, Mode::rcn, Mode::scn_rcn}) {
    UNet net(small_config(m));
    // Shared (non-modulation) weights copied from the baseline; modulation stays at init.
    for (const auto& [name, v] : base.params().entries()) {
      Var dst = net.params().get(name);
      dst.mutable_value() = v.value();
    }
    CHECK(net.params().scalar_count() > base.params().scalar_count());
    const Tensor out = run(net, z, t, cond);
    CHECK(max_abs_diff(out, ref) == 0.0);
  }
}

TEST_CASE("output shape follows the target latent across a configuration sweep") {
  for (Mode m : {Mode::baseline, Mode::scn, Mode::rcn, Mode::scn_rcn}) {
    for (int h : {8, 16}) {
      for (int n : {1, 3}) {
        UNet net(small_config(m));
        randomize(net.params(), 5, 0.1);
        const auto cond = make_cond(net.config(), n, h, h, 8, h == 8 ? 2 : 1);
        std::vector<int> t(static_cast<std::size_t>(n), 17);
        const Tensor out = run(net, random_tensor({n, 4, h, h}, 2), t, cond);
        CHECK(out.shape() == Shape{n, 4, h, h});
        for (double v : out.values()) CHECK(std::isfinite(v));
      }
    }
  }
}

TEST_CASE("forward is pure, rows are independent, and cached conditioning matches") {
  UNet net(small_config(Mode::scn_rcn));
  randomize(net.params(), 12, 0.2);
  const auto cond = make_cond(net.config(), 3, 8, 8, 90);
  const Tensor z = random_tensor({3, 4, 8, 8}, 91);
  const std::vector<int> t{5, 100, 250};
  const Tensor a = run(net, z, t, cond);
  CHECK(max_abs_diff(a, run(net, z, t, cond)) == 0.0);
  CHECK(max_abs_diff(a, run(net, z, t, cond, true)) == 0.0);

  // Row 1 evaluated alone equals row 1 of the batch.
  diffusion::Conditioning one;
  one.z_src = cond.z_src.slice0(1).reshaped({1, 4, 8, 8});
  const Shape ss = cond.skeleton.slice0(1).shape();
  one.skeleton = cond.skeleton.slice0(1).reshaped({1, ss[0], ss[1], ss[2]});
  one.global = cond.global.slice0(1).reshaped({1, net.config().global_dim});
  one.source_cameras = {cond.source_cameras[1]};
  one.target_cameras = {cond.target_cameras[1]};
  const Tensor single = run(net, z.slice0(1).reshaped({1, 4, 8, 8}), {100}, one);
  CHECK(max_abs_diff(single.slice0(0), a.slice0(1)) < 1e-12);
}

TEST_CASE("skeleton sensitivity: SCN reacts to the skeleton, baseline ignores it") {
  const Tensor z = random_tensor({1, 4, 8, 8}, 3);
  for (Mode m : {Mode::baseline, Mode::scn}) {
    UNet net(small_config(m));
    randomize(net.params(), 14, 0.2);
    auto cond = make_cond(net.config(), 1, 8, 8, 70);
    const Tensor a = run(net, z, {40}, cond);
    cond.skeleton.fill(1.0);
    const Tensor b = run(net, z, {40}, cond);
    if (m == Mode::baseline)
      CHECK(max_abs_diff(a, b) == 0.0);
    else
      CHECK(max_abs_diff(a, b) > 1e-6);
  }
}

TEST_CASE("invalid inputs and configurations are rejected") {
  UNetConfig bad = small_config(Mode::scn);
  bad.groups = 3;
  CHECK_THROWS_AS(UNet{bad}, ConfigError);
  CHECK_THROWS_AS(mode_from_string("film"), ConfigError);
  nlohmann::json j = small_config(Mode::scn);
  CHECK(j.get<UNetConfig>().mode == Mode::scn);
  j["typo"] = 1;
  CHECK_THROWS_AS(j.get<UNetConfig>(), ConfigError);

  UNet net(small_config(Mode::scn_rcn));
  auto cond = make_cond(net.config(), 1, 8, 8, 1);
  const Tensor z = random_tensor({1, 4, 8, 8}, 2);
  auto c2 = cond;
  c2.skeleton = random_tensor({1, 3, 8, 8}, 3);
  CHECK_THROWS_AS(run(net, z, {1}, c2), InputError);
  c2 = cond;
  c2.target_cameras.clear();
  CHECK_THROWS_AS(run(net, z, {1}, c2), InputError);
  c2 = cond;
  c2.z_src = random_tensor({1, 4, 4, 4}, 3);
  CHECK_THROWS_AS(run(net, z, {1}, c2), InputError);
  CHECK_THROWS_AS(run(net, random_tensor({1, 4, 6, 6}, 2), {1}, make_cond(net.config(), 1, 6, 6, 1)), InputError);
}

TEST_CASE("checkpoints round-trip and warm-start from a baseline") {
  const auto dir = std::filesystem::temp_directory_path() / "skel3d_test_unet";
  std::filesystem::create_directories(dir);
  UNet base(small_config(Mode::baseline));
  randomize(base.params(), 21, 0.2);
  ArchiveWriter w;
  base.save_to(w);
  w.write(dir / "base.ckpt", {{"kind", "unet"}});
  const Archive a = Archive::read(dir / "base.ckpt");

  const auto cond = make_cond(base.config(), 1, 8, 8, 4);
  const Tensor z = random_tensor({1, 4, 8, 8}, 5);
  UNet same(small_config(Mode::baseline));
  CHECK(same.load_from(a, false).empty());
  CHECK(max_abs_diff(run(same, z, {9}, cond), run(base, z, {9}, cond)) == 0.0);

  UNet scn(small_config(Mode::scn));
  CHECK_THROWS_AS(scn.load_from(a, false), DataError);
  UNet scn2(small_config(Mode::scn));
  const auto missing = scn2.load_from(a, true);
  CHECK(!missing.empty());
  for (const auto& m : missing) CHECK(UNet::is_modulation_parameter(m));
  CHECK(max_abs_diff(run(scn2, z, {9}, cond), run(base, z, {9}, cond)) == 0.0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("training-loss gradients match central finite differences on a micro model") {
  UNet net(micro_config(Mode::scn_rcn));
  randomize(net.params(), 101, 0.4);
  const std::size_t count = net.params().scalar_count();
  MESSAGE("micro model parameters: " << count);
  CHECK(count <= 5000);
  const diffusion::NoiseSchedule sched = diffusion::make_schedule({});

  diffusion::DiffusionBatch batch;
  batch.z_src = random_tensor({2, 4, 4}, 1);
  for (int j = 0; j < 2; ++j) {
    batch.z_tgt.push_back(random_tensor({2, 4, 4}, 10 + j));
    batch.skeleton.push_back(random_tensor({2, 4, 4}, 20 + j));
    batch.target_cameras.push_back(cam(1.0 + j, 0.2));
    batch.eps.push_back(random_tensor({2, 4, 4}, 30 + j));
  }
  batch.t = {37, 190};
  batch.global = {0.3, -0.7};
  batch.source_camera = cam(0.1, 0.0);

  std::vector<Var> inputs;
  for (const auto& [name, v] : net.params().entries()) inputs.push_back(v);
  const auto res = testing::check_gradients([&] { return diffusion::training_loss(batch, net, sched).loss; }, inputs,
                                            1e-4, 1e-4, 1u << 20);
  CHECK(res.checked == count);
  CHECK_MESSAGE(res.failures == 0, "max rel error " << res.max_rel_error);
}
