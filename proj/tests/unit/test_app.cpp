#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "skel3d/app/commands.hpp"
#include "skel3d/core/archive.hpp"
#include "skel3d/core/error.hpp"
#include "skel3d/core/json_util.hpp"
#include "skel3d/core/rng.hpp"

using namespace skel3d;
using namespace skel3d::app;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config(unet::Mode mode = unet::Mode::scn) {
  ExperimentConfig c;
  c.scenegen.objects = 5;
  c.scenegen.height = c.scenegen.width = 16;
  c.codec.latent_mode = codec::LatentMode::identity;
  c.codec.height = c.codec.width = 16;
  c.codec.global_dim = 8;
  c.unet.mode = mode;
  c.unet.base_channels = 8;
  c.unet.groups = 4;
  c.unet.mlp_hidden_mult = 1;
  c.unet.latent_channels = c.unet.skeleton_channels = 3;
  c.unet.global_dim = 8;
  c.training.epochs = 2;
  c.training.batch_size = 2;
  c.training.accumulation_steps = 2;
  c.training.learning_rate = 1e-3;
  c.training.max_samples = 6;
  c.diffusion.sampler.steps = 4;
  c.evaluation.max_samples = 3;
  c.evaluation.bootstrap_resamples = 50;
  c.validate();
  return c;
}

struct Fixture {
  fs::path root;
  fs::path data, codec;
  Fixture() {
    root = fs::temp_directory_path() / "skel3d_test_app";
    fs::remove_all(root);
    const ExperimentConfig cfg = tiny_config();
    data = root / "data";
    cmd_gen_data(cfg, data);
    cmd_train_codec(cfg, data, root / "codec");
    codec = root / "codec" / "codec.ckpt";
  }
  ~Fixture() { fs::remove_all(root); }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SKEL3D_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

void randomize(nn::ParameterStore& p, std::uint64_t seed) {
  Rng rng(seed);
  for (const auto& [name, cv] : p.entries()) {
    nn::Var v = cv;
    for (double& x : v.mutable_value().values()) x = rng.normal() * 0.2;
  }
}

}  // namespace

TEST_CASE("config: defaults round-trip, unknown keys and inconsistencies are rejected") {
  const ExperimentConfig d;
  d.validate();
  const nlohmann::json j = d;
  CHECK(nlohmann::json(j.get<ExperimentConfig>()) == j);
  for (const char* section : {"scenegen", "codec", "unet", "diffusion", "training", "evaluation"}) CHECK(j.contains(section));
  CHECK(j["training"]["accumulation_steps"] == 2);
  CHECK(j["training"]["learning_rate"] == 1e-4);
  CHECK(j["unet"]["groups"] == 8);

  nlohmann::json bad = j;
  bad["training"]["acumulation"] = 3;
  CHECK_THROWS_AS(bad.get<ExperimentConfig>(), ConfigError);
  bad = j;
  bad["extra_section"] = {};
  CHECK_THROWS_AS(bad.get<ExperimentConfig>(), ConfigError);

  ExperimentConfig c = tiny_config();
  c.codec.height = 32;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.unet.latent_channels = 4;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.training.accumulation_steps = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);

  // A partial file inherits defaults, and unet channel counts follow the codec.
  const fs::path p = fs::temp_directory_path() / "skel3d_partial_config.json";
  write_json_file(p, {{"codec", {{"latent_mode", "identity"}}}, {"training", {{"epochs", 3}}}});
  const ExperimentConfig loaded = load_config(p);
  CHECK(loaded.training.epochs == 3);
  CHECK(loaded.unet.latent_channels == 3);
  CHECK(loaded.unet.skeleton_channels == 3);
  fs::remove(p);
}

TEST_CASE("gradient accumulation over two micro-batches equals one double-size batch") {
  auto& fx = fixture();
  const ExperimentConfig cfg = tiny_config();
  const auto manifest = scenegen::load_manifest(fx.data);
  const codec::Codec codec = codec::Codec::load(fx.codec);
  const auto samples = encode_split(manifest, "train", codec, 4);
  const auto sched = diffusion::make_schedule(cfg.diffusion.schedule);
  unet::UNet net(cfg.unet);
  randomize(net.params(), 5);

  std::vector<diffusion::DiffusionBatch> all;
  for (std::size_t i = 0; i < 4; ++i) all.push_back(make_training_batch(samples[i], sched, 1, 0, i, 0.0));
  auto grads = [&](std::vector<std::vector<diffusion::DiffusionBatch>> micro) {
    net.params().zero_grad();
    const double loss = accumulate_gradients(net, micro, sched);
    std::vector<double> g;
    for (const auto& [name, v] : net.params().entries())
      for (double x : v.grad().values()) g.push_back(x);
    return std::make_pair(loss, g);
  };
  const auto [l1, g1] = grads({all});
  const auto [l2, g2] = grads({{all[0], all[1]}, {all[2], all[3]}});
  CHECK(l1 == doctest::Approx(l2).epsilon(1e-12));
  REQUIRE(g1.size() == g2.size());
  double max_abs = 0, max_diff = 0;
  for (std::size_t i = 0; i < g1.size(); ++i) {
    max_abs = std::max(max_abs, std::abs(g1[i]));
    max_diff = std::max(max_diff, std::abs(g1[i] - g2[i]));
  }
  CHECK(max_abs > 0.0);
  CHECK(max_diff / max_abs < 1e-6);
}

TEST_CASE("resuming reproduces an uninterrupted run exactly") {
  auto& fx = fixture();
  ExperimentConfig cfg = tiny_config();
  cfg.training.epochs = 3;
  cmd_train(cfg, {fx.data, fx.codec, fx.root / "full", {}, false});
  cfg.training.epochs = 2;
  cmd_train(cfg, {fx.data, fx.codec, fx.root / "part", {}, false});
  cfg.training.epochs = 3;
  cmd_train(cfg, {fx.data, fx.codec, fx.root / "part", {}, true});
  CHECK(slurp(fx.root / "full" / "loss.csv") == slurp(fx.root / "part" / "loss.csv"));
  CHECK(slurp(fx.root / "full" / "model.ckpt") == slurp(fx.root / "part" / "model.ckpt"));
  CHECK(fs::exists(fx.root / "part" / "epoch_003.ckpt"));
  CHECK(fs::exists(fx.root / "part" / "metadata.json"));
  // Resume against a different architecture is refused.
  ExperimentConfig other = cfg;
  other.unet.base_channels = 16;
  CHECK_THROWS_AS(cmd_train(other, {fx.data, fx.codec, fx.root / "part", {}, true}), ConfigError);
  CHECK_THROWS_AS(cmd_train(cfg, {fx.data, fx.codec, fx.root / "none", {}, true}), DataError);
}

TEST_CASE("warm start from a baseline checkpoint keeps the baseline's loss at step 0") {
  auto& fx = fixture();
  ExperimentConfig base_cfg = tiny_config(unet::Mode::baseline);
  base_cfg.training.epochs = 1;
  cmd_train(base_cfg, {fx.data, fx.codec, fx.root / "base", {}, false});
  const fs::path base_ckpt = fx.root / "base" / "model.ckpt";

  const auto manifest = scenegen::load_manifest(fx.data);
  const codec::Codec codec = codec::Codec::load(fx.codec);
  const auto samples = encode_split(manifest, "train", codec, 2);
  const auto sched = diffusion::make_schedule(base_cfg.diffusion.schedule);
  const std::vector<diffusion::DiffusionBatch> batch{make_training_batch(samples[0], sched, 3, 0, 0, 0.0),
                                                     make_training_batch(samples[1], sched, 3, 0, 1, 0.0)};
  const unet::UNet base = load_denoiser(base_ckpt);
  for (unet::Mode m : {unet::Mode::scn, unet::Mode::rcn, unet::Mode::scn_rcn}) {
    unet::UNet net(tiny_config(m).unet);
    const auto missing = net.load_from(Archive::read(base_ckpt), true);
    CHECK(!missing.empty());
    CHECK(diffusion::training_loss(batch, net, sched).loss.value()[0] ==
          diffusion::training_loss(batch, base, sched).loss.value()[0]);
  }
  ExperimentConfig scn_cfg = tiny_config(unet::Mode::scn);
  scn_cfg.training.epochs = 1;
  const auto s = cmd_train(scn_cfg, {fx.data, fx.codec, fx.root / "warm", base_ckpt, false});
  CHECK(s.steps > 0);
  // The reverse direction (modulation weights into a baseline) is incompatible.
  CHECK_THROWS_AS(cmd_train(base_cfg, {fx.data, fx.codec, fx.root / "bad", fx.root / "warm" / "model.ckpt", false}),
                  DataError);
}

TEST_CASE("latent standardization: fitted statistics, round trip and checkpoint storage") {
  auto& fx = fixture();
  const auto manifest = scenegen::load_manifest(fx.data);
  const codec::Codec codec = codec::Codec::load(fx.codec);
  const auto samples = encode_split(manifest, "train", codec, 6);
  const LatentNorm norm = fit_latent_norm(samples);
  REQUIRE(norm.mean.size() == 3);

  // Two-pass oracle over the pixel values of every target image channel.
  for (int c = 0; c < 3; ++c) {
    std::vector<double> v;
    for (const auto& s : samples)
      for (const auto& t : s.targets) {
        const Tensor chw = read_png(fx.data / t.image).to_chw();
        for (int i = 0; i < 16 * 16; ++i) v.push_back(chw[static_cast<std::size_t>(c * 256 + i)]);
      }
    double m = 0.0, var = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    for (double x : v) var += (x - m) * (x - m);
    var /= static_cast<double>(v.size());
    CHECK(norm.mean[static_cast<std::size_t>(c)] == doctest::Approx(m).epsilon(1e-10));
    CHECK(norm.std[static_cast<std::size_t>(c)] == doctest::Approx(std::sqrt(var)).epsilon(1e-8));
  }

  const auto normalized = normalize_latents(samples, norm);
  CHECK(fit_latent_norm(normalized).mean[0] == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(fit_latent_norm(normalized).std[1] == doctest::Approx(1.0).epsilon(1e-10));
  const Tensor& z = samples[0].targets[0].z;
  const Tensor back = norm.denormalize(norm.normalize(z));
  for (std::size_t i = 0; i < z.numel(); ++i) CHECK(back[i] == doctest::Approx(z[i]).epsilon(1e-12));
  CHECK(LatentNorm{}.normalize(z) == z);
  CHECK_THROWS_AS(norm.normalize(Tensor({2, 4, 4})), InputError);

  ExperimentConfig cfg = tiny_config();
  cfg.training.epochs = 1;
  cmd_train(cfg, {fx.data, fx.codec, fx.root / "n_run", {}, false});
  const DenoiserCheckpoint info = read_denoiser_info(fx.root / "n_run" / "model.ckpt");
  CHECK(info.latent_norm.mean == norm.mean);
  CHECK(info.latent_norm.std == norm.std);
}

TEST_CASE("sample, evaluate, compare and skeleton-quality on a tiny run") {
  auto& fx = fixture();
  ExperimentConfig cfg = tiny_config();
  cfg.training.epochs = 1;
  cmd_train(cfg, {fx.data, fx.codec, fx.root / "s_run", {}, false});
  const auto index = cmd_sample(cfg, {fx.root / "s_run" / "model.ckpt", fx.data, fx.root / "s_gen", {}});
  CHECK(index.entries.size() == 6);  // 3 samples x 2 targets
  CHECK(fs::exists(fx.root / "s_gen" / "grid.png"));
  const Image panel = read_png(fx.root / "s_gen" / (index.entries[0].generated.substr(0, index.entries[0].generated.size() - 4) + "_panel.png"));
  CHECK(panel.width() == 4 * 16);
  const auto ev = cmd_evaluate(cfg, fx.root / "s_gen", fx.data, fx.root / "s_eval");
  CHECK(ev.records.size() == 6);
  CHECK(ev.report.fid_proxy.has_value());

  // Self-comparison: nothing is significant, improvement is identically zero.
  const auto cmp = cmd_compare(cfg, fx.root / "s_eval", fx.root / "s_eval" / "records.csv", fx.root / "s_cmp");
  for (const auto& m : cmp.metrics) CHECK(m.test.p >= 0.5);
  CHECK(fs::exists(fx.root / "s_cmp" / "comparison.md"));
  const auto table = cmd_skeleton_quality(cfg, {fx.root / "s_eval", fx.root / "s_eval", fx.data, fx.root / "s_skq", {}});
  for (const auto& b : table.bins)
    for (double v : b.mean) CHECK(v == 0.0);
  CHECK(fs::exists(fx.root / "s_skq" / "improvement.svg"));

  // A dataset without a degradation sweep is rejected.
  ExperimentConfig flat = tiny_config();
  flat.scenegen.degradation_levels = {0.0};
  cmd_gen_data(flat, fx.root / "flat");
  cmd_sample(flat, {fx.root / "s_run" / "model.ckpt", fx.root / "flat", fx.root / "f_gen", fx.codec});
  cmd_evaluate(flat, fx.root / "f_gen", fx.root / "flat", fx.root / "f_eval");
  CHECK_THROWS_AS(cmd_skeleton_quality(flat, {fx.root / "f_eval", fx.root / "f_eval", fx.root / "flat", fx.root / "f_skq", {}}),
                  DataError);
}

TEST_CASE("command-line exit codes") {
  auto& fx = fixture();
  CHECK(run_cli("print-config") == 0);
  CHECK(run_cli("") == 1);
  CHECK(run_cli("no-such-command") == 1);
  CHECK(run_cli("gen-data") == 1);  // --out is required
  const fs::path bad = fx.root / "bad.json";
  write_json_file(bad, {{"trainin", {}}});
  CHECK(run_cli("print-config --config " + bad.string()) == 1);
  CHECK(run_cli("print-config --device gpu") == 1);
  CHECK(run_cli("evaluate --generated " + (fx.root / "missing").string() + " --data " + fx.data.string() + " --out " +
                (fx.root / "x").string()) == 2);
  CHECK(run_cli("train --data " + (fx.root / "nodata").string() + " --codec " + fx.codec.string() + " --out " +
                (fx.root / "y").string()) == 2);
  // A diverging optimizer ends in a non-finite loss.
  nlohmann::json diverge = tiny_config();
  diverge["training"]["learning_rate"] = 1e300;
  diverge["training"]["epochs"] = 3;
  const fs::path dj = fx.root / "diverge.json";
  write_json_file(dj, diverge);
  CHECK(run_cli("train --config " + dj.string() + " --data " + fx.data.string() + " --codec " + fx.codec.string() +
                " --out " + (fx.root / "z").string()) == 3);
}
