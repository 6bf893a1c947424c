#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "skel3d/app/commands.hpp"
#include "skel3d/core/error.hpp"

namespace fs = std::filesystem;
using namespace skel3d;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string device = "cpu";
};

void add_common(CLI::App* cmd, Common& c, bool needs_out) {
  cmd->add_option("--config", c.config, "experiment config (JSON); defaults when omitted")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "overrides the seed this command uses");
  auto* out = cmd->add_option("--out", c.out, "output directory");
  if (needs_out) out->required();
  cmd->add_option("--device", c.device, "compute device (only 'cpu' is supported)");
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

app::ExperimentConfig prepare(const Common& c, const std::string& command) {
  if (c.device != "cpu") throw ConfigError("unsupported device '" + c.device + "' (only cpu)");
  app::ExperimentConfig cfg = app::load_config(c.config);
  if (c.seed) {
    if (command == "gen-data") cfg.scenegen.seed = *c.seed;
    else if (command == "train-codec") cfg.codec.seed = *c.seed;
    else if (command == "train") cfg.training.seed = *c.seed;
    else if (command == "sample" || command == "skeleton-quality") cfg.diffusion.sampler.seed = *c.seed;
    else cfg.evaluation.seed = *c.seed;
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Skeleton-guided novel view synthesis: data generation, training, sampling and evaluation"};
  cli.require_subcommand(1);

  Common pc, gd, tc, tr, sm, ev, cp, sq;
  std::string data, codec_path, checkpoint, init, generated, a, b, model, baseline, mode;
  bool resume = false;

  auto* print = cli.add_subcommand("print-config", "print the effective configuration (defaults when no --config)");
  add_common(print, pc, false);

  auto* gen = cli.add_subcommand("gen-data", "generate the procedural multi-view dataset");
  add_common(gen, gd, true);

  auto* tcod = cli.add_subcommand("train-codec", "train the image autoencoder");
  add_common(tcod, tc, true);
  tcod->add_option("--data", data, "dataset directory")->required();

  auto* train = cli.add_subcommand("train", "train the denoiser");
  add_common(train, tr, true);
  train->add_option("--data", data, "dataset directory")->required();
  train->add_option("--codec", codec_path, "codec checkpoint")->required();
  train->add_option("--init", init, "warm-start parameters from a denoiser checkpoint");
  train->add_flag("--resume", resume, "continue from <out>/latest.ckpt");
  train->add_option("--mode", mode, "overrides unet.mode (baseline, scn, rcn, scn+rcn)");

  auto* samp = cli.add_subcommand("sample", "generate target views with a trained denoiser");
  add_common(samp, sm, true);
  samp->add_option("--checkpoint", checkpoint, "denoiser checkpoint")->required();
  samp->add_option("--data", data, "dataset directory")->required();
  samp->add_option("--codec", codec_path, "codec checkpoint (default: the one recorded in the checkpoint)");

  auto* eval = cli.add_subcommand("evaluate", "score generated views against their targets");
  add_common(eval, ev, true);
  eval->add_option("--generated", generated, "directory written by sample")->required();
  eval->add_option("--data", data, "dataset directory")->required();

  auto* comp = cli.add_subcommand("compare", "compare two evaluated models (one-sided Mann-Whitney U per metric)");
  add_common(comp, cp, true);
  comp->add_option("--a", a, "evaluation directory or records CSV of the candidate model")->required();
  comp->add_option("--b", b, "evaluation directory or records CSV of the reference model")->required();

  auto* skq = cli.add_subcommand("skeleton-quality", "improvement over the baseline binned by skeleton bbox IoU");
  add_common(skq, sq, true);
  skq->add_option("--model", model, "skeleton-conditioned checkpoint or evaluation directory")->required();
  skq->add_option("--baseline", baseline, "baseline checkpoint or evaluation directory")->required();
  skq->add_option("--data", data, "dataset directory with a degradation sweep")->required();
  skq->add_option("--codec", codec_path, "codec checkpoint (default: recorded in the checkpoints)");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = cli.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*print) {
      app::cmd_print_config(std::cout, prepare(pc, "print-config"));
    } else if (*gen) {
      app::cmd_gen_data(prepare(gd, "gen-data"), gd.out, log_line);
    } else if (*tcod) {
      app::cmd_train_codec(prepare(tc, "train-codec"), data, tc.out, log_line);
    } else if (*train) {
      app::TrainArgs args{data, codec_path, tr.out, {}, resume};
      if (!init.empty()) args.init = init;
      app::ExperimentConfig cfg = prepare(tr, "train");
      if (!mode.empty()) {
        cfg.unet.mode = unet::mode_from_string(mode);
        cfg.validate();
      }
      app::cmd_train(cfg, args, log_line);
    } else if (*samp) {
      app::SampleArgs args{checkpoint, data, sm.out, {}};
      if (!codec_path.empty()) args.codec = codec_path;
      app::cmd_sample(prepare(sm, "sample"), args, log_line);
    } else if (*eval) {
      const auto e = app::cmd_evaluate(prepare(ev, "evaluate"), generated, data, ev.out);
      std::cout << nlohmann::json(e.report).dump(2) << '\n';
    } else if (*comp) {
      const auto r = app::cmd_compare(prepare(cp, "compare"), a, b, cp.out);
      std::cout << app::comparison_markdown(r);
    } else if (*skq) {
      app::SkeletonQualityArgs args{model, baseline, data, sq.out, {}};
      if (!codec_path.empty()) args.codec = codec_path;
      app::cmd_skeleton_quality(prepare(sq, "skeleton-quality"), args, log_line);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
