#include "skel3d/app/commands.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include "skel3d/core/error.hpp"
#include "skel3d/core/json_util.hpp"

namespace skel3d::app {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::system_clock;

std::string iso_time(Clock::time_point tp) {
  const std::time_t t = Clock::to_time_t(tp);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Config snapshot on construction, timestamps on finish().
class Run {
 public:
  Run(const std::string& command, const ExperimentConfig& cfg, const fs::path& out)
      : command_(command), out_(out), start_(Clock::now()) {
    fs::create_directories(out_);
    write_json_file(out_ / "config.json", cfg);
  }
  void finish(nlohmann::json extra = nlohmann::json::object()) const {
    const auto end = Clock::now();
    extra["command"] = command_;
    extra["started"] = iso_time(start_);
    extra["finished"] = iso_time(end);
    extra["elapsed_seconds"] = std::chrono::duration<double>(end - start_).count();
    write_json_file(out_ / "metadata.json", extra);
  }

 private:
  std::string command_;
  fs::path out_;
  Clock::time_point start_;
};

void emit(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

codec::Codec load_codec_for(const std::optional<fs::path>& override_path, const std::string& recorded) {
  const fs::path p = override_path ? *override_path : fs::path(recorded);
  if (p.empty()) throw DataError("no codec checkpoint given and none recorded in the denoiser checkpoint");
  if (!fs::exists(p)) throw DataError("codec checkpoint " + p.string() + " not found");
  return codec::Codec::load(p);
}

struct LoadedRecords {
  std::vector<evalkit::MetricRecord> records;
  std::optional<double> fid;
};

LoadedRecords load_records(const fs::path& p) {
  LoadedRecords out;
  if (fs::is_directory(p)) {
    out.records = evalkit::read_records_csv(p / "records.csv");
    if (fs::exists(p / "report.json")) {
      const auto rep = read_json_file(p / "report.json").get<evalkit::MetricReport>();
      out.fid = rep.fid_proxy;
    }
  } else {
    out.records = evalkit::read_records_csv(p);
  }
  return out;
}

void write_evaluation(const fs::path& out, const Evaluation& ev) {
  write_json_file(out / "report.json", ev.report);
  evalkit::write_records_csv(out / "records.csv", ev.records);
}

std::string pm(const evalkit::MetricSummary& s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f ± %.4f", s.mean, s.std);
  return buf;
}

}  // namespace

void cmd_print_config(std::ostream& os, const ExperimentConfig& cfg) { os << nlohmann::json(cfg).dump(2) << '\n'; }

scenegen::DatasetManifest cmd_gen_data(const ExperimentConfig& cfg, const fs::path& out, const Logger& log) {
  Run run("gen-data", cfg, out);
  emit(log, "generating " + std::to_string(cfg.scenegen.objects) + " objects into " + out.string());
  auto m = scenegen::generate_dataset(cfg.scenegen, out);
  emit(log, "wrote " + std::to_string(m.samples.size()) + " samples");
  run.finish({{"samples", m.samples.size()}});
  return m;
}

codec::Codec cmd_train_codec(const ExperimentConfig& cfg, const fs::path& data, const fs::path& out, const Logger& log) {
  Run run("train-codec", cfg, out);
  const auto manifest = scenegen::load_manifest(data);
  if (manifest.config.height != cfg.codec.height || manifest.config.width != cfg.codec.width)
    throw ConfigError("codec image size does not match the dataset's");
  std::ofstream csv(out / "codec_loss.csv", std::ios::trunc);
  csv << "epoch,loss\n";
  codec::Codec c = codec::train_codec(manifest, cfg.codec, [&](int epoch, double loss) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", loss);
    csv << epoch + 1 << ',' << buf << '\n';
    csv.flush();
    emit(log, "codec epoch " + std::to_string(epoch + 1) + " loss " + buf);
  });
  c.save(out / "codec.ckpt");
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", c.training_info().final_train_psnr);
  emit(log, std::string("codec train reconstruction PSNR ") + buf + " dB");
  run.finish({{"final_train_psnr", c.training_info().final_train_psnr}});
  return c;
}

TrainSummary cmd_train(const ExperimentConfig& cfg, const TrainArgs& args, const Logger& log) {
  Run run("train", cfg, args.out);
  const auto manifest = scenegen::load_manifest(args.data);
  if (!fs::exists(args.codec)) throw DataError("codec checkpoint " + args.codec.string() + " not found");
  const codec::Codec c = codec::Codec::load(args.codec);
  if (c.config().latent_c() != cfg.unet.latent_channels || c.config().global_dim != cfg.unet.global_dim)
    throw ConfigError("codec checkpoint latent geometry does not match the unet config");
  const auto train = encode_split(manifest, "train", c, cfg.training.max_samples);
  emit(log, "encoded " + std::to_string(train.size()) + " training samples");
  TrainOptions opts;
  opts.out_dir = args.out;
  opts.codec_path = args.codec;
  opts.init = args.init;
  opts.resume = args.resume;
  opts.log = log;
  const TrainSummary s = train_denoiser(cfg, train, opts);
  run.finish({{"steps", s.steps}, {"epochs", s.epochs}, {"final_loss", s.final_loss}});
  return s;
}

GeneratedIndex cmd_sample(const ExperimentConfig& cfg, const SampleArgs& args, const Logger& log) {
  Run run("sample", cfg, args.out);
  DenoiserCheckpoint info;
  const unet::UNet net = load_denoiser(args.checkpoint, &info);
  const codec::Codec c = load_codec_for(args.codec, info.codec_path);
  const auto manifest = scenegen::load_manifest(args.data);
  const auto samples = encode_split(manifest, cfg.evaluation.split, c, cfg.evaluation.max_samples);
  const auto sched = diffusion::make_schedule(info.schedule);
  cfg.diffusion.sampler.validate(sched);
  GeneratedIndex index = generate_samples(net, sched, info.latent_norm, c, samples, manifest, cfg.diffusion.sampler, args.out, log);
  index.checkpoint = args.checkpoint.filename().string();
  index.split = cfg.evaluation.split;
  write_json_file(args.out / "generated.json", index);
  run.finish({{"targets", index.entries.size()}});
  return index;
}

Evaluation cmd_evaluate(const ExperimentConfig& cfg, const fs::path& generated, const fs::path& data, const fs::path& out) {
  Run run("evaluate", cfg, out);
  const auto manifest = scenegen::load_manifest(data);
  Evaluation ev = evaluate_generated(generated, manifest, cfg.evaluation);
  write_evaluation(out, ev);
  run.finish({{"records", ev.records.size()}});
  return ev;
}

std::string comparison_markdown(const evalkit::ComparisonReport& r) {
  std::ostringstream os;
  os << "| metric | " << r.model_a << " | " << r.model_b << " | U | p (one-sided) | alternative |\n";
  os << "|---|---|---|---|---|---|\n";
  for (const auto& m : r.metrics) {
    char u[32], p[32];
    std::snprintf(u, sizeof u, "%.1f", m.test.u);
    std::snprintf(p, sizeof p, "%.3g", m.test.p);
    os << "| " << m.metric << " | " << pm(m.a) << " | " << pm(m.b) << " | " << u << " | " << p
       << (m.significant_01 ? " **" : m.significant_05 ? " *" : "") << " | " << evalkit::to_string(m.test.alternative)
       << " |\n";
  }
  if (r.fid_a && r.fid_b) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "| fid_proxy | %.4f | %.4f | | | |\n", *r.fid_a, *r.fid_b);
    os << buf;
  }
  os << "\nn = " << r.count << " paired targets; * p < 0.05, ** p < 0.01.\n";
  return os.str();
}

evalkit::ComparisonReport cmd_compare(const ExperimentConfig& cfg, const fs::path& a, const fs::path& b, const fs::path& out) {
  Run run("compare", cfg, out);
  const LoadedRecords ra = load_records(a), rb = load_records(b);
  const auto rep = evalkit::compare_models(ra.records, rb.records, ra.fid, rb.fid);
  write_json_file(out / "comparison.json", rep);
  std::ofstream(out / "comparison.md", std::ios::trunc) << comparison_markdown(rep);
  run.finish();
  return rep;
}

evalkit::BinTable cmd_skeleton_quality(const ExperimentConfig& cfg, const SkeletonQualityArgs& args, const Logger& log) {
  Run run("skeleton-quality", cfg, args.out);
  const auto manifest = scenegen::load_manifest(args.data);
  auto obtain = [&](const fs::path& input, const std::string& label) -> LoadedRecords {
    if (fs::is_directory(input)) return load_records(input);
    const fs::path dir = args.out / label;
    emit(log, "sampling " + label + " from " + input.string());
    SampleArgs sa{input, args.data, dir / "generated", args.codec};
    cmd_sample(cfg, sa, log);
    const Evaluation ev = cmd_evaluate(cfg, dir / "generated", args.data, dir / "evaluation");
    return {ev.records, ev.report.fid_proxy};
  };
  const LoadedRecords model = obtain(args.model, "model");
  const LoadedRecords base = obtain(args.baseline, "baseline");
  std::set<double> levels;
  for (const auto& r : model.records) levels.insert(r.degradation_level);
  if (levels.size() < 2)
    throw DataError("evaluated targets carry a single skeleton degradation level; generate the dataset with a degradation sweep");
  const auto table = evalkit::iou_binned_improvement(model.records, base.records, cfg.evaluation.num_bins,
                                                     cfg.evaluation.bootstrap_resamples, cfg.evaluation.seed);
  write_json_file(args.out / "bins.json", table);
  evalkit::write_bins_csv(args.out / "bins.csv", table);
  evalkit::write_improvement_svg(args.out / "improvement.svg", table);
  char buf[160];
  std::snprintf(buf, sizeof buf, "composite improvement: spearman %.3f, high-low %.4f (SE %.4f)", table.spearman[4],
                table.high_minus_low[4], table.high_minus_low_se[4]);
  emit(log, buf);
  run.finish();
  return table;
}

}  // namespace skel3d::app
