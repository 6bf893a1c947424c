#include "skel3d/app/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "skel3d/core/archive.hpp"
#include "skel3d/core/error.hpp"
#include "skel3d/core/json_util.hpp"
#include "skel3d/core/rng.hpp"

namespace skel3d::app {

namespace fs = std::filesystem;

namespace {

void emit(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string exact(double v) { return fmt("%.17g", v); }

}  // namespace

std::string target_id(const scenegen::SampleRecord& rec, std::size_t j) {
  return rec.object_id + "/frame_" + std::to_string(rec.frame_index) + "/tgt_" + std::to_string(j);
}

std::vector<EncodedSample> encode_split(const scenegen::DatasetManifest& manifest, const std::string& split,
                                        const codec::Codec& codec, int max_samples) {
  const auto recs = manifest.split(split);
  if (recs.empty()) throw DataError("dataset has no '" + split + "' samples");
  const std::size_t n = max_samples > 0 ? std::min<std::size_t>(recs.size(), static_cast<std::size_t>(max_samples)) : recs.size();
  std::vector<EncodedSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const scenegen::SampleRecord& rec = *recs[i];
    const scenegen::ViewSample vs = scenegen::load_sample(manifest, rec);
    EncodedSample s;
    s.object_id = rec.object_id;
    s.frame_index = rec.frame_index;
    s.source = rec.source;
    s.z_src = codec.encode(vs.source);
    s.global = codec.embed_global(vs.source);
    s.source_camera = rec.source_camera;
    for (std::size_t j = 0; j < vs.targets.size(); ++j) {
      EncodedTarget t;
      t.id = target_id(rec, j);
      t.image = rec.targets[j].image;
      t.skeleton_image = rec.targets[j].skeleton;
      t.z = codec.encode(vs.targets[j].image);
      t.skeleton = codec.embed_skeleton(vs.targets[j].skeleton);
      t.camera = rec.targets[j].camera;
      t.bbox_iou = rec.targets[j].bbox_iou;
      t.degradation_level = rec.targets[j].degradation_level;
      s.targets.push_back(std::move(t));
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

Tensor channel_affine(const Tensor& z, const LatentNorm& n, bool forward) {
  if (n.empty()) return z;
  const int c = z.dim(0);
  if (static_cast<int>(n.mean.size()) != c)
    throw InputError("latent normalization has " + std::to_string(n.mean.size()) + " channels, latent has " + std::to_string(c));
  Tensor out = z;
  const std::size_t plane = z.numel() / static_cast<std::size_t>(c);
  for (int k = 0; k < c; ++k) {
    const double m = n.mean[static_cast<std::size_t>(k)], sd = n.std[static_cast<std::size_t>(k)];
    double* p = out.data() + static_cast<std::size_t>(k) * plane;
    for (std::size_t i = 0; i < plane; ++i) p[i] = forward ? (p[i] - m) / sd : p[i] * sd + m;
  }
  return out;
}

}  // namespace

Tensor LatentNorm::normalize(const Tensor& z) const { return channel_affine(z, *this, true); }
Tensor LatentNorm::denormalize(const Tensor& z) const { return channel_affine(z, *this, false); }

void to_json(nlohmann::json& j, const LatentNorm& n) { j = {{"mean", n.mean}, {"std", n.std}}; }

void from_json(const nlohmann::json& j, LatentNorm& n) {
  n.mean = j.at("mean").get<std::vector<double>>();
  n.std = j.at("std").get<std::vector<double>>();
  if (n.mean.size() != n.std.size()) throw DataError("latent normalization mean/std sizes differ");
  for (double v : n.std)
    if (!(v > 0.0)) throw DataError("latent normalization std must be positive");
}

LatentNorm fit_latent_norm(const std::vector<EncodedSample>& samples) {
  if (samples.empty() || samples.front().targets.empty()) throw InputError("fit_latent_norm: no latents");
  const int c = samples.front().targets.front().z.dim(0);
  std::vector<double> sum(static_cast<std::size_t>(c)), sq(static_cast<std::size_t>(c));
  double count = 0.0;
  for (const auto& s : samples)
    for (const auto& t : s.targets) {
      const std::size_t plane = t.z.numel() / static_cast<std::size_t>(c);
      for (int k = 0; k < c; ++k)
        for (std::size_t i = 0; i < plane; ++i) {
          const double v = t.z[static_cast<std::size_t>(k) * plane + i];
          sum[static_cast<std::size_t>(k)] += v;
          sq[static_cast<std::size_t>(k)] += v * v;
        }
      count += static_cast<double>(plane);
    }
  LatentNorm n;
  for (int k = 0; k < c; ++k) {
    const double m = sum[static_cast<std::size_t>(k)] / count;
    const double var = sq[static_cast<std::size_t>(k)] / count - m * m;
    n.mean.push_back(m);
    n.std.push_back(var > 1e-12 ? std::sqrt(var) : 1.0);
  }
  return n;
}

std::vector<EncodedSample> normalize_latents(const std::vector<EncodedSample>& samples, const LatentNorm& norm) {
  std::vector<EncodedSample> out = samples;
  for (auto& s : out) {
    s.z_src = norm.normalize(s.z_src);
    for (auto& t : s.targets) t.z = norm.normalize(t.z);
  }
  return out;
}

// ---------------------------------------------------------------------------

void save_denoiser(const fs::path& path, const unet::UNet& net, const nn::Adam& adam, const DenoiserCheckpoint& info) {
  ArchiveWriter w;
  net.save_to(w);
  nlohmann::json meta = info.meta.is_object() ? info.meta : nlohmann::json::object();
  meta["kind"] = "denoiser";
  meta["unet"] = net.config();
  meta["schedule"] = info.schedule;
  if (!info.latent_norm.empty()) meta["latent_norm"] = info.latent_norm;
  meta["codec"] = info.codec_path;
  meta["epoch"] = info.epoch;
  meta["step"] = info.step;
  adam.save_to(w, meta);
  const fs::path tmp = path.string() + ".tmp";
  w.write(tmp, meta);
  fs::rename(tmp, path);
}

DenoiserCheckpoint read_denoiser_info(const fs::path& path) {
  const Archive a = Archive::read(path);
  const auto& m = a.meta();
  if (m.value("kind", "") != "denoiser") throw DataError(path.string() + " is not a denoiser checkpoint");
  DenoiserCheckpoint info;
  try {
    info.unet = m.at("unet").get<unet::UNetConfig>();
    info.schedule = m.at("schedule").get<diffusion::ScheduleConfig>();
    if (m.contains("latent_norm")) info.latent_norm = m.at("latent_norm").get<LatentNorm>();
    info.codec_path = m.value("codec", "");
    info.epoch = m.value("epoch", 0);
    info.step = m.value("step", std::int64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt denoiser checkpoint " + path.string() + ": " + e.what());
  }
  info.meta = m;
  return info;
}

unet::UNet load_denoiser(const fs::path& path, DenoiserCheckpoint* info_out) {
  const DenoiserCheckpoint info = read_denoiser_info(path);
  unet::UNet net(info.unet);
  net.load_from(Archive::read(path), false);
  if (info_out) *info_out = info;
  return net;
}

// ---------------------------------------------------------------------------

diffusion::DiffusionBatch make_training_batch(const EncodedSample& s, const diffusion::NoiseSchedule& sched,
                                              std::uint64_t seed, int epoch, std::size_t sample_index,
                                              double conditioning_dropout) {
  Rng rng(mix_seed({seed, 0x747261696eULL, static_cast<std::uint64_t>(epoch), sample_index}));
  diffusion::DiffusionBatch b;
  b.z_src = s.z_src;
  b.global = s.global;
  b.source_camera = s.source_camera;
  for (const EncodedTarget& t : s.targets) {
    b.z_tgt.push_back(t.z);
    b.t.push_back(rng.uniform_int(0, sched.T - 1));
    b.eps.push_back(diffusion::standard_normal(t.z.shape(), rng));
    Tensor skel = t.skeleton;
    if (conditioning_dropout > 0.0 && rng.bernoulli(conditioning_dropout)) skel.fill(0.0);
    b.skeleton.push_back(std::move(skel));
    b.target_cameras.push_back(t.camera);
  }
  return b;
}

double accumulate_gradients(const unet::UNet& net, std::span<const std::vector<diffusion::DiffusionBatch>> micro_batches,
                            const diffusion::NoiseSchedule& sched) {
  std::size_t total = 0;
  for (const auto& mb : micro_batches)
    for (const auto& b : mb) total += b.z_tgt.size();
  if (total == 0) throw InputError("optimizer step without targets");
  double loss = 0.0;
  for (const auto& mb : micro_batches) {
    if (mb.empty()) continue;
    std::size_t rows = 0;
    for (const auto& b : mb) rows += b.z_tgt.size();
    const double weight = static_cast<double>(rows) / static_cast<double>(total);
    const diffusion::LossResult res = diffusion::training_loss(mb, net, sched);
    const double v = res.loss.value()[0];
    if (!std::isfinite(v)) throw NumericError("non-finite training loss");
    nn::backward(res.loss, weight);
    loss += weight * v;
  }
  return loss;
}

namespace {

// Keeps the header and the rows of steps <= last_step.
void truncate_loss_csv(const fs::path& path, std::int64_t last_step) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot resume: missing " + path.string());
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(in, line)) {
    if (keep.empty()) {
      keep.push_back(line);
      continue;
    }
    if (std::stoll(line.substr(0, line.find(','))) <= last_step) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

}  // namespace

TrainSummary train_denoiser(const ExperimentConfig& cfg, const std::vector<EncodedSample>& raw, const TrainOptions& opts) {
  if (raw.empty()) throw InputError("no training samples");
  const TrainingConfig& tc = cfg.training;
  const diffusion::NoiseSchedule sched = diffusion::make_schedule(cfg.diffusion.schedule);
  unet::UNet net(cfg.unet);
  nn::AdamConfig ac;
  ac.learning_rate = tc.learning_rate;
  ac.grad_clip = tc.grad_clip;
  nn::Adam adam(ac);
  fs::create_directories(opts.out_dir);
  const fs::path latest = opts.out_dir / "latest.ckpt";
  const fs::path loss_csv = opts.out_dir / "loss.csv";

  int start_epoch = 0;
  std::int64_t step = 0;
  LatentNorm norm;
  if (opts.resume) {
    if (!fs::exists(latest)) throw DataError("cannot resume: " + latest.string() + " not found");
    const DenoiserCheckpoint info = read_denoiser_info(latest);
    if (nlohmann::json(info.unet) != nlohmann::json(cfg.unet))
      throw ConfigError("cannot resume: checkpoint unet config differs from the current config");
    const Archive a = Archive::read(latest);
    net.load_from(a, false);
    adam.load_from(a, net.params());
    start_epoch = info.epoch;
    step = info.step;
    norm = info.latent_norm;
    truncate_loss_csv(loss_csv, step);
    emit(opts.log, "resumed from epoch " + std::to_string(start_epoch) + ", step " + std::to_string(step));
  } else {
    if (opts.init) {
      const DenoiserCheckpoint init = read_denoiser_info(*opts.init);
      const auto missing = net.load_from(Archive::read(*opts.init), true);
      norm = init.latent_norm;
      emit(opts.log, "warm start from " + opts.init->string() + " (" + unet::to_string(init.unet.mode) + "); " +
                         std::to_string(missing.size()) + " new parameter tensors keep their initialization");
    }
    std::ofstream(loss_csv, std::ios::trunc) << "step,epoch,loss,grad_norm\n";
  }
  if (norm.empty() && !opts.resume) norm = fit_latent_norm(raw);
  const std::vector<EncodedSample> train = normalize_latents(raw, norm);

  DenoiserCheckpoint info;
  info.unet = cfg.unet;
  info.schedule = cfg.diffusion.schedule;
  info.latent_norm = norm;
  info.codec_path = opts.codec_path.string();

  TrainSummary summary;
  const std::size_t n = train.size();
  const std::size_t per_step = static_cast<std::size_t>(tc.batch_size) * static_cast<std::size_t>(tc.accumulation_steps);
  std::ofstream csv(loss_csv, std::ios::app);
  for (int epoch = start_epoch; epoch < tc.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(mix_seed({tc.seed, 0x65706f6368ULL, static_cast<std::uint64_t>(epoch)}));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<int>(i) - 1))]);

    double epoch_loss = 0.0;
    int epoch_steps = 0;
    for (std::size_t pos = 0; pos < n; pos += per_step) {
      std::vector<std::vector<diffusion::DiffusionBatch>> micro;
      for (int k = 0; k < tc.accumulation_steps; ++k) {
        const std::size_t lo = pos + static_cast<std::size_t>(k) * tc.batch_size;
        if (lo >= n) break;
        const std::size_t hi = std::min(n, lo + static_cast<std::size_t>(tc.batch_size));
        std::vector<diffusion::DiffusionBatch> mb;
        for (std::size_t i = lo; i < hi; ++i)
          mb.push_back(make_training_batch(train[order[i]], sched, tc.seed, epoch, order[i], tc.conditioning_dropout));
        micro.push_back(std::move(mb));
      }
      const double loss = accumulate_gradients(net, micro, sched);
      const double gnorm = adam.step(net.params());
      ++step;
      csv << step << ',' << epoch << ',' << exact(loss) << ',' << exact(gnorm) << '\n';
      csv.flush();
      summary.step_losses.push_back(loss);
      epoch_loss += loss;
      ++epoch_steps;
    }
    info.epoch = epoch + 1;
    info.step = step;
    save_denoiser(latest, net, adam, info);
    if (tc.checkpoint_every > 0 && (epoch + 1) % tc.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03d.ckpt", epoch + 1);
      fs::copy_file(latest, opts.out_dir / name, fs::copy_options::overwrite_existing);
    }
    emit(opts.log, "epoch " + std::to_string(epoch + 1) + "/" + std::to_string(tc.epochs) + " mean loss " +
                       fmt("%.5f", epoch_loss / std::max(1, epoch_steps)) + " (step " + std::to_string(step) + ")");
  }
  info.epoch = std::max(start_epoch, tc.epochs);
  info.step = step;
  save_denoiser(opts.out_dir / "model.ckpt", net, adam, info);
  summary.epochs = info.epoch;
  summary.steps = step;
  if (!summary.step_losses.empty()) {
    summary.initial_loss = summary.step_losses.front();
    summary.final_loss = summary.step_losses.back();
  }
  return summary;
}

// ---------------------------------------------------------------------------

void to_json(nlohmann::json& j, const GeneratedIndex& g) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : g.entries)
    entries.push_back({{"id", e.id},
                       {"generated", e.generated},
                       {"target", e.target},
                       {"bbox_iou", e.bbox_iou},
                       {"degradation_level", e.degradation_level}});
  j = {{"model", g.model}, {"checkpoint", g.checkpoint}, {"split", g.split}, {"sampler", g.sampler}, {"entries", entries}};
}

void from_json(const nlohmann::json& j, GeneratedIndex& g) {
  g.model = j.at("model").get<std::string>();
  g.checkpoint = j.value("checkpoint", "");
  g.split = j.value("split", "");
  g.sampler = j.at("sampler").get<diffusion::SamplerConfig>();
  g.entries.clear();
  for (const auto& e : j.at("entries")) {
    GeneratedEntry x;
    x.id = e.at("id").get<std::string>();
    x.generated = e.at("generated").get<std::string>();
    x.target = e.at("target").get<std::string>();
    x.bbox_iou = e.at("bbox_iou").get<double>();
    x.degradation_level = e.at("degradation_level").get<double>();
    g.entries.push_back(std::move(x));
  }
}

GeneratedIndex generate_samples(const unet::UNet& net, const diffusion::NoiseSchedule& sched, const LatentNorm& norm,
                                const codec::Codec& codec, const std::vector<EncodedSample>& samples,
                                const scenegen::DatasetManifest& manifest,
                                const diffusion::SamplerConfig& sampler, const fs::path& out_dir, const Logger& log) {
  GeneratedIndex index;
  index.model = unet::to_string(net.config().mode);
  index.sampler = sampler;
  std::vector<Image> grid;
  std::size_t done = 0;
  for (const EncodedSample& s : samples) {
    std::vector<Tensor> skeletons;
    std::vector<CameraPose> cams;
    for (const auto& t : s.targets) {
      skeletons.push_back(t.skeleton);
      cams.push_back(t.camera);
    }
    const auto latents = diffusion::sample(net, norm.normalize(s.z_src), skeletons, s.global, s.source_camera, cams, sampler, sched);
    const Image source = read_png(manifest.root / s.source);
    for (std::size_t j = 0; j < s.targets.size(); ++j) {
      const EncodedTarget& t = s.targets[j];
      const Image gen = codec.decode(norm.denormalize(latents[j]));
      const std::string rel = "images/" + t.id;
      fs::create_directories(out_dir / fs::path(rel).parent_path());
      write_png(out_dir / (rel + ".png"), gen);
      const std::vector<Image> cols{source, read_png(manifest.root / t.image), read_png(manifest.root / t.skeleton_image), gen};
      const Image panel = hconcat(cols);
      write_png(out_dir / (rel + "_panel.png"), panel);
      if (grid.size() < 8) grid.push_back(panel);
      index.entries.push_back({t.id, rel + ".png", t.image, t.bbox_iou, t.degradation_level});
    }
    if (++done % 16 == 0 || done == samples.size())
      emit(log, "sampled " + std::to_string(done) + "/" + std::to_string(samples.size()));
  }
  if (!grid.empty()) write_png(out_dir / "grid.png", vconcat(grid));
  return index;
}

Evaluation evaluate_generated(const fs::path& generated_dir, const scenegen::DatasetManifest& manifest,
                              const EvaluationConfig& cfg) {
  const fs::path index_path = generated_dir / "generated.json";
  if (!fs::exists(index_path)) throw DataError(index_path.string() + " not found (run sample first)");
  GeneratedIndex index;
  try {
    index = read_json_file(index_path).get<GeneratedIndex>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt " + index_path.string() + ": " + e.what());
  }
  if (index.entries.empty()) throw DataError("no generated images listed in " + index_path.string());
  const evalkit::FeatureNet net(cfg.featnet);
  Evaluation ev;
  std::vector<Image> gens, tgts;
  for (const auto& e : index.entries) {
    const Image gen = read_png(generated_dir / e.generated);
    const Image tgt = read_png(manifest.root / e.target);
    if (!gen.same_size(tgt)) throw DataError("generated image " + e.generated + " does not match its target size");
    evalkit::MetricRecord r = evalkit::evaluate_pair(e.id, index.model, gen, tgt, net);
    r.bbox_iou = e.bbox_iou;
    r.degradation_level = e.degradation_level;
    ev.records.push_back(r);
    gens.push_back(gen);
    tgts.push_back(tgt);
  }
  std::optional<double> fid;
  if (gens.size() >= 2) fid = evalkit::fid_proxy(gens, tgts, net);
  ev.report = evalkit::summarize(ev.records, index.model, fid);
  std::sort(ev.records.begin(), ev.records.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return ev;
}

}  // namespace skel3d::app
