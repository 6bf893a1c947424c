#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "skel3d/app/config.hpp"
#include "skel3d/codec/codec.hpp"
#include "skel3d/diffusion/diffusion.hpp"
#include "skel3d/evalkit/report.hpp"
#include "skel3d/scenegen/dataset.hpp"
#include "skel3d/unet/unet.hpp"

namespace skel3d::app {

using Logger = std::function<void(const std::string&)>;

// ---- Encoded dataset -------------------------------------------------------

struct EncodedTarget {
  std::string id;  // "<object>/frame_<f>/tgt_<j>"
  std::string image;           // dataset-relative paths of the target and skeleton renders
  std::string skeleton_image;
  Tensor z;
  Tensor skeleton;
  CameraPose camera;
  double bbox_iou = 0.0;
  double degradation_level = 0.0;
};

struct EncodedSample {
  std::string object_id;
  int frame_index = 0;
  std::string source;  // dataset-relative path
  Tensor z_src;
  std::vector<double> global;
  CameraPose source_camera;
  std::vector<EncodedTarget> targets;
};

std::string target_id(const scenegen::SampleRecord& rec, std::size_t j);

// Encodes the first max_samples (0: all) samples of a split, in manifest order.
std::vector<EncodedSample> encode_split(const scenegen::DatasetManifest& manifest, const std::string& split,
                                        const codec::Codec& codec, int max_samples = 0);

// ---- Latent standardization ----------------------------------------------

// Per-channel affine map applied to codec latents before diffusion, so that
// the diffusion prior N(0, I) matches the data scale whatever the codec.
struct LatentNorm {
  std::vector<double> mean;
  std::vector<double> std;

  bool empty() const { return mean.empty(); }
  Tensor normalize(const Tensor& z) const;
  Tensor denormalize(const Tensor& z) const;
};

void to_json(nlohmann::json& j, const LatentNorm& n);
void from_json(const nlohmann::json& j, LatentNorm& n);

// Statistics over every training target latent.
LatentNorm fit_latent_norm(const std::vector<EncodedSample>& samples);
// Copy of the samples with z_src and target latents standardized.
std::vector<EncodedSample> normalize_latents(const std::vector<EncodedSample>& samples, const LatentNorm& norm);

// ---- Denoiser checkpoints --------------------------------------------------

struct DenoiserCheckpoint {
  unet::UNetConfig unet;
  diffusion::ScheduleConfig schedule;
  LatentNorm latent_norm;
  std::string codec_path;
  int epoch = 0;  // completed epochs
  std::int64_t step = 0;
  nlohmann::json meta;
};

void save_denoiser(const std::filesystem::path& path, const unet::UNet& net, const nn::Adam& adam,
                   const DenoiserCheckpoint& info);
DenoiserCheckpoint read_denoiser_info(const std::filesystem::path& path);
// Model with parameters restored from the checkpoint.
unet::UNet load_denoiser(const std::filesystem::path& path, DenoiserCheckpoint* info = nullptr);

// ---- Training ---------------------------------------------------------------

// Deterministic per-target (t, eps) for one sample in one epoch.
diffusion::DiffusionBatch make_training_batch(const EncodedSample& s, const diffusion::NoiseSchedule& sched,
                                              std::uint64_t seed, int epoch, std::size_t sample_index,
                                              double conditioning_dropout);

// One optimizer step's worth of gradients: the micro-batches' losses are
// weighted by their share of targets, so the accumulated gradient is that of
// the mean loss over every target in the step. Returns that mean loss.
double accumulate_gradients(const unet::UNet& net, std::span<const std::vector<diffusion::DiffusionBatch>> micro_batches,
                            const diffusion::NoiseSchedule& sched);

struct TrainOptions {
  std::filesystem::path out_dir;
  std::filesystem::path codec_path;        // recorded in checkpoints
  std::optional<std::filesystem::path> init;  // warm start (parameters only)
  bool resume = false;                        // continue from out_dir/latest.ckpt
  Logger log;
};

struct TrainSummary {
  int epochs = 0;
  std::int64_t steps = 0;
  double initial_loss = 0.0;  // first logged step of this invocation
  double final_loss = 0.0;    // last logged step
  std::vector<double> step_losses;  // this invocation's steps
};

// `train` holds raw codec latents; standardization is fitted here (or taken
// from the resumed / warm-start checkpoint) and stored in every checkpoint.
TrainSummary train_denoiser(const ExperimentConfig& cfg, const std::vector<EncodedSample>& train, const TrainOptions& opts);

// ---- Sampling and evaluation ---------------------------------------------

struct GeneratedEntry {
  std::string id;
  std::string generated;  // relative to the generation directory
  std::string target;     // relative to the dataset root
  double bbox_iou = 0.0;
  double degradation_level = 0.0;
};

struct GeneratedIndex {
  std::string model;
  std::string checkpoint;
  std::string split;
  diffusion::SamplerConfig sampler;
  std::vector<GeneratedEntry> entries;
};

void to_json(nlohmann::json& j, const GeneratedIndex& g);
void from_json(const nlohmann::json& j, GeneratedIndex& g);

// `samples` hold raw codec latents; `norm` is the checkpoint's standardization.
GeneratedIndex generate_samples(const unet::UNet& net, const diffusion::NoiseSchedule& sched, const LatentNorm& norm,
                                const codec::Codec& codec, const std::vector<EncodedSample>& samples,
                                const scenegen::DatasetManifest& manifest,
                                const diffusion::SamplerConfig& sampler, const std::filesystem::path& out_dir,
                                const Logger& log = {});

struct Evaluation {
  std::vector<evalkit::MetricRecord> records;
  evalkit::MetricReport report;
};

Evaluation evaluate_generated(const std::filesystem::path& generated_dir, const scenegen::DatasetManifest& manifest,
                              const EvaluationConfig& cfg);

}  // namespace skel3d::app
