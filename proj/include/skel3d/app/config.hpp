#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "skel3d/codec/codec.hpp"
#include "skel3d/diffusion/diffusion.hpp"
#include "skel3d/evalkit/featnet.hpp"
#include "skel3d/scenegen/dataset.hpp"
#include "skel3d/unet/unet.hpp"

namespace skel3d::app {

struct DiffusionSection {
  diffusion::ScheduleConfig schedule;
  diffusion::SamplerConfig sampler;
};

struct TrainingConfig {
  int batch_size = 4;          // samples (each with all its targets) per micro-batch
  int accumulation_steps = 2;  // micro-batches per optimizer step
  int epochs = 10;
  double learning_rate = 1e-4;
  double grad_clip = 1.0;
  double conditioning_dropout = 0.0;  // probability of zeroing a target's skeleton embedding
  int max_samples = 0;                // 0: whole train split
  int checkpoint_every = 1;           // epochs between numbered checkpoints; 0: final only
  std::uint64_t seed = 0;
};

struct EvaluationConfig {
  std::string split = "test";
  int max_samples = 0;  // 0: whole split
  evalkit::FeatureNetSpec featnet;
  int num_bins = 5;
  int bootstrap_resamples = 1000;
  std::uint64_t seed = 7;
};

struct ExperimentConfig {
  scenegen::DatasetConfig scenegen;
  codec::CodecConfig codec;
  unet::UNetConfig unet;
  DiffusionSection diffusion;
  TrainingConfig training;
  EvaluationConfig evaluation;

  // Cross-section consistency (image sizes, latent channels, embedding width).
  void validate() const;
};

void to_json(nlohmann::json& j, const DiffusionSection& c);
void from_json(const nlohmann::json& j, DiffusionSection& c);
void to_json(nlohmann::json& j, const TrainingConfig& c);
void from_json(const nlohmann::json& j, TrainingConfig& c);
void to_json(nlohmann::json& j, const EvaluationConfig& c);
void from_json(const nlohmann::json& j, EvaluationConfig& c);
void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

// Defaults when path is empty; otherwise the file, validated.
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace skel3d::app
