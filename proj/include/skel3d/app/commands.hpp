#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "skel3d/app/config.hpp"
#include "skel3d/app/pipeline.hpp"

namespace skel3d::app {

// Every command writes <out>/config.json (the effective configuration) before
// doing any work, and <out>/metadata.json (timestamps) when it finishes.

void cmd_print_config(std::ostream& os, const ExperimentConfig& cfg);

scenegen::DatasetManifest cmd_gen_data(const ExperimentConfig& cfg, const std::filesystem::path& out, const Logger& log = {});

codec::Codec cmd_train_codec(const ExperimentConfig& cfg, const std::filesystem::path& data,
                             const std::filesystem::path& out, const Logger& log = {});

struct TrainArgs {
  std::filesystem::path data, codec, out;
  std::optional<std::filesystem::path> init;
  bool resume = false;
};
TrainSummary cmd_train(const ExperimentConfig& cfg, const TrainArgs& args, const Logger& log = {});

struct SampleArgs {
  std::filesystem::path checkpoint, data, out;
  std::optional<std::filesystem::path> codec;  // defaults to the path recorded in the checkpoint
};
GeneratedIndex cmd_sample(const ExperimentConfig& cfg, const SampleArgs& args, const Logger& log = {});

Evaluation cmd_evaluate(const ExperimentConfig& cfg, const std::filesystem::path& generated,
                        const std::filesystem::path& data, const std::filesystem::path& out);

// a and b: evaluation directories (records.csv, report.json) or records CSV files.
evalkit::ComparisonReport cmd_compare(const ExperimentConfig& cfg, const std::filesystem::path& a,
                                      const std::filesystem::path& b, const std::filesystem::path& out);

struct SkeletonQualityArgs {
  // Each: a denoiser checkpoint (sampled and evaluated here) or an evaluation directory.
  std::filesystem::path model, baseline;
  std::filesystem::path data, out;
  std::optional<std::filesystem::path> codec;
};
evalkit::BinTable cmd_skeleton_quality(const ExperimentConfig& cfg, const SkeletonQualityArgs& args,
                                       const Logger& log = {});

// Markdown rendering of a comparison (mean ± std per metric and the one-sided test).
std::string comparison_markdown(const evalkit::ComparisonReport& r);

}  // namespace skel3d::app
