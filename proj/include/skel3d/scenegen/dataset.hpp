#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "skel3d/core/geometry.hpp"
#include "skel3d/core/image.hpp"
#include "skel3d/scenegen/rig.hpp"

namespace skel3d::scenegen {

struct DatasetConfig {
  std::uint64_t seed = 1;
  int objects = 10;
  int frame_stride = 4;
  int frame_budget = 24;
  int views_per_frame = 3;  // one source + (views_per_frame - 1) targets
  int height = 64;
  int width = 64;
  double test_fraction = 0.2;
  // Test targets cycle through these levels; training targets use level 0
  // unless degrade_train is set.
  std::vector<double> degradation_levels{0.0, 0.25, 0.5, 0.75, 1.0};
  bool degrade_train = false;
  double elevation_min = -0.3;
  double elevation_max = 0.6;
  double camera_radius = 3.0;
  double focal_factor = 1.1;  // focal length in units of image width
  GeneratorConfig generator;

  void validate() const;
  int test_object_count() const;
  std::vector<int> frame_indices() const;
};

void to_json(nlohmann::json& j, const DatasetConfig& cfg);
void from_json(const nlohmann::json& j, DatasetConfig& cfg);

struct TargetRecord {
  std::string image;  // paths relative to the dataset root
  std::string skeleton;
  CameraPose camera;
  double bbox_iou = 0.0;
  double degradation_level = 0.0;
  std::uint64_t degradation_seed = 0;
};

struct SampleRecord {
  std::string split;  // "train" or "test"
  std::string object_id;
  std::uint64_t object_seed = 0;
  int frame_index = 0;
  std::string source;
  CameraPose source_camera;
  std::vector<TargetRecord> targets;
};

struct DatasetManifest {
  static constexpr int kSchemaVersion = 1;
  int schema_version = kSchemaVersion;
  DatasetConfig config;
  std::vector<SampleRecord> samples;  // sorted by (object_id, frame_index)
  std::filesystem::path root;         // not serialized

  std::vector<const SampleRecord*> split(const std::string& name) const;
  std::vector<std::string> object_ids(const std::string& split_name) const;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

struct TargetView {
  Image image;
  Image skeleton;
  CameraPose camera;
  double bbox_iou = 0.0;
  double degradation_level = 0.0;
};

struct ViewSample {
  std::string object_id;
  int frame_index = 0;
  Image source;
  CameraPose source_camera;
  std::vector<TargetView> targets;
};

std::string object_id_for(int index);
std::uint64_t object_seed_for(const DatasetConfig& cfg, int index);

DatasetManifest generate_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir);
DatasetManifest load_manifest(const std::filesystem::path& dataset_dir);
ViewSample load_sample(const DatasetManifest& manifest, const SampleRecord& record);

}  // namespace skel3d::scenegen
