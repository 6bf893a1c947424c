#include "skel3d/scenegen/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <tuple>

#include "skel3d/core/error.hpp"
#include "skel3d/core/json_util.hpp"
#include "skel3d/core/rng.hpp"
#include "skel3d/scenegen/render.hpp"

namespace skel3d::scenegen {

namespace fs = std::filesystem;

void DatasetConfig::validate() const {
  generator.validate();
  if (objects < 1) throw ConfigError("dataset needs at least one object");
  if (frame_stride < 1) throw ConfigError("frame_stride must be positive");
  if (frame_budget < 1) throw ConfigError("frame_budget must be positive");
  if (views_per_frame < 2) throw ConfigError("views_per_frame must be at least 2 (one source, one target)");
  if (height < 16 || width < 16) throw ConfigError("image size must be at least 16x16");
  if (test_fraction < 0.0 || test_fraction > 1.0) throw ConfigError("test_fraction must be in [0, 1]");
  if (degradation_levels.empty()) throw ConfigError("degradation_levels must not be empty");
  for (double l : degradation_levels)
    if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("degradation levels must be in [0, 1]");
  if (!(elevation_min <= elevation_max) || std::abs(elevation_min) >= 1.5 || std::abs(elevation_max) >= 1.5)
    throw ConfigError("invalid elevation range");
  if (!(camera_radius > generator.target_extent + generator.radius_max))
    throw ConfigError("camera_radius must exceed the object bounding radius");
  if (!(focal_factor > 0.0)) throw ConfigError("focal_factor must be positive");
}

int DatasetConfig::test_object_count() const {
  return static_cast<int>(std::lround(test_fraction * objects));
}

std::vector<int> DatasetConfig::frame_indices() const {
  std::vector<int> f;
  for (int i = 0; i < frame_budget; i += frame_stride) f.push_back(i);
  return f;
}

void to_json(nlohmann::json& j, const DatasetConfig& c) {
  j = {{"seed", c.seed},
       {"objects", c.objects},
       {"frame_stride", c.frame_stride},
       {"frame_budget", c.frame_budget},
       {"views_per_frame", c.views_per_frame},
       {"height", c.height},
       {"width", c.width},
       {"test_fraction", c.test_fraction},
       {"degradation_levels", c.degradation_levels},
       {"degrade_train", c.degrade_train},
       {"elevation_min", c.elevation_min},
       {"elevation_max", c.elevation_max},
       {"camera_radius", c.camera_radius},
       {"focal_factor", c.focal_factor},
       {"generator", c.generator}};
}

void from_json(const nlohmann::json& j, DatasetConfig& c) {
  require_known_keys(j,
                     {"seed", "objects", "frame_stride", "frame_budget", "views_per_frame", "height", "width",
                      "test_fraction", "degradation_levels", "degrade_train", "elevation_min", "elevation_max",
                      "camera_radius", "focal_factor", "generator"},
                     "data");
  c.seed = j.value("seed", c.seed);
  c.objects = j.value("objects", c.objects);
  c.frame_stride = j.value("frame_stride", c.frame_stride);
  c.frame_budget = j.value("frame_budget", c.frame_budget);
  c.views_per_frame = j.value("views_per_frame", c.views_per_frame);
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.test_fraction = j.value("test_fraction", c.test_fraction);
  c.degradation_levels = j.value("degradation_levels", c.degradation_levels);
  c.degrade_train = j.value("degrade_train", c.degrade_train);
  c.elevation_min = j.value("elevation_min", c.elevation_min);
  c.elevation_max = j.value("elevation_max", c.elevation_max);
  c.camera_radius = j.value("camera_radius", c.camera_radius);
  c.focal_factor = j.value("focal_factor", c.focal_factor);
  if (j.contains("generator")) j.at("generator").get_to(c.generator);
}

std::vector<const SampleRecord*> DatasetManifest::split(const std::string& name) const {
  std::vector<const SampleRecord*> out;
  for (const auto& s : samples)
    if (s.split == name) out.push_back(&s);
  return out;
}

std::vector<std::string> DatasetManifest::object_ids(const std::string& split_name) const {
  std::vector<std::string> ids;
  for (const auto& s : samples)
    if (s.split == split_name && (ids.empty() || ids.back() != s.object_id)) ids.push_back(s.object_id);
  return ids;
}

namespace {

nlohmann::json target_to_json(const TargetRecord& t) {
  return {{"image", t.image},
          {"skeleton", t.skeleton},
          {"camera", t.camera},
          {"bbox_iou", t.bbox_iou},
          {"degradation_level", t.degradation_level},
          {"degradation_seed", t.degradation_seed}};
}

TargetRecord target_from_json(const nlohmann::json& j) {
  TargetRecord t;
  j.at("image").get_to(t.image);
  j.at("skeleton").get_to(t.skeleton);
  j.at("camera").get_to(t.camera);
  j.at("bbox_iou").get_to(t.bbox_iou);
  j.at("degradation_level").get_to(t.degradation_level);
  j.at("degradation_seed").get_to(t.degradation_seed);
  return t;
}

}  // namespace

void to_json(nlohmann::json& j, const DatasetManifest& m) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : m.samples) {
    nlohmann::json targets = nlohmann::json::array();
    for (const auto& t : s.targets) targets.push_back(target_to_json(t));
    samples.push_back({{"split", s.split},
                       {"object_id", s.object_id},
                       {"object_seed", s.object_seed},
                       {"frame_index", s.frame_index},
                       {"source", s.source},
                       {"source_camera", s.source_camera},
                       {"targets", std::move(targets)}});
  }
  j = {{"schema_version", m.schema_version}, {"config", m.config}, {"samples", std::move(samples)}};
}

void from_json(const nlohmann::json& j, DatasetManifest& m) {
  j.at("schema_version").get_to(m.schema_version);
  if (m.schema_version != DatasetManifest::kSchemaVersion)
    throw DataError("unsupported manifest schema version " + std::to_string(m.schema_version));
  j.at("config").get_to(m.config);
  m.samples.clear();
  for (const auto& js : j.at("samples")) {
    SampleRecord s;
    js.at("split").get_to(s.split);
    js.at("object_id").get_to(s.object_id);
    js.at("object_seed").get_to(s.object_seed);
    js.at("frame_index").get_to(s.frame_index);
    js.at("source").get_to(s.source);
    js.at("source_camera").get_to(s.source_camera);
    for (const auto& jt : js.at("targets")) s.targets.push_back(target_from_json(jt));
    m.samples.push_back(std::move(s));
  }
}

std::string object_id_for(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "obj_%04d", index);
  return buf;
}

std::uint64_t object_seed_for(const DatasetConfig& cfg, int index) {
  return mix_seed({cfg.seed, 0x6f626aULL, static_cast<std::uint64_t>(index)});
}

DatasetManifest generate_dataset(const DatasetConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  GeneratorConfig gen = cfg.generator;
  gen.frame_count = std::max(gen.frame_count, cfg.frame_budget);

  DatasetManifest manifest;
  manifest.config = cfg;
  manifest.root = out_dir;
  const int n_test = cfg.test_object_count();
  const int n_train = cfg.objects - n_test;
  std::size_t test_target_counter = 0;

  try {
    fs::create_directories(out_dir);
    for (int oi = 0; oi < cfg.objects; ++oi) {
      const std::string split = oi < n_train ? "train" : "test";
      ArticulatedObject obj = sample_object(object_seed_for(cfg, oi), gen);
      obj.id = object_id_for(oi);
      const double bound = obj.bounding_radius();

      for (int f : cfg.frame_indices()) {
        const fs::path rel = fs::path(split) / obj.id / ("frame_" + std::to_string(f));
        fs::create_directories(out_dir / rel);
        Rng cam_rng(mix_seed({cfg.seed, 0x63616dULL, static_cast<std::uint64_t>(oi), static_cast<std::uint64_t>(f)}));
        std::vector<CameraPose> cams;
        for (int v = 0; v < cfg.views_per_frame; ++v) {
          CameraPose c;
          c.azimuth = cam_rng.uniform(0.0, 2.0 * std::numbers::pi);
          c.elevation = cam_rng.uniform(cfg.elevation_min, cfg.elevation_max);
          c.radius = cfg.camera_radius;
          c.focal = cfg.focal_factor * cfg.width;
          c.height = cfg.height;
          c.width = cfg.width;
          c.validate(bound);
          cams.push_back(c);
        }

        SampleRecord rec;
        rec.split = split;
        rec.object_id = obj.id;
        rec.object_seed = obj.seed;
        rec.frame_index = f;
        rec.source = (rel / "src.png").generic_string();
        rec.source_camera = cams[0];
        write_png(out_dir / rec.source, render_view(obj, f, cams[0], RenderMode::skin));

        for (int t = 1; t < cfg.views_per_frame; ++t) {
          TargetRecord tr;
          tr.camera = cams[static_cast<std::size_t>(t)];
          const std::string idx = std::to_string(t - 1);
          tr.image = (rel / ("tgt_" + idx + ".png")).generic_string();
          tr.skeleton = (rel / ("skel_" + idx + ".png")).generic_string();
          if (split == "test" || cfg.degrade_train) {
            tr.degradation_level = cfg.degradation_levels[test_target_counter++ % cfg.degradation_levels.size()];
          }
          tr.degradation_seed = mix_seed({cfg.seed, 0x736b6cULL, static_cast<std::uint64_t>(oi),
                                          static_cast<std::uint64_t>(f), static_cast<std::uint64_t>(t)});
          const Image img = render_view(obj, f, tr.camera, RenderMode::skin).quantized();
          const Image skel = degrade_skeleton(obj, f, tr.camera, tr.degradation_level, tr.degradation_seed).quantized();
          tr.bbox_iou = compute_bbox_iou(img, skel);
          write_png(out_dir / tr.image, img);
          write_png(out_dir / tr.skeleton, skel);
          rec.targets.push_back(std::move(tr));
        }
        manifest.samples.push_back(std::move(rec));
      }
    }
    std::sort(manifest.samples.begin(), manifest.samples.end(), [](const SampleRecord& a, const SampleRecord& b) {
      return std::tie(a.object_id, a.frame_index) < std::tie(b.object_id, b.frame_index);
    });
    write_json_file(out_dir / "manifest.json", manifest);
  } catch (const fs::filesystem_error& e) {
    throw DataError(std::string("dataset output: ") + e.what());
  }
  return manifest;
}

DatasetManifest load_manifest(const fs::path& dataset_dir) {
  const fs::path path = dataset_dir / "manifest.json";
  if (!fs::exists(path)) throw DataError("no manifest.json in " + dataset_dir.string());
  DatasetManifest m;
  try {
    read_json_file(path).get_to(m);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest " + path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw DataError("malformed manifest config in " + path.string() + ": " + e.what());
  }
  m.root = dataset_dir;
  return m;
}

ViewSample load_sample(const DatasetManifest& manifest, const SampleRecord& record) {
  ViewSample s;
  s.object_id = record.object_id;
  s.frame_index = record.frame_index;
  s.source = read_png(manifest.root / record.source);
  s.source_camera = record.source_camera;
  for (const auto& t : record.targets) {
    TargetView v;
    v.image = read_png(manifest.root / t.image);
    v.skeleton = read_png(manifest.root / t.skeleton);
    if (!v.image.same_size(s.source) || !v.skeleton.same_size(s.source))
      throw DataError("image sizes differ within sample " + record.object_id);
    v.camera = t.camera;
    v.bbox_iou = t.bbox_iou;
    v.degradation_level = t.degradation_level;
    s.targets.push_back(std::move(v));
  }
  return s;
}

}  // namespace skel3d::scenegen
