#include "skel3d/scenegen/rig.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "skel3d/core/error.hpp"
#include "skel3d/core/json_util.hpp"
#include "skel3d/core/rng.hpp"

namespace skel3d::scenegen {

BoneGraph::BoneGraph(std::vector<Joint> joints) : joints_(std::move(joints)) {
  if (joints_.empty()) throw InputError("bone graph has no joints");
  for (std::size_t i = 0; i < joints_.size(); ++i) {
    const Joint& j = joints_[i];
    if (j.id != static_cast<int>(i)) throw InputError("joint ids must equal their index");
    if (i == 0) {
      if (j.parent) throw InputError("joint 0 must be the root");
    } else if (!j.parent || *j.parent < 0 || *j.parent >= j.id) {
      throw InputError("joint " + std::to_string(i) + " must have a parent with a smaller id");
    }
    if (!j.rest_offset.finite()) throw InputError("non-finite rest offset");
  }
}

double ArticulatedObject::bounding_radius() const {
  double r = 0.0;
  for (const auto& frame : animation.frames) {
    const auto pos = forward_kinematics(bones, frame);
    for (std::size_t j = 0; j < pos.size(); ++j) r = std::max(r, pos[j].norm() + skin[j].capsule_radius);
  }
  return r;
}

void GeneratorConfig::validate() const {
  if (min_bones < 2 || max_bones > 16 || min_bones > max_bones)
    throw ConfigError("bone count range must satisfy 2 <= min <= max <= 16");
  if (frame_count < 1) throw ConfigError("frame_count must be positive");
  if (!(bone_length_min > 0.0) || bone_length_min > bone_length_max) throw ConfigError("invalid bone length range");
  if (!(radius_min > 0.0) || radius_min > radius_max) throw ConfigError("invalid capsule radius range");
  if (chain_probability < 0.0 || chain_probability > 1.0) throw ConfigError("chain_probability must be in [0, 1]");
  if (max_amplitude < 0.0) throw ConfigError("max_amplitude must be non-negative");
  if (!(min_period > 0.0) || min_period > max_period) throw ConfigError("invalid period range");
  if (!(target_extent > 0.0)) throw ConfigError("target_extent must be positive");
}

double GeneratorConfig::max_angle_step() const { return max_amplitude * 2.0 * std::numbers::pi / min_period; }

void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = {{"min_bones", c.min_bones},
       {"max_bones", c.max_bones},
       {"frame_count", c.frame_count},
       {"bone_length_min", c.bone_length_min},
       {"bone_length_max", c.bone_length_max},
       {"radius_min", c.radius_min},
       {"radius_max", c.radius_max},
       {"chain_probability", c.chain_probability},
       {"max_amplitude", c.max_amplitude},
       {"min_period", c.min_period},
       {"max_period", c.max_period},
       {"target_extent", c.target_extent}};
}

void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  require_known_keys(j,
                     {"min_bones", "max_bones", "frame_count", "bone_length_min", "bone_length_max", "radius_min",
                      "radius_max", "chain_probability", "max_amplitude", "min_period", "max_period", "target_extent"},
                     "generator");
  c.min_bones = j.value("min_bones", c.min_bones);
  c.max_bones = j.value("max_bones", c.max_bones);
  c.frame_count = j.value("frame_count", c.frame_count);
  c.bone_length_min = j.value("bone_length_min", c.bone_length_min);
  c.bone_length_max = j.value("bone_length_max", c.bone_length_max);
  c.radius_min = j.value("radius_min", c.radius_min);
  c.radius_max = j.value("radius_max", c.radius_max);
  c.chain_probability = j.value("chain_probability", c.chain_probability);
  c.max_amplitude = j.value("max_amplitude", c.max_amplitude);
  c.min_period = j.value("min_period", c.min_period);
  c.max_period = j.value("max_period", c.max_period);
  c.target_extent = j.value("target_extent", c.target_extent);
}

namespace {

Vec3 random_direction(Rng& rng) {
  const double z = rng.uniform(-1.0, 1.0);
  const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {s * std::cos(phi), s * std::sin(phi), z};
}

}  // namespace

ArticulatedObject sample_object(std::uint64_t seed, const GeneratorConfig& cfg) {
  cfg.validate();
  Rng rng(mix_seed({seed, 0x736b656cULL}));

  const int n = rng.uniform_int(cfg.min_bones, cfg.max_bones);
  std::vector<Joint> joints;
  joints.push_back({0, std::nullopt, Vec3{}});
  for (int j = 1; j < n; ++j) {
    const int parent = (j == 1 || rng.bernoulli(cfg.chain_probability)) ? j - 1 : rng.uniform_int(0, j - 1);
    // Bias limbs away from pointing straight back into their parent.
    Vec3 dir = random_direction(rng);
    if (parent > 0) {
      const Vec3 parent_dir = joints[static_cast<std::size_t>(parent)].rest_offset.normalized();
      dir = (dir + parent_dir * 0.8).normalized();
    }
    joints.push_back({j, parent, dir * rng.uniform(cfg.bone_length_min, cfg.bone_length_max)});
  }

  ArticulatedObject obj;
  obj.seed = seed;
  obj.id = "obj_" + std::to_string(seed);
  obj.skin.resize(static_cast<std::size_t>(n));
  for (auto& s : obj.skin) {
    s.capsule_radius = rng.uniform(cfg.radius_min, cfg.radius_max);
    s.color = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
  }

  struct Wave {
    Vec3 amplitude, phase, offset;
    double period;
  };
  std::vector<Wave> waves(static_cast<std::size_t>(n));
  for (int j = 1; j < n; ++j) {
    Wave& w = waves[static_cast<std::size_t>(j)];
    w.amplitude = {rng.uniform(0.0, cfg.max_amplitude), rng.uniform(0.0, cfg.max_amplitude),
                   rng.uniform(0.0, cfg.max_amplitude)};
    w.phase = {rng.uniform(0.0, 2.0 * std::numbers::pi), rng.uniform(0.0, 2.0 * std::numbers::pi),
               rng.uniform(0.0, 2.0 * std::numbers::pi)};
    w.offset = {rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)};
    w.period = rng.uniform(cfg.min_period, cfg.max_period);
  }
  obj.animation.frame_count = cfg.frame_count;
  obj.animation.frames.assign(static_cast<std::size_t>(cfg.frame_count), std::vector<Vec3>(static_cast<std::size_t>(n)));
  for (int f = 0; f < cfg.frame_count; ++f) {
    for (int j = 1; j < n; ++j) {
      const Wave& w = waves[static_cast<std::size_t>(j)];
      const double t = 2.0 * std::numbers::pi * f / w.period;
      obj.animation.frames[static_cast<std::size_t>(f)][static_cast<std::size_t>(j)] = {
          w.offset.x + w.amplitude.x * std::sin(t + w.phase.x), w.offset.y + w.amplitude.y * std::sin(t + w.phase.y),
          w.offset.z + w.amplitude.z * std::sin(t + w.phase.z)};
    }
  }

  // Rescale so that the farthest joint over the whole animation sits at target_extent.
  obj.bones = BoneGraph(joints);
  double extent = 0.0;
  for (const auto& frame : obj.animation.frames) {
    for (const Vec3& p : forward_kinematics(obj.bones, frame)) extent = std::max(extent, p.norm());
  }
  const double s = cfg.target_extent / extent;
  for (Joint& j : joints) j.rest_offset = j.rest_offset * s;
  obj.bones = BoneGraph(std::move(joints));
  return obj;
}

std::vector<Vec3> forward_kinematics(const BoneGraph& bones, std::span<const Vec3> angles) {
  const int n = bones.joint_count();
  if (static_cast<int>(angles.size()) < n) {
    throw InputError("forward_kinematics: " + std::to_string(angles.size()) + " joint angles for " +
                     std::to_string(n) + " joints");
  }
  std::vector<Vec3> pos(static_cast<std::size_t>(n));
  std::vector<Mat3> rot(static_cast<std::size_t>(n));
  pos[0] = bones.joint(0).rest_offset;
  rot[0] = Mat3::identity();
  for (int j = 1; j < n; ++j) {
    const Vec3& a = angles[static_cast<std::size_t>(j)];
    if (!a.finite()) throw InputError("forward_kinematics: non-finite angle for joint " + std::to_string(j));
    const auto p = static_cast<std::size_t>(*bones.joint(j).parent);
    pos[static_cast<std::size_t>(j)] = pos[p] + rot[p] * bones.joint(j).rest_offset;
    rot[static_cast<std::size_t>(j)] = rot[p] * Mat3::from_euler(a);
  }
  return pos;
}

}  // namespace skel3d::scenegen
