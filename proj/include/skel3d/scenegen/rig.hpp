#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "skel3d/core/geometry.hpp"
#include "skel3d/core/image.hpp"

namespace skel3d::scenegen {

struct Joint {
  int id = 0;
  std::optional<int> parent;  // nullopt for the root
  Vec3 rest_offset;           // relative to the parent; the root's offset is its origin
};

// Tree of joints. Joints are stored in topological order: joints[i].id == i,
// the root is joint 0 and every parent index is smaller than its child's.
class BoneGraph {
 public:
  BoneGraph() = default;
  explicit BoneGraph(std::vector<Joint> joints);

  const std::vector<Joint>& joints() const noexcept { return joints_; }
  int joint_count() const noexcept { return static_cast<int>(joints_.size()); }
  const Joint& joint(int i) const { return joints_.at(static_cast<std::size_t>(i)); }

 private:
  std::vector<Joint> joints_;
};

// Euler angles (radians, R = Rz * Ry * Rx) per frame per joint. Entry 0 (the
// root) is carried for indexing convenience and is always zero.
struct AnimationTrack {
  int frame_count = 0;
  std::vector<std::vector<Vec3>> frames;
};

struct BoneSkin {
  double capsule_radius = 0.1;
  Rgb color;
};

struct ArticulatedObject {
  std::string id;
  BoneGraph bones;
  std::vector<BoneSkin> skin;  // one per joint; joint j's capsule spans parent(j) -> j
  AnimationTrack animation;
  std::uint64_t seed = 0;

  // Max over frames of |joint position| + capsule radius.
  double bounding_radius() const;
};

struct GeneratorConfig {
  int min_bones = 3;  // joint count range, within [2, 16]
  int max_bones = 8;
  int frame_count = 24;
  double bone_length_min = 0.4;
  double bone_length_max = 1.0;
  double radius_min = 0.10;  // relative to the normalized extent
  double radius_max = 0.20;
  double chain_probability = 0.6;  // probability that joint j attaches to j-1
  double max_amplitude = 0.6;      // radians
  double min_period = 16.0;        // frames
  double max_period = 40.0;
  double target_extent = 1.0;  // objects are rescaled so the farthest joint sits at this distance

  void validate() const;
  // Upper bound on the per-frame change of any joint angle.
  double max_angle_step() const;
};

void to_json(nlohmann::json& j, const GeneratorConfig& cfg);
void from_json(const nlohmann::json& j, GeneratorConfig& cfg);

ArticulatedObject sample_object(std::uint64_t seed, const GeneratorConfig& cfg);

// World positions of all joints for one frame. `angles` holds one entry per
// joint; a joint's rotation turns the offsets of its whole subtree.
std::vector<Vec3> forward_kinematics(const BoneGraph& bones, std::span<const Vec3> angles);

}  // namespace skel3d::scenegen
