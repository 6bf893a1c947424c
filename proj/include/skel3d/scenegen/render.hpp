#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "skel3d/core/geometry.hpp"
#include "skel3d/core/image.hpp"
#include "skel3d/scenegen/rig.hpp"

namespace skel3d::scenegen {

enum class RenderMode { skin, skeleton };

// Skeleton primitives are sized relative to the bone's capsule radius.
inline constexpr double kJointDiskScale = 0.5;
inline constexpr double kSegmentScale = 0.2;
// Foreground = max-channel deviation from white above this.
inline constexpr double kForegroundThreshold = 2.0 / 255.0;

Image render_view(const ArticulatedObject& obj, int frame_index, const CameraPose& cam, RenderMode mode);

// Skeleton render after jittering projected joints (sigma = level * 0.15 * width)
// and dropping each non-root bone with probability level / 2.
Image degrade_skeleton(const ArticulatedObject& obj, int frame_index, const CameraPose& cam, double level,
                       std::uint64_t seed);

// Half-open pixel box [x0, x1) x [y0, y1).
struct PixelBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  long area() const { return static_cast<long>(x1 - x0) * (y1 - y0); }
  friend bool operator==(const PixelBox&, const PixelBox&) = default;
};

std::optional<PixelBox> foreground_bbox(const Image& img);
double box_iou(const std::optional<PixelBox>& a, const std::optional<PixelBox>& b);
double compute_bbox_iou(const Image& object_img, const Image& skeleton_img);

// Fixed, index-keyed palette for skeleton joints.
Rgb joint_color(int joint);

}  // namespace skel3d::scenegen
