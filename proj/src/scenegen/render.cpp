#include "skel3d/scenegen/render.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "skel3d/core/error.hpp"
#include "skel3d/core/rng.hpp"

namespace skel3d::scenegen {

namespace {

constexpr double kNearDepth = 1e-6;

// A capsule in image space whose radius varies linearly from ra to rb; a == b gives a disk.
struct Primitive {
  double ax, ay, bx, by;
  double ra, rb;
  double depth;
  Rgb color;
};

void draw(Image& img, const Primitive& p) {
  const double rmax = std::max(p.ra, p.rb);
  if (!(rmax > 0.0)) return;
  const int x0 = std::max(0, static_cast<int>(std::floor(std::min(p.ax, p.bx) - rmax - 1.0)));
  const int x1 = std::min(img.width(), static_cast<int>(std::ceil(std::max(p.ax, p.bx) + rmax + 1.0)));
  const int y0 = std::max(0, static_cast<int>(std::floor(std::min(p.ay, p.by) - rmax - 1.0)));
  const int y1 = std::min(img.height(), static_cast<int>(std::ceil(std::max(p.ay, p.by) + rmax + 1.0)));
  const double dx = p.bx - p.ax, dy = p.by - p.ay;
  const double len2 = dx * dx + dy * dy;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      const double px = x + 0.5 - p.ax, py = y + 0.5 - p.ay;
      const double t = len2 > 0.0 ? std::clamp((px * dx + py * dy) / len2, 0.0, 1.0) : 0.0;
      const double ex = px - t * dx, ey = py - t * dy;
      const double d = std::sqrt(ex * ex + ey * ey);
      const double r = p.ra + t * (p.rb - p.ra);
      const double alpha = std::clamp(r + 0.5 - d, 0.0, 1.0);
      if (alpha <= 0.0) continue;
      img.at(y, x, 0) += alpha * (p.color.r - img.at(y, x, 0));
      img.at(y, x, 1) += alpha * (p.color.g - img.at(y, x, 1));
      img.at(y, x, 2) += alpha * (p.color.b - img.at(y, x, 2));
    }
  }
}

Image rasterize(std::vector<Primitive> prims, const CameraPose& cam) {
  // Far to near; stable so equal depths keep submission order.
  std::stable_sort(prims.begin(), prims.end(), [](const Primitive& a, const Primitive& b) { return a.depth > b.depth; });
  Image img(cam.height, cam.width);
  for (const Primitive& p : prims) draw(img, p);
  return img;
}

std::vector<Projection> project_joints(const ArticulatedObject& obj, int frame_index, const CameraPose& cam) {
  if (frame_index < 0 || frame_index >= obj.animation.frame_count)
    throw InputError("frame index " + std::to_string(frame_index) + " out of range");
  cam.validate();
  const auto world = forward_kinematics(obj.bones, obj.animation.frames[static_cast<std::size_t>(frame_index)]);
  const CameraFrame frame = camera_frame(cam);
  std::vector<Projection> proj;
  proj.reserve(world.size());
  bool any_in_front = false;
  for (const Vec3& p : world) {
    proj.push_back(project(cam, frame, p));
    any_in_front = any_in_front || proj.back().depth > kNearDepth;
  }
  if (!any_in_front) throw RenderError("object is entirely behind the camera");
  return proj;
}

Rgb darker(const Rgb& c) { return {c.r * 0.45, c.g * 0.45, c.b * 0.45}; }

Image render_skeleton(const ArticulatedObject& obj, const std::vector<Projection>& proj, const std::vector<bool>& keep,
                      const CameraPose& cam) {
  std::vector<Primitive> prims;
  const auto& joints = obj.bones.joints();
  for (std::size_t j = 0; j < joints.size(); ++j) {
    if (!keep[j]) continue;
    const Projection& q = proj[j];
    const double radius = obj.skin[j].capsule_radius;
    if (j > 0) {
      const Projection& p = proj[static_cast<std::size_t>(*joints[j].parent)];
      if (p.depth > kNearDepth && q.depth > kNearDepth) {
        const double w = kSegmentScale * radius * cam.focal;
        prims.push_back({p.u, p.v, q.u, q.v, w / p.depth, w / q.depth, 0.5 * (p.depth + q.depth),
                         darker(joint_color(static_cast<int>(j)))});
      }
    }
    if (q.depth > kNearDepth) {
      const double r = kJointDiskScale * radius * cam.focal / q.depth;
      // Disks sit slightly in front of the segments that meet them.
      prims.push_back({q.u, q.v, q.u, q.v, r, r, q.depth - 1e-9, joint_color(static_cast<int>(j))});
    }
  }
  return rasterize(std::move(prims), cam);
}

Image render_skin(const ArticulatedObject& obj, const std::vector<Projection>& proj, const CameraPose& cam) {
  std::vector<Primitive> prims;
  const auto& joints = obj.bones.joints();
  for (std::size_t j = 0; j < joints.size(); ++j) {
    const Projection& q = proj[j];
    const double radius = obj.skin[j].capsule_radius;
    if (q.depth <= kNearDepth) continue;
    if (j == 0) {
      const double r = radius * cam.focal / q.depth;
      prims.push_back({q.u, q.v, q.u, q.v, r, r, q.depth, obj.skin[j].color});
      continue;
    }
    const Projection& p = proj[static_cast<std::size_t>(*joints[j].parent)];
    if (p.depth <= kNearDepth) continue;
    prims.push_back({p.u, p.v, q.u, q.v, radius * cam.focal / p.depth, radius * cam.focal / q.depth,
                     0.5 * (p.depth + q.depth), obj.skin[j].color});
  }
  return rasterize(std::move(prims), cam);
}

}  // namespace

Rgb joint_color(int joint) {
  // Evenly spaced hues, alternating brightness so neighbours stay distinguishable.
  const double h = std::fmod(joint * 0.381966, 1.0) * 6.0;
  const double v = (joint % 2 == 0) ? 0.85 : 0.6;
  const double f = h - std::floor(h);
  const double p = v * 0.15, q = v * (1.0 - 0.85 * f), t = v * (0.15 + 0.85 * f);
  switch (static_cast<int>(h) % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

Image render_view(const ArticulatedObject& obj, int frame_index, const CameraPose& cam, RenderMode mode) {
  const auto proj = project_joints(obj, frame_index, cam);
  if (mode == RenderMode::skin) return render_skin(obj, proj, cam);
  return render_skeleton(obj, proj, std::vector<bool>(proj.size(), true), cam);
}

Image degrade_skeleton(const ArticulatedObject& obj, int frame_index, const CameraPose& cam, double level,
                       std::uint64_t seed) {
  if (!(level >= 0.0 && level <= 1.0)) throw InputError("degradation level must be in [0, 1]");
  auto proj = project_joints(obj, frame_index, cam);
  std::vector<bool> keep(proj.size(), true);
  if (level > 0.0) {
    Rng rng(mix_seed({seed, 0x64656772ULL}));
    const double sigma = level * 0.15 * cam.width;
    for (Projection& p : proj) {
      p.u += sigma * rng.normal();
      p.v += sigma * rng.normal();
    }
    for (std::size_t j = 1; j < keep.size(); ++j) keep[j] = !rng.bernoulli(level / 2.0);
  }
  return render_skeleton(obj, proj, keep, cam);
}

std::optional<PixelBox> foreground_bbox(const Image& img) {
  std::optional<PixelBox> box;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const double dev = std::max({1.0 - img.at(y, x, 0), 1.0 - img.at(y, x, 1), 1.0 - img.at(y, x, 2)});
      if (!(dev > kForegroundThreshold)) continue;
      if (!box) {
        box = PixelBox{x, y, x + 1, y + 1};
      } else {
        box->x0 = std::min(box->x0, x);
        box->y0 = std::min(box->y0, y);
        box->x1 = std::max(box->x1, x + 1);
        box->y1 = std::max(box->y1, y + 1);
      }
    }
  }
  return box;
}

double box_iou(const std::optional<PixelBox>& a, const std::optional<PixelBox>& b) {
  if (!a && !b) return 1.0;
  if (!a || !b) return 0.0;
  const int iw = std::max(0, std::min(a->x1, b->x1) - std::max(a->x0, b->x0));
  const int ih = std::max(0, std::min(a->y1, b->y1) - std::max(a->y0, b->y0));
  const double inter = static_cast<double>(iw) * ih;
  const double uni = static_cast<double>(a->area()) + static_cast<double>(b->area()) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double compute_bbox_iou(const Image& object_img, const Image& skeleton_img) {
  if (!object_img.same_size(skeleton_img)) throw InputError("compute_bbox_iou: image sizes differ");
  return box_iou(foreground_bbox(object_img), foreground_bbox(skeleton_img));
}

}  // namespace skel3d::scenegen
