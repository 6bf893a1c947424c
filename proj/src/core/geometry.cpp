#include "skel3d/core/geometry.hpp"

#include "skel3d/core/error.hpp"

namespace skel3d {

Mat3 Mat3::rotation_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  return {{1, 0, 0, 0, c, -s, 0, s, c}};
}

Mat3 Mat3::rotation_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  return {{c, 0, s, 0, 1, 0, -s, 0, c}};
}

Mat3 Mat3::rotation_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  return {{c, -s, 0, s, c, 0, 0, 0, 1}};
}

Mat3 Mat3::from_euler(const Vec3& angles) {
  return rotation_z(angles.z) * rotation_y(angles.y) * rotation_x(angles.x);
}

Mat3 Mat3::operator*(const Mat3& o) const {
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
      r.m[static_cast<std::size_t>(i * 3 + j)] = s;
    }
  return r;
}

Vec3 Mat3::operator*(const Vec3& v) const {
  return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
          m[6] * v.x + m[7] * v.y + m[8] * v.z};
}

void CameraPose::validate(double bounding_radius) const {
  if (height < 16 || width < 16) throw InputError("camera image size must be at least 16x16");
  if (!(focal > 0.0) || !std::isfinite(focal)) throw InputError("camera focal length must be positive");
  if (!(radius > bounding_radius)) throw InputError("camera radius must exceed the object bounding radius");
  if (!std::isfinite(azimuth) || !(std::abs(elevation) < 1.5)) throw InputError("camera elevation must be within (-1.5, 1.5) rad");
}

void to_json(nlohmann::json& j, const CameraPose& cam) {
  j = {{"azimuth", cam.azimuth}, {"elevation", cam.elevation}, {"radius", cam.radius},
       {"focal", cam.focal},     {"height", cam.height},       {"width", cam.width}};
}

void from_json(const nlohmann::json& j, CameraPose& cam) {
  j.at("azimuth").get_to(cam.azimuth);
  j.at("elevation").get_to(cam.elevation);
  j.at("radius").get_to(cam.radius);
  j.at("focal").get_to(cam.focal);
  j.at("height").get_to(cam.height);
  j.at("width").get_to(cam.width);
}

CameraFrame camera_frame(const CameraPose& cam) {
  CameraFrame f;
  const double ce = std::cos(cam.elevation);
  f.position = Vec3{ce * std::sin(cam.azimuth), std::sin(cam.elevation), ce * std::cos(cam.azimuth)} * cam.radius;
  f.forward = (-f.position).normalized();
  f.right = f.forward.cross(Vec3{0, 1, 0}).normalized();
  f.up = f.right.cross(f.forward);
  return f;
}

Projection project(const CameraPose& cam, const CameraFrame& frame, const Vec3& p) {
  const Vec3 rel = p - frame.position;
  Projection out;
  out.depth = rel.dot(frame.forward);
  out.u = 0.5 * cam.width + cam.focal * rel.dot(frame.right) / out.depth;
  out.v = 0.5 * cam.height - cam.focal * rel.dot(frame.up) / out.depth;
  return out;
}

}  // namespace skel3d
