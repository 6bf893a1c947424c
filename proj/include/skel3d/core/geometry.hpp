#pragma once

#include <array>
#include <cmath>

#include <json.hpp>

namespace skel3d {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const { return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x}; }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const {
    const double n = norm();
    return n > 0.0 ? *this * (1.0 / n) : Vec3{};
  }
  bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }

  friend bool operator==(const Vec3&, const Vec3&) = default;
};

// Row-major 3x3 matrix.
struct Mat3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Mat3 identity() { return {}; }
  static Mat3 rotation_x(double a);
  static Mat3 rotation_y(double a);
  static Mat3 rotation_z(double a);
  // R = Rz(angles.z) * Ry(angles.y) * Rx(angles.x).
  static Mat3 from_euler(const Vec3& angles);

  double operator()(int r, int c) const { return m[static_cast<std::size_t>(r * 3 + c)]; }
  Mat3 operator*(const Mat3& o) const;
  Vec3 operator*(const Vec3& v) const;
};

// Orbit camera looking at the world origin. Azimuth 0 / elevation 0 places the
// camera at (0, 0, radius) looking down -z with +y up.
struct CameraPose {
  double azimuth = 0.0;    // radians, about +y
  double elevation = 0.0;  // radians
  double radius = 3.0;     // scene units
  double focal = 70.0;     // pixels
  int height = 64;
  int width = 64;

  // Throws InputError when the pose is unusable for an object of the given bounding radius.
  void validate(double bounding_radius = 0.0) const;

  friend bool operator==(const CameraPose&, const CameraPose&) = default;
};

void to_json(nlohmann::json& j, const CameraPose& cam);
void from_json(const nlohmann::json& j, CameraPose& cam);

struct CameraFrame {
  Vec3 position;
  Vec3 right;
  Vec3 up;
  Vec3 forward;
};

CameraFrame camera_frame(const CameraPose& cam);

struct Projection {
  double u = 0.0;  // pixel column coordinate; pixel x covers [x, x + 1)
  double v = 0.0;  // pixel row coordinate
  double depth = 0.0;
};

Projection project(const CameraPose& cam, const CameraFrame& frame, const Vec3& p);

}  // namespace skel3d
