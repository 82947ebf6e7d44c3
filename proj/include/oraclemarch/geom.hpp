// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "oraclemarch/error.hpp"

namespace oraclemarch {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

/// The region of camera positions and orientations a trained model supports:
/// an axis-aligned box plus a primary viewing direction with symmetric
/// pitch/yaw limits around it.
class ViewCell {
 public:
  ViewCell(const Vec3& center, const Vec3& size, const Vec3& forward, double max_pitch_deg,
           double max_yaw_deg)
      : center_(center),
        size_(size),
        forward_(forward),
        max_pitch_deg_(max_pitch_deg),
        max_yaw_deg_(max_yaw_deg) {
    require(size.x() > 0 && size.y() > 0 && size.z() > 0, ErrorCode::InvalidViewCell,
            "view cell size must be positive in every axis");
    require(std::abs(forward.norm() - 1.0) <= 1e-9, ErrorCode::InvalidViewCell,
            "view cell forward must be a unit vector");
    require(max_pitch_deg >= 0 && max_pitch_deg <= 90 && max_yaw_deg >= 0 && max_yaw_deg <= 90,
            ErrorCode::InvalidViewCell, "rotation limits must lie in [0, 90] degrees");

    Vec3 up_hint(0, 1, 0);
    if (std::abs(forward_.dot(up_hint)) > 0.999) up_hint = Vec3(0, 0, 1);
    right_ = forward_.cross(up_hint).normalized();
    up_ = right_.cross(forward_);
  }

  const Vec3& center() const { return center_; }
  const Vec3& size() const { return size_; }
  const Vec3& forward() const { return forward_; }
  /// Orthonormal frame completing `forward`: right-handed (right, up, -forward).
  const Vec3& right() const { return right_; }
  const Vec3& up() const { return up_; }
  double max_pitch_deg() const { return max_pitch_deg_; }
  double max_yaw_deg() const { return max_yaw_deg_; }

  Vec3 box_min() const { return center_ - 0.5 * size_; }
  Vec3 box_max() const { return center_ + 0.5 * size_; }

  bool contains(const Vec3& p, double tol = 1e-9) const {
    const Vec3 lo = box_min(), hi = box_max();
    for (int k = 0; k < 3; ++k)
      if (p[k] < lo[k] - tol || p[k] > hi[k] + tol) return false;
    return true;
  }

  std::array<Vec3, 8> corners() const {
    std::array<Vec3, 8> out;
    const Vec3 half = 0.5 * size_;
    for (int i = 0; i < 8; ++i) {
      out[i] = center_ + Vec3((i & 1) ? half.x() : -half.x(), (i & 2) ? half.y() : -half.y(),
                              (i & 4) ? half.z() : -half.z());
    }
    return out;
  }

 private:
  Vec3 center_;
  Vec3 size_;
  Vec3 forward_;
  double max_pitch_deg_;
  double max_yaw_deg_;
  Vec3 right_;
  Vec3 up_;
};

struct Ray {
  Vec3 origin;
  Vec3 direction;
};

struct Sphere {
  Vec3 center;
  double radius;
};

/// A ray re-origined onto the circumscribed sphere of a view cell. Rays on the
/// same oriented line map to the same UnifiedRay. `offset` is the distance the
/// origin moved backwards, i.e. camera depth = unified depth - offset.
struct UnifiedRay {
  Vec3 origin;
  Vec3 direction;
  Vec3 sphere_center;
  double sphere_radius;
  double offset;
};

struct Pose {
  Vec3 position;
  double yaw_deg = 0;
  double pitch_deg = 0;
  double fov_deg = 60;
  /// Camera-to-world rotation; columns are camera right, up and viewing direction.
  Mat3 rotation = Mat3::Identity();

  Vec3 right() const { return rotation.col(0); }
  Vec3 up() const { return rotation.col(1); }
  Vec3 view_direction() const { return rotation.col(2); }
};

inline Sphere circumscribed_sphere(const ViewCell& cell) {
  return {cell.center(), (0.5 * cell.size()).norm()};
}

/// Moves the ray origin backwards along the ray to the sphere entry point.
inline UnifiedRay unify_ray(const Ray& ray, const Sphere& sphere) {
  const Vec3 m = ray.origin - sphere.center;
  const double r2 = sphere.radius * sphere.radius;
  const double m2 = m.squaredNorm();
  require(m2 <= r2 * (1.0 + 1e-12), ErrorCode::OriginOutsideSphere,
          "ray origin lies outside the circumscribed sphere");
  // |m - t d|^2 = r^2, larger root; both terms are >= 0 so there is no cancellation.
  const double b = m.dot(ray.direction);
  const double disc = std::max(0.0, b * b + (r2 - m2));
  double t = b + std::sqrt(disc);
  if (b < 0) {
    // b + sqrt(b^2 + c) with b < 0 cancels; use the conjugate form c / (sqrt(.) - b).
    const double c = std::max(0.0, r2 - m2);
    t = c / (std::sqrt(disc) - b);
  }
  UnifiedRay out;
  out.origin = ray.origin - t * ray.direction;
  out.direction = ray.direction;
  out.sphere_center = sphere.center;
  out.sphere_radius = sphere.radius;
  out.offset = t;
  return out;
}

/// Builds a pose from raw angles; the rotation is relative to the cell frame.
inline Pose make_pose(const ViewCell& cell, const Vec3& position, double yaw_deg,
                      double pitch_deg, double fov_deg) {
  Pose pose;
  pose.position = position;
  pose.yaw_deg = yaw_deg;
  pose.pitch_deg = pitch_deg;
  pose.fov_deg = fov_deg;
  const double y = deg_to_rad(yaw_deg), p = deg_to_rad(pitch_deg);
  const Vec3 heading = std::cos(y) * cell.forward() + std::sin(y) * cell.right();
  const Vec3 dir = std::cos(p) * heading + std::sin(p) * cell.up();
  const Vec3 right = std::cos(y) * cell.right() - std::sin(y) * cell.forward();
  const Vec3 up = right.cross(dir);
  pose.rotation.col(0) = right;
  pose.rotation.col(1) = up;
  pose.rotation.col(2) = dir;
  return pose;
}

inline bool pose_in_cell(const ViewCell& cell, const Pose& pose) {
  return cell.contains(pose.position) && std::abs(pose.yaw_deg) <= cell.max_yaw_deg() + 1e-9 &&
         std::abs(pose.pitch_deg) <= cell.max_pitch_deg() + 1e-9;
}

inline void validate_pose(const ViewCell& cell, const Pose& pose) {
  require(pose_in_cell(cell, pose), ErrorCode::PoseOutsideViewCell,
          "pose lies outside the view cell or its rotation limits");
}

struct ClampedPose {
  Pose pose;
  bool clamped;
};

inline ClampedPose clamp_pose(const ViewCell& cell, const Pose& pose) {
  const Vec3 lo = cell.box_min(), hi = cell.box_max();
  Vec3 p = pose.position;
  for (int k = 0; k < 3; ++k) p[k] = std::clamp(p[k], lo[k], hi[k]);
  const double yaw = std::clamp(pose.yaw_deg, -cell.max_yaw_deg(), cell.max_yaw_deg());
  const double pitch = std::clamp(pose.pitch_deg, -cell.max_pitch_deg(), cell.max_pitch_deg());
  const bool clamped = p != pose.position || yaw != pose.yaw_deg || pitch != pose.pitch_deg;
  return {make_pose(cell, p, yaw, pitch, pose.fov_deg), clamped};
}

inline Pose sample_pose(const ViewCell& cell, double fov_deg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vec3 p;
  for (int k = 0; k < 3; ++k) p[k] = cell.center()[k] + (unit(rng) - 0.5) * cell.size()[k];
  const double yaw = (2.0 * unit(rng) - 1.0) * cell.max_yaw_deg();
  const double pitch = (2.0 * unit(rng) - 1.0) * cell.max_pitch_deg();
  return make_pose(cell, p, yaw, pitch, fov_deg);
}

/// Ray through normalized screen coordinates, sx right and sy up, both in [-1, 1]
/// at the image edges. The fov is vertical.
inline Ray camera_ray(const Pose& pose, double sx, double sy, double aspect = 1.0) {
  const double tan_half = std::tan(0.5 * deg_to_rad(pose.fov_deg));
  const Vec3 d = pose.view_direction() + sx * tan_half * aspect * pose.right() +
                 sy * tan_half * pose.up();
  return {pose.position, d.normalized()};
}

inline Ray pixel_ray(const Pose& pose, int px, int py, int width, int height) {
  require(width > 0 && height > 0 && px >= 0 && px < width && py >= 0 && py < height,
          ErrorCode::PixelOutOfBounds, "pixel (" + std::to_string(px) + "," +
                                           std::to_string(py) + ") outside image");
  const double sx = 2.0 * (px + 0.5) / width - 1.0;
  const double sy = 1.0 - 2.0 * (py + 0.5) / height;
  return camera_ray(pose, sx, sy, static_cast<double>(width) / height);
}

}  // namespace oraclemarch
