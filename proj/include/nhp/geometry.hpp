// SPDX-License-Identifier: Apache-2.0
//
// Pinhole cameras, rays and axis-aligned boxes.
//
// Conventions: x_cam = R * x_world + t; pixel centres sit at integer
// coordinates with the origin at the top-left pixel; the camera looks down +z
// with +y pointing down the image.
#pragma once

#include <Eigen/Core>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>

namespace nhp {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Camera {
  Mat3 K = Mat3::Identity();
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  int width = 0;
  int height = 0;

  // Validates the invariants (orthonormal R with det +1, upper-triangular K
  // with positive focal lengths, positive image size).
  static Camera make(const Mat3& K, const Mat3& R, const Vec3& t, int width, int height);

  Vec3 center() const { return -R.transpose() * t; }
  bool contains(const Vec2& pixel) const;
};

// Camera on a ring looking at target; up is the world up vector.
Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal, int width,
               int height);

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 dir = Vec3::UnitZ();
  double z_near = 0.0;
  double z_far = 0.0;

  Vec3 at(double z) const { return origin + z * dir; }
};

struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  Vec3 extent() const { return max - min; }
  Vec3 center() const { return 0.5 * (min + max); }
  bool contains(const Vec3& p, double tol = 0.0) const;
};

// Rigid transform from world to the body-local frame.
struct BodyPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
};

struct Projection {
  Vec2 pixel;
  double depth = 0.0;
};

inline constexpr double kMinDepth = 1e-9;
inline constexpr double kMinNear = 1e-6;
inline constexpr double kDefaultBoxMargin = 0.025;

// Throws GeometryError when the point is not in front of the camera.
Projection project_point(const Camera& cam, const Vec3& x);
// Same projection without the depth check; depth is returned as-is.
Projection project_unchecked(const Camera& cam, const Vec3& x);

// Ray through a pixel (bounds unset). Throws GeometryError when the pixel
// lies outside the image rectangle [-0.5, W-0.5] x [-0.5, H-0.5].
Ray generate_ray(const Camera& cam, const Vec2& pixel);

// Tight box of the vertices with every side scaled by (1 + margin) about the
// box centre.
Aabb body_bbox(std::span<const Vec3> vertices, double margin = kDefaultBoxMargin);

// Slab test; entry is clamped to kMinNear. nullopt when the ray misses or the
// box lies entirely behind the origin.
std::optional<std::pair<double, double>> ray_box_bounds(const Ray& ray, const Aabb& box);

Vec3 world_to_body(const BodyPose& pose, const Vec3& x);
Vec3 body_to_world(const BodyPose& pose, const Vec3& x);

}  // namespace nhp
