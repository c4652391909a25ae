// SPDX-License-Identifier: Apache-2.0
#include "nhp/geometry.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace nhp {

Camera Camera::make(const Mat3& K, const Mat3& R, const Vec3& t, int width, int height) {
  if (width <= 0 || height <= 0) throw GeometryError("camera: image size must be positive");
  if ((R * R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6 ||
      std::abs(R.determinant() - 1.0) > 1e-6) {
    throw GeometryError("camera: rotation is not orthonormal with det +1");
  }
  if (K(1, 0) != 0.0 || K(2, 0) != 0.0 || K(2, 1) != 0.0 || K(2, 2) != 1.0) {
    throw GeometryError("camera: intrinsics must be upper-triangular with K(2,2) = 1");
  }
  if (!(K(0, 0) > 0.0) || !(K(1, 1) > 0.0)) throw GeometryError("camera: focal lengths must be positive");
  Camera cam;
  cam.K = K;
  cam.R = R;
  cam.t = t;
  cam.width = width;
  cam.height = height;
  return cam;
}

bool Camera::contains(const Vec2& p) const {
  return p.x() >= -0.5 && p.y() >= -0.5 && p.x() <= width - 0.5 && p.y() <= height - 0.5;
}

Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal, int width,
               int height) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 right = forward.cross(up);
  if (right.norm() < 1e-12) throw GeometryError("look_at: up vector parallel to view direction");
  right.normalize();
  const Vec3 down = forward.cross(right);
  Mat3 R;
  R.row(0) = right.transpose();
  R.row(1) = down.transpose();
  R.row(2) = forward.transpose();
  Mat3 K = Mat3::Identity();
  K(0, 0) = focal;
  K(1, 1) = focal;
  K(0, 2) = 0.5 * (width - 1);
  K(1, 2) = 0.5 * (height - 1);
  return Camera::make(K, R, -R * eye, width, height);
}

bool Aabb::contains(const Vec3& p, double tol) const {
  return (p.array() >= min.array() - tol).all() && (p.array() <= max.array() + tol).all();
}

Projection project_unchecked(const Camera& cam, const Vec3& x) {
  const Vec3 xc = cam.R * x + cam.t;
  const Vec3 h = cam.K * xc;
  return Projection{Vec2(h.x() / h.z(), h.y() / h.z()), xc.z()};
}

Projection project_point(const Camera& cam, const Vec3& x) {
  const Vec3 xc = cam.R * x + cam.t;
  if (xc.z() <= kMinDepth) {
    std::ostringstream os;
    os << "project_point: point (" << x.transpose() << ") is behind the camera (depth " << xc.z()
       << ")";
    throw GeometryError(os.str());
  }
  const Vec3 h = cam.K * xc;
  return Projection{Vec2(h.x() / h.z(), h.y() / h.z()), xc.z()};
}

Ray generate_ray(const Camera& cam, const Vec2& pixel) {
  if (!cam.contains(pixel)) {
    std::ostringstream os;
    os << "generate_ray: pixel (" << pixel.transpose() << ") outside " << cam.width << "x"
       << cam.height << " image";
    throw GeometryError(os.str());
  }
  const Vec3 cam_dir = cam.K.inverse() * Vec3(pixel.x(), pixel.y(), 1.0);
  Ray ray;
  ray.origin = cam.center();
  ray.dir = (cam.R.transpose() * cam_dir).normalized();
  return ray;
}

Aabb body_bbox(std::span<const Vec3> vertices, double margin) {
  if (vertices.empty()) throw GeometryError("body_bbox: empty vertex list");
  Aabb box{vertices[0], vertices[0]};
  for (const auto& v : vertices) {
    box.min = box.min.cwiseMin(v);
    box.max = box.max.cwiseMax(v);
  }
  if (margin != 0.0) {
    const Vec3 c = box.center();
    const Vec3 half = 0.5 * (1.0 + margin) * box.extent();
    box.min = c - half;
    box.max = c + half;
  }
  return box;
}

std::optional<std::pair<double, double>> ray_box_bounds(const Ray& ray, const Aabb& box) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    const double o = ray.origin[i], d = ray.dir[i];
    if (d == 0.0) {
      if (o < box.min[i] || o > box.max[i]) return std::nullopt;
      continue;
    }
    double a = (box.min[i] - o) / d;
    double b = (box.max[i] - o) / d;
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
    if (t0 > t1) return std::nullopt;
  }
  if (t1 < kMinNear) return std::nullopt;
  return std::make_pair(std::max(t0, kMinNear), t1);
}

Vec3 world_to_body(const BodyPose& pose, const Vec3& x) { return pose.rotation * x + pose.translation; }

Vec3 body_to_world(const BodyPose& pose, const Vec3& x) {
  return pose.rotation.transpose() * (x - pose.translation);
}

}  // namespace nhp
