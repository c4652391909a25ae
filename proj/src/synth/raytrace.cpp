// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "nhp/parallel.hpp"
#include "nhp/synth.hpp"

namespace nhp {

namespace {

constexpr double kHitEps = 1e-9;

// Smallest root > kHitEps of |o + s d - c|^2 = r^2 (d unit).
std::optional<double> intersect_sphere(const Vec3& o, const Vec3& d, const Vec3& c, double r) {
  const Vec3 oc = o - c;
  const double b = oc.dot(d);
  const double disc = b * b - (oc.squaredNorm() - r * r);
  if (disc < 0) return std::nullopt;
  const double sq = std::sqrt(disc);
  const double s0 = -b - sq, s1 = -b + sq;
  if (s0 > kHitEps) return s0;
  if (s1 > kHitEps) return s1;
  return std::nullopt;
}

void keep_min(std::optional<double>& best, std::optional<double> cand) {
  if (cand && (!best || *cand < *best)) best = cand;
}

Vec3 closest_on_segment(const Vec3& p, const Capsule& cap) {
  const Vec3 ab = cap.b - cap.a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0.0) return cap.a;
  const double u = std::clamp((p - cap.a).dot(ab) / len2, 0.0, 1.0);
  return cap.a + u * ab;
}

}  // namespace

std::optional<double> intersect_capsule(const Vec3& origin, const Vec3& dir, const Capsule& cap) {
  std::optional<double> best;
  keep_min(best, intersect_sphere(origin, dir, cap.a, cap.radius));
  keep_min(best, intersect_sphere(origin, dir, cap.b, cap.radius));
  const Vec3 ab = cap.b - cap.a;
  const double len = ab.norm();
  if (len == 0.0) return best;
  const Vec3 axis = ab / len;
  // Infinite cylinder around the axis, restricted to the segment.
  const Vec3 oc = origin - cap.a;
  const Vec3 dp = dir - dir.dot(axis) * axis;
  const Vec3 op = oc - oc.dot(axis) * axis;
  const double a = dp.squaredNorm();
  if (a > 0.0) {
    const double b = op.dot(dp);
    const double c = op.squaredNorm() - cap.radius * cap.radius;
    const double disc = b * b - a * c;
    if (disc >= 0) {
      const double sq = std::sqrt(disc);
      for (double s : {(-b - sq) / a, (-b + sq) / a}) {
        if (s <= kHitEps) continue;
        const double h = (oc + s * dir).dot(axis);
        if (h >= 0.0 && h <= len) keep_min(best, s);
      }
    }
  }
  return best;
}

GroundTruth render_gt(const BodyFrame& frame, const SubjectSpec& spec, const Camera& cam,
                      const Shading& shading, int threads) {
  GroundTruth gt{Image(cam.width, cam.height), Mask(cam.width, cam.height)};
  if (spec.bones.empty()) return gt;
  const auto caps = posed_capsules(spec, frame);
  // Axial stripes are defined in the bone's own frame so they move with it.
  const Vec3 light = shading.light_dir.normalized();
  parallel_for(static_cast<std::size_t>(cam.height), threads, [&](std::size_t y0, std::size_t y1) {
    for (std::size_t y = y0; y < y1; ++y) {
      for (int x = 0; x < cam.width; ++x) {
        const Ray ray = generate_ray(cam, Vec2(x, static_cast<double>(y)));
        std::optional<double> best;
        int hit = -1;
        for (std::size_t k = 0; k < caps.size(); ++k) {
          const auto s = intersect_capsule(ray.origin, ray.dir, caps[k]);
          if (s && (!best || *s < *best)) {
            best = s;
            hit = static_cast<int>(k);
          }
        }
        if (hit < 0) continue;
        const Capsule& cap = caps[static_cast<std::size_t>(hit)];
        const Bone& bone = spec.bones[static_cast<std::size_t>(cap.bone)];
        const Vec3 p = ray.at(*best);
        const Vec3 n = (p - closest_on_segment(p, cap)).normalized();
        Vec3 albedo = bone.color;
        if (bone.stripe_period > 0) {
          const Vec3 ab = cap.b - cap.a;
          const double axial = ab.norm() > 0 ? (p - cap.a).dot(ab.normalized()) : 0.0;
          const auto band = static_cast<long>(std::floor(axial / bone.stripe_period));
          if (band % 2 != 0) albedo = bone.stripe_color;
        }
        const double lum = shading.ambient + shading.diffuse * std::max(0.0, n.dot(light));
        const int yi = static_cast<int>(y);
        for (int c = 0; c < 3; ++c) gt.image.at(x, yi, c) = static_cast<float>(albedo[c] * lum);
        gt.mask.at(x, yi) = 1.0f;
      }
    }
  });
  return gt;
}

std::vector<Camera> ring_cameras(int views, int resolution, double radius, double height,
                                 double focal_scale) {
  if (views <= 0 || resolution <= 0) throw GeometryError("ring_cameras: views and resolution must be positive");
  std::vector<Camera> cams;
  const Vec3 target(0.0, 0.1, 0.0);
  for (int c = 0; c < views; ++c) {
    const double phi = 2.0 * std::numbers::pi * c / views;
    const Vec3 eye(radius * std::sin(phi), height, radius * std::cos(phi));
    cams.push_back(look_at(eye, target, Vec3::UnitY(), focal_scale * resolution, resolution, resolution));
  }
  return cams;
}

}  // namespace nhp
