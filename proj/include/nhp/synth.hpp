// SPDX-License-Identifier: Apache-2.0
//
// Synthetic articulated performers made of capsules, an analytic raytracer
// for ground-truth images and masks, and the on-disk dataset layout.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nhp/geometry.hpp"
#include "nhp/image.hpp"

namespace nhp {

// Counter-based generator: every value is a pure function of (key, stream,
// counter), so adding draws in one stream never shifts another.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}
  std::uint64_t bits(std::uint64_t stream, std::uint64_t counter) const;
  double uniform(std::uint64_t stream, std::uint64_t counter) const;  // [0, 1)
  double uniform(std::uint64_t stream, std::uint64_t counter, double lo, double hi) const {
    return lo + (hi - lo) * uniform(stream, counter);
  }

 private:
  std::uint64_t key_;
};

std::uint64_t splitmix64(std::uint64_t x);

struct Bone {
  std::string name;
  int parent = -1;           // index into SubjectSpec::bones, -1 for the root
  Vec3 joint;                // rest-pose joint position, body-local (m)
  Vec3 direction;            // rest-pose unit axis
  double length = 0.0;       // m
  double radius = 0.0;       // m
  Vec3 color;                // base albedo
  Vec3 stripe_color;         // secondary albedo
  double stripe_period = 0;  // m along the axis; 0 disables stripes
  Vec3 swing_axis = Vec3::UnitX();
  double rest_angle = 0.0;   // rad
  double amplitude = 0.0;    // rad
  double phase = 0.0;        // rad
};

struct SubjectSpec {
  std::uint64_t seed = 0;
  std::vector<Bone> bones;
  double angular_rate = 0.3;  // rad per frame, shared by all joints
  double root_yaw = 0.0;      // rad
  double root_yaw_amplitude = 0.0;
  double root_sway = 0.0;     // m
  double root_phase = 0.0;

  std::size_t vertex_count() const;
};

inline constexpr std::size_t kBoneCount = 9;
inline constexpr std::size_t kVertexCount = 600;

struct BodyFrame {
  int t = 0;
  std::vector<double> joint_angles;  // one per bone; empty when loaded from disk
  std::vector<Vec3> vertices;        // world, m
  BodyPose pose;                     // world -> body-local
};

struct Capsule {
  Vec3 a, b;
  double radius = 0.0;
  int bone = -1;
};

struct CaptureSet;

// Deterministic subject with kBoneCount bones: pelvis, spine, head, two
// upper arms, two forearms and two thighs.
SubjectSpec generate_subject(std::uint64_t seed);

BodyFrame pose_subject(const SubjectSpec& spec, int t);

// World-space capsules of a posed frame (needs joint angles).
std::vector<Capsule> posed_capsules(const SubjectSpec& spec, const BodyFrame& frame);

// Nearest positive hit distance of a ray with one capsule.
std::optional<double> intersect_capsule(const Vec3& origin, const Vec3& dir, const Capsule& cap);

struct Shading {
  Vec3 light_dir = Vec3(0.3, 0.9, 0.35).normalized();
  double ambient = 0.3;
  double diffuse = 0.7;
};

struct GroundTruth {
  Image image;
  Mask mask;
};

GroundTruth render_gt(const BodyFrame& frame, const SubjectSpec& spec, const Camera& cam,
                      const Shading& shading = {}, int threads = 0);

// Cameras on a horizontal ring around the origin, evenly spaced in azimuth.
std::vector<Camera> ring_cameras(int views, int resolution, double radius = 3.0,
                                 double height = 0.3, double focal_scale = 1.8);

struct SubjectCapture {
  std::string name;
  std::uint64_t seed = 0;
  std::vector<BodyFrame> frames;          // [t]
  std::vector<std::vector<Image>> images;  // [view][t]
  std::vector<std::vector<Mask>> masks;    // [view][t]
};

struct CaptureSet {
  std::vector<Camera> cameras;
  int frames = 0;
  std::vector<SubjectCapture> subjects;

  int views() const { return static_cast<int>(cameras.size()); }
};

struct GenerateOptions {
  std::uint64_t seed = 0;
  int subjects = 4;
  int frames = 30;
  int views = 4;
  int resolution = 64;
  int threads = 0;
};

std::uint64_t subject_seed(std::uint64_t dataset_seed, int index);
CaptureSet generate_captures(const GenerateOptions& opts);

// Layout: manifest.json, img/{subject}/{cam}/{t}.png,
// mask/{subject}/{cam}/{t}.png, verts/{subject}/{t}.bin.
void write_dataset(const CaptureSet& captures, const std::filesystem::path& dir);
CaptureSet read_dataset(const std::filesystem::path& dir);

// verts/*.bin: u32 L, L x 3 f64, then the pose as a row-major 3x4 [R | t] (12 f64).
void write_vertices(const std::filesystem::path& path, const BodyFrame& frame);
BodyFrame read_vertices(const std::filesystem::path& path, int t);

}  // namespace nhp
