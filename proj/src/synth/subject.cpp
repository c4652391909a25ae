// SPDX-License-Identifier: Apache-2.0
#include <Eigen/Geometry>
#include <cmath>
#include <numbers>

#include "nhp/synth.hpp"

namespace nhp {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t CounterRng::bits(std::uint64_t stream, std::uint64_t counter) const {
  return splitmix64(splitmix64(key_ ^ splitmix64(stream)) + counter);
}

double CounterRng::uniform(std::uint64_t stream, std::uint64_t counter) const {
  return static_cast<double>(bits(stream, counter) >> 11) * 0x1.0p-53;
}

namespace {

enum Stream : std::uint64_t { kShape = 1, kColor = 2, kMotion = 3, kRoot = 4 };

constexpr double kPi = std::numbers::pi;

Vec3 random_color(const CounterRng& rng, std::uint64_t counter) {
  return Vec3(rng.uniform(kColor, counter, 0.15, 0.95), rng.uniform(kColor, counter + 1, 0.15, 0.95),
              rng.uniform(kColor, counter + 2, 0.15, 0.95));
}

struct RigidMap {
  Mat3 R = Mat3::Identity();
  Vec3 c = Vec3::Zero();
  Vec3 operator()(const Vec3& x) const { return R * x + c; }
};

// Body-local transform of every bone for the given joint angles.
std::vector<RigidMap> forward_kinematics(const SubjectSpec& spec, const std::vector<double>& angles) {
  std::vector<RigidMap> maps(spec.bones.size());
  for (std::size_t b = 0; b < spec.bones.size(); ++b) {
    const Bone& bone = spec.bones[b];
    const RigidMap parent = bone.parent < 0 ? RigidMap{} : maps[static_cast<std::size_t>(bone.parent)];
    const Mat3 q = Eigen::AngleAxisd(angles[b], bone.swing_axis.normalized()).toRotationMatrix();
    RigidMap m;
    m.R = parent.R * q;
    m.c = parent(bone.joint) - m.R * bone.joint;
    maps[b] = m;
  }
  return maps;
}

Mat3 yaw(double angle) { return Eigen::AngleAxisd(angle, Vec3::UnitY()).toRotationMatrix(); }

std::size_t bone_vertex_count(std::size_t bone) {
  // 6 x 67 + 3 x 66 = 600
  return bone < 6 ? 67 : 66;
}

// Area-uniform spiral lattice on a capsule: for a capsule the lateral area
// per unit of axial coordinate is 2*pi*r on the caps as on the cylinder, so
// equal axial steps give equal areas.
Vec3 lattice_point(const Bone& bone, std::size_t i, std::size_t n) {
  const double r = bone.radius;
  const double a = -r + (static_cast<double>(i) + 0.5) / static_cast<double>(n) * (bone.length + 2 * r);
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  const double theta = golden * static_cast<double>(i);
  double rho = r, axial = a;
  if (a < 0) {
    rho = std::sqrt(std::max(0.0, r * r - a * a));
  } else if (a > bone.length) {
    const double e = a - bone.length;
    rho = std::sqrt(std::max(0.0, r * r - e * e));
  }
  const Vec3 d = bone.direction.normalized();
  const Vec3 helper = std::abs(d.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  const Vec3 e1 = helper.cross(d).normalized();
  const Vec3 e2 = d.cross(e1);
  return bone.joint + axial * d + rho * (std::cos(theta) * e1 + std::sin(theta) * e2);
}

}  // namespace

std::size_t SubjectSpec::vertex_count() const {
  std::size_t n = 0;
  for (std::size_t b = 0; b < bones.size(); ++b) n += bone_vertex_count(b);
  return n;
}

SubjectSpec generate_subject(std::uint64_t seed) {
  const CounterRng rng(seed);
  SubjectSpec spec;
  spec.seed = seed;
  const double s = rng.uniform(kShape, 0, 0.85, 1.1);
  auto len = [&](double base, std::uint64_t k) { return base * s * rng.uniform(kShape, 10 + k, 0.9, 1.1); };
  auto rad = [&](double base, std::uint64_t k) { return base * rng.uniform(kShape, 30 + k, 0.85, 1.15); };

  const Vec3 shirt = random_color(rng, 0);
  const Vec3 pants = random_color(rng, 3);
  const Vec3 shirt_stripe = random_color(rng, 6);
  const Vec3 pants_stripe = random_color(rng, 9);
  const double tone = rng.uniform(kColor, 12);
  const Vec3 skin = Vec3(0.95, 0.78, 0.62) * (1.0 - tone) + Vec3(0.45, 0.3, 0.2) * tone;
  const double arm_period = rng.uniform(kColor, 13, 0.05, 0.1);
  const double leg_period = rng.uniform(kColor, 14, 0.07, 0.13);

  const double arm_phase = rng.uniform(kMotion, 0, 0.0, 2 * kPi);
  auto amp = [&](std::uint64_t k, double lo, double hi) { return rng.uniform(kMotion, 10 + k, lo, hi); };
  auto jitter = [&](std::uint64_t k) { return rng.uniform(kMotion, 30 + k, -0.4, 0.4); };

  const double hip_w = len(0.20, 0);
  const double spine_len = len(0.32, 1);
  const double head_len = len(0.16, 2);
  const double upper_arm = len(0.28, 3);
  const double forearm = len(0.25, 4);
  const double thigh = len(0.45, 5);
  const double shoulder_y = 0.08 + spine_len;
  const double shoulder_x = 0.2 * s;

  auto bone = [](std::string name, int parent, Vec3 joint, Vec3 dir, double length, double radius,
                 Vec3 color) {
    Bone b;
    b.name = std::move(name);
    b.parent = parent;
    b.joint = joint;
    b.direction = dir.normalized();
    b.length = length;
    b.radius = radius;
    b.color = color;
    b.stripe_color = color;
    return b;
  };

  spec.bones.push_back(bone("pelvis", -1, Vec3(-0.5 * hip_w, 0, 0), Vec3::UnitX(), hip_w, rad(0.12, 0), pants));
  spec.bones.push_back(bone("spine", 0, Vec3(0, 0.08, 0), Vec3::UnitY(), spine_len, rad(0.14, 1), shirt));
  spec.bones.push_back(
      bone("head", 1, Vec3(0, shoulder_y + 0.1, 0), Vec3::UnitY(), head_len, rad(0.1, 2), skin));
  for (int side = 0; side < 2; ++side) {
    const double sx = side == 0 ? 1.0 : -1.0;
    const Vec3 arm_dir = Vec3(0.15 * sx, -1, 0).normalized();
    const Vec3 shoulder(sx * shoulder_x, shoulder_y, 0);
    spec.bones.push_back(bone(side == 0 ? "left_upper_arm" : "right_upper_arm", 1, shoulder, arm_dir,
                              upper_arm, rad(0.05, 3 + side), shirt));
    const int upper = static_cast<int>(spec.bones.size()) - 1;
    spec.bones.push_back(bone(side == 0 ? "left_forearm" : "right_forearm", upper,
                              shoulder + upper_arm * arm_dir, arm_dir, forearm, rad(0.045, 5 + side), skin));
  }
  for (int side = 0; side < 2; ++side) {
    const double sx = side == 0 ? 1.0 : -1.0;
    spec.bones.push_back(bone(side == 0 ? "left_thigh" : "right_thigh", 0, Vec3(sx * 0.09 * s, -0.04, 0),
                              -Vec3::UnitY(), thigh, rad(0.075, 7 + side), pants));
  }

  // Motion: arms swing in antiphase, thighs opposite to the arm on their side.
  Bone& spine = spec.bones[1];
  spine.amplitude = amp(0, 0.05, 0.15);
  spine.phase = arm_phase + jitter(0);
  Bone& head = spec.bones[2];
  head.amplitude = amp(1, 0.1, 0.3);
  head.phase = arm_phase + jitter(1);
  for (int side = 0; side < 2; ++side) {
    Bone& up = spec.bones[3 + 2 * side];
    Bone& fore = spec.bones[4 + 2 * side];
    Bone& leg = spec.bones[7 + side];
    const double base = arm_phase + (side ? kPi : 0.0);
    up.amplitude = amp(2 + side, 0.3, 0.8);
    up.phase = base + jitter(2 + side);
    up.stripe_color = shirt_stripe;
    up.stripe_period = arm_period;
    fore.rest_angle = -amp(4 + side, 0.2, 0.5);
    fore.amplitude = amp(6 + side, 0.1, 0.4);
    fore.phase = base + jitter(4 + side);
    leg.amplitude = amp(8 + side, 0.2, 0.5);
    leg.phase = base + kPi + jitter(6 + side);
    leg.stripe_color = pants_stripe;
    leg.stripe_period = leg_period;
  }
  spec.angular_rate = rng.uniform(kRoot, 0, 0.22, 0.38);
  spec.root_yaw = rng.uniform(kRoot, 1, -0.6, 0.6);
  spec.root_yaw_amplitude = rng.uniform(kRoot, 2, 0.2, 0.6);
  spec.root_sway = rng.uniform(kRoot, 3, 0.02, 0.08);
  spec.root_phase = rng.uniform(kRoot, 4, 0.0, 2 * kPi);
  return spec;
}

BodyFrame pose_subject(const SubjectSpec& spec, int t) {
  BodyFrame frame;
  frame.t = t;
  const double tt = static_cast<double>(t);
  for (const auto& b : spec.bones) {
    frame.joint_angles.push_back(b.rest_angle + b.amplitude * std::sin(spec.angular_rate * tt + b.phase));
  }
  const double theta =
      spec.root_yaw + spec.root_yaw_amplitude * std::sin(0.5 * spec.angular_rate * tt + spec.root_phase);
  const Vec3 root(spec.root_sway * std::sin(spec.angular_rate * tt + spec.root_phase), 0.0,
                  spec.root_sway * std::cos(0.5 * spec.angular_rate * tt + spec.root_phase));
  const Mat3 to_world = yaw(theta);
  frame.pose.rotation = to_world.transpose();
  frame.pose.translation = -(to_world.transpose() * root);

  const auto maps = forward_kinematics(spec, frame.joint_angles);
  frame.vertices.reserve(spec.vertex_count());
  for (std::size_t b = 0; b < spec.bones.size(); ++b) {
    const std::size_t n = bone_vertex_count(b);
    for (std::size_t i = 0; i < n; ++i) {
      frame.vertices.push_back(body_to_world(frame.pose, maps[b](lattice_point(spec.bones[b], i, n))));
    }
  }
  return frame;
}

std::vector<Capsule> posed_capsules(const SubjectSpec& spec, const BodyFrame& frame) {
  if (frame.joint_angles.size() != spec.bones.size()) {
    throw std::invalid_argument("posed_capsules: frame has no joint angles for this subject");
  }
  const auto maps = forward_kinematics(spec, frame.joint_angles);
  std::vector<Capsule> caps;
  caps.reserve(spec.bones.size());
  for (std::size_t b = 0; b < spec.bones.size(); ++b) {
    const Bone& bone = spec.bones[b];
    Capsule c;
    c.a = body_to_world(frame.pose, maps[b](bone.joint));
    c.b = body_to_world(frame.pose, maps[b](bone.joint + bone.length * bone.direction));
    c.radius = bone.radius;
    c.bone = static_cast<int>(b);
    caps.push_back(c);
  }
  return caps;
}

}  // namespace nhp
