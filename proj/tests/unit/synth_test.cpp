// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "nhp/synth.hpp"

namespace nhp {
namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("nhp_synth_" + name);
  fs::remove_all(dir);
  return dir;
}

// Distance between a segment [p0, p1] and the ray o + s d, s in [0, smax].
// Minimised by alternating projection, which converges for convex pairs.
double ray_segment_distance(const Vec3& o, const Vec3& d, double smax, const Vec3& p0, const Vec3& p1) {
  const Vec3 e = p1 - p0;
  const double e2 = e.squaredNorm();
  double s = 0.0, u = 0.0;
  for (int it = 0; it < 200; ++it) {
    const Vec3 q = p0 + u * e;
    s = std::clamp((q - o).dot(d), 0.0, smax);
    const Vec3 r = o + s * d;
    u = e2 > 0 ? std::clamp((r - p0).dot(e) / e2, 0.0, 1.0) : 0.0;
  }
  return (o + s * d - (p0 + u * e)).norm();
}

TEST(Subject, Deterministic) {
  const auto a = generate_subject(42), b = generate_subject(42);
  ASSERT_EQ(a.bones.size(), b.bones.size());
  for (std::size_t i = 0; i < a.bones.size(); ++i) {
    EXPECT_EQ(a.bones[i].color, b.bones[i].color);
    EXPECT_EQ(a.bones[i].length, b.bones[i].length);
    EXPECT_EQ(a.bones[i].phase, b.bones[i].phase);
  }
}

TEST(Subject, SeedsDifferInColor) {
  const auto a = generate_subject(0), b = generate_subject(1);
  bool differ = false;
  for (std::size_t i = 0; i < a.bones.size(); ++i) differ |= a.bones[i].color != b.bones[i].color;
  EXPECT_TRUE(differ);
}

TEST(Subject, TreeOfNineBones) {
  for (std::uint64_t seed : {0ull, 1ull, 99ull}) {
    const auto s = generate_subject(seed);
    ASSERT_EQ(s.bones.size(), kBoneCount);
    EXPECT_EQ(s.bones[0].name, "pelvis");
    EXPECT_EQ(s.bones[0].parent, -1);
    for (std::size_t i = 1; i < s.bones.size(); ++i) {
      EXPECT_GE(s.bones[i].parent, 0);
      EXPECT_LT(s.bones[i].parent, static_cast<int>(i));
      EXPECT_GT(s.bones[i].length, 0);
      EXPECT_GT(s.bones[i].radius, 0);
    }
    EXPECT_EQ(s.vertex_count(), kVertexCount);
  }
}

TEST(Pose, RepeatIsIdentical) {
  const auto spec = generate_subject(3);
  const auto a = pose_subject(spec, 7), b = pose_subject(spec, 7);
  ASSERT_EQ(a.vertices.size(), kVertexCount);
  for (std::size_t i = 0; i < a.vertices.size(); ++i) EXPECT_EQ(a.vertices[i], b.vertices[i]);
}

TEST(Pose, ZeroAmplitudeIsStatic) {
  auto spec = generate_subject(3);
  for (auto& b : spec.bones) b.amplitude = 0;
  spec.root_yaw_amplitude = 0;
  spec.root_sway = 0;
  const auto a = pose_subject(spec, 0);
  for (int t : {1, 5, 29}) {
    const auto b = pose_subject(spec, t);
    for (std::size_t i = 0; i < a.vertices.size(); ++i) EXPECT_EQ(a.vertices[i], b.vertices[i]);
  }
}

TEST(Pose, StepDisplacementBound) {
  for (std::uint64_t seed : {0ull, 5ull, 12ull}) {
    const auto spec = generate_subject(seed);
    // Every vertex sits within `reach` of every joint; each angle moves at most
    // amplitude * rate per frame, the root yaw at half that rate.
    double reach = 0.0;
    const auto f0 = pose_subject(spec, 0);
    for (const auto& v : f0.vertices) {
      for (const auto& w : f0.vertices) reach = std::max(reach, (v - w).norm());
    }
    double angular = 0.5 * spec.root_yaw_amplitude * spec.angular_rate;
    for (const auto& b : spec.bones) angular += b.amplitude * spec.angular_rate;
    const double bound = angular * reach + 1.5 * spec.root_sway * spec.angular_rate;
    double worst = 0.0;
    for (int t = 0; t < 40; ++t) {
      const auto a = pose_subject(spec, t), b = pose_subject(spec, t + 1);
      for (std::size_t i = 0; i < a.vertices.size(); ++i) {
        worst = std::max(worst, (b.vertices[i] - a.vertices[i]).cwiseAbs().maxCoeff());
      }
    }
    EXPECT_GT(worst, 0.0);
    EXPECT_LE(worst, bound);
  }
}

TEST(Pose, VerticesLieOnCapsuleSurfaces) {
  const auto spec = generate_subject(8);
  const auto frame = pose_subject(spec, 4);
  const auto caps = posed_capsules(spec, frame);
  for (const auto& v : frame.vertices) {
    double best = 1e9;
    for (const auto& c : caps) {
      const Vec3 ab = c.b - c.a;
      const double u = std::clamp((v - c.a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
      best = std::min(best, std::abs((v - (c.a + u * ab)).norm() - c.radius));
    }
    EXPECT_LT(best, 1e-9);
  }
}

TEST(Capsule, IntersectionMatchesClosedForm) {
  Capsule c{Vec3(0, -1, 5), Vec3(0, 1, 5), 0.5, 0};
  auto s = intersect_capsule(Vec3::Zero(), Vec3::UnitZ(), c);
  ASSERT_TRUE(s);
  EXPECT_NEAR(*s, 4.5, 1e-12);
  // Through the top cap sphere.
  s = intersect_capsule(Vec3(0, 1.3, 0), Vec3::UnitZ(), c);
  ASSERT_TRUE(s);
  EXPECT_NEAR(*s, 5 - std::sqrt(0.25 - 0.09), 1e-12);
  EXPECT_FALSE(intersect_capsule(Vec3(0, 1.6, 0), Vec3::UnitZ(), c));
  EXPECT_FALSE(intersect_capsule(Vec3::Zero(), -Vec3::UnitZ(), c));
  // From inside, the exit point.
  s = intersect_capsule(Vec3(0, 0, 5), Vec3::UnitX(), c);
  ASSERT_TRUE(s);
  EXPECT_NEAR(*s, 0.5, 1e-12);
}

TEST(RenderGt, EmptySpecIsBlack) {
  SubjectSpec empty;
  BodyFrame frame;
  const Camera cam = ring_cameras(1, 16)[0];
  const auto gt = render_gt(frame, empty, cam);
  for (float v : gt.image.rgb) EXPECT_EQ(v, 0.0f);
  for (float v : gt.mask.values) EXPECT_EQ(v, 0.0f);
}

TEST(RenderGt, SphereProjectsToDiskArea) {
  SubjectSpec spec;
  Bone b;
  b.name = "ball";
  b.joint = Vec3(0, 0, 4);
  b.direction = Vec3::UnitY();
  b.length = 0.0;
  b.radius = 0.2;
  b.color = Vec3(0.5, 0.5, 0.5);
  spec.bones.push_back(b);
  BodyFrame frame;
  frame.joint_angles = {0.0};
  Mat3 K = Mat3::Identity();
  const double f = 500;
  K(0, 0) = K(1, 1) = f;
  K(0, 2) = K(1, 2) = 49.5;
  const Camera cam = Camera::make(K, Mat3::Identity(), Vec3::Zero(), 100, 100);
  const auto gt = render_gt(frame, spec, cam);
  double count = 0;
  for (float v : gt.mask.values) count += v;
  const double expected = std::numbers::pi * std::pow(f * 0.2 / 4.0, 2);
  EXPECT_NEAR(count / expected, 1.0, 0.02);
}

class CapturedFrame : public ::testing::Test {
 protected:
  void SetUp() override {
    spec = generate_subject(21);
    frame = pose_subject(spec, 6);
    cams = ring_cameras(4, 64);
  }
  SubjectSpec spec;
  BodyFrame frame;
  std::vector<Camera> cams;
};

TEST_F(CapturedFrame, MaskIsExactlyRayHits) {
  const auto caps = posed_capsules(spec, frame);
  for (const auto& cam : cams) {
    const auto gt = render_gt(frame, spec, cam);
    int fg = 0;
    for (int y = 0; y < cam.height; ++y) {
      for (int x = 0; x < cam.width; ++x) {
        const Ray r = generate_ray(cam, Vec2(x, y));
        double dist = 1e9;
        for (const auto& c : caps) dist = std::min(dist, ray_segment_distance(r.origin, r.dir, 10.0, c.a, c.b) - c.radius);
        const bool hit = dist < 0;
        fg += hit;
        EXPECT_EQ(gt.mask.at(x, y) > 0.5f, hit) << "pixel " << x << "," << y;
      }
    }
    EXPECT_GT(fg, 200);
  }
}

TEST_F(CapturedFrame, MaskEqualsNonzeroColor) {
  for (const auto& cam : cams) {
    const auto gt = render_gt(frame, spec, cam);
    for (int y = 0; y < cam.height; ++y) {
      for (int x = 0; x < cam.width; ++x) {
        const bool lit = gt.image.at(x, y, 0) + gt.image.at(x, y, 1) + gt.image.at(x, y, 2) > 0;
        EXPECT_EQ(lit, gt.mask.at(x, y) > 0.5f);
      }
    }
  }
}

TEST_F(CapturedFrame, VerticesProjectIntoMasks) {
  for (const auto& cam : cams) {
    const auto gt = render_gt(frame, spec, cam);
    for (const auto& v : frame.vertices) {
      const Vec2 p = project_point(cam, v).pixel;
      bool near_mask = false;
      for (int dy = -1; dy <= 1 && !near_mask; ++dy) {
        for (int dx = -1; dx <= 1 && !near_mask; ++dx) {
          const int x = static_cast<int>(std::lround(p.x())) + dx;
          const int y = static_cast<int>(std::lround(p.y())) + dy;
          if (x >= 0 && y >= 0 && x < cam.width && y < cam.height) near_mask = gt.mask.at(x, y) > 0.5f;
        }
      }
      EXPECT_TRUE(near_mask) << "vertex projects to " << p.transpose();
    }
  }
}

TEST_F(CapturedFrame, RenderIsDeterministic) {
  const auto a = render_gt(frame, spec, cams[1], {}, 1);
  const auto b = render_gt(frame, spec, cams[1], {}, 3);
  EXPECT_EQ(a.image.rgb, b.image.rgb);
  EXPECT_EQ(a.mask.values, b.mask.values);
}

TEST(RingCameras, LookAtTheBody) {
  const auto cams = ring_cameras(4, 64);
  ASSERT_EQ(cams.size(), 4u);
  for (const auto& c : cams) {
    EXPECT_NEAR(std::hypot(c.center().x(), c.center().z()), 3.0, 1e-12);
    const auto p = project_point(c, Vec3(0, 0.1, 0));
    EXPECT_NEAR(p.pixel.x(), 31.5, 1e-9);
  }
}

TEST(Dataset, RoundTrip) {
  GenerateOptions o;
  o.subjects = 2;
  o.frames = 30;
  o.views = 3;
  o.resolution = 16;
  const auto set = generate_captures(o);
  const auto dir = temp_dir("roundtrip");
  write_dataset(set, dir);
  const auto back = read_dataset(dir);
  ASSERT_EQ(back.views(), 3);
  ASSERT_EQ(back.frames, 30);
  ASSERT_EQ(back.subjects.size(), 2u);
  for (std::size_t s = 0; s < 2; ++s) {
    EXPECT_EQ(back.subjects[s].name, set.subjects[s].name);
    EXPECT_EQ(back.subjects[s].seed, set.subjects[s].seed);
    for (int t = 0; t < 30; ++t) {
      const auto& a = set.subjects[s].frames[t];
      const auto& b = back.subjects[s].frames[t];
      ASSERT_EQ(a.vertices.size(), b.vertices.size());
      for (std::size_t i = 0; i < a.vertices.size(); ++i) EXPECT_EQ(a.vertices[i], b.vertices[i]);
      EXPECT_EQ(a.pose.rotation, b.pose.rotation);
      EXPECT_EQ(a.pose.translation, b.pose.translation);
    }
    for (int c = 0; c < 3; ++c) {
      for (int t = 0; t < 30; t += 7) {
        const auto& ia = set.subjects[s].images[c][t].rgb;
        const auto& ib = back.subjects[s].images[c][t].rgb;
        for (std::size_t i = 0; i < ia.size(); ++i) EXPECT_LE(std::abs(ia[i] - ib[i]), 0.5f / 255.0f + 1e-6f);
        EXPECT_EQ(set.subjects[s].masks[c][t].values, back.subjects[s].masks[c][t].values);
      }
    }
  }
  for (int c = 0; c < 3; ++c) {
    EXPECT_NEAR((back.cameras[c].K - set.cameras[c].K).norm(), 0.0, 1e-12);
    EXPECT_NEAR((back.cameras[c].R - set.cameras[c].R).norm(), 0.0, 1e-12);
    EXPECT_NEAR((back.cameras[c].t - set.cameras[c].t).norm(), 0.0, 1e-12);
  }
  fs::remove_all(dir);
}

TEST(Dataset, EmptyDirNamesManifest) {
  const auto dir = temp_dir("empty");
  fs::create_directories(dir);
  try {
    read_dataset(dir);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("manifest"), std::string::npos);
  }
}

TEST(Dataset, CorruptFilesAreReported) {
  GenerateOptions o;
  o.subjects = 1;
  o.frames = 2;
  o.views = 1;
  o.resolution = 8;
  const auto dir = temp_dir("corrupt");
  write_dataset(generate_captures(o), dir);
  const auto vpath = dir / "verts" / "subject_000" / "1.bin";
  fs::resize_file(vpath, 100);
  EXPECT_THROW(read_dataset(dir), IoError);
  fs::remove(vpath);
  EXPECT_THROW(read_dataset(dir), IoError);
  std::ofstream(dir / "manifest.json") << "{ not json";
  EXPECT_THROW(read_dataset(dir), IoError);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace nhp
