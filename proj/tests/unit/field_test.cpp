// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "nhp/gradcheck.hpp"
#include "nhp/synth.hpp"
#include "oracles.hpp"

namespace nhp {
namespace {

using TD = Tensor<double>;

const CaptureSet& small_capture() {
  static const CaptureSet set = [] {
    GenerateOptions o;
    o.subjects = 1;
    o.frames = 12;
    o.views = 4;
    o.resolution = 16;
    o.seed = 3;
    return generate_captures(o);
  }();
  return set;
}

FrameObservation observation(const CaptureSet& set, int t, std::vector<int> views, std::vector<int> times) {
  const SubjectCapture& s = set.subjects[0];
  FrameObservation obs;
  for (int v : views) obs.cameras.push_back(set.cameras[static_cast<std::size_t>(v)]);
  times.insert(times.begin(), t);
  for (int tm : times) {
    std::vector<const Image*> row;
    for (int v : views) row.push_back(&s.images[static_cast<std::size_t>(v)][static_cast<std::size_t>(tm)]);
    obs.images.push_back(row);
    obs.vertices.push_back(s.frames[static_cast<std::size_t>(tm)].vertices);
  }
  obs.pose = s.frames[static_cast<std::size_t>(t)].pose;
  return obs;
}

std::vector<Vec3> points_near_body(const CaptureSet& set, int t, std::size_t n, std::mt19937_64& rng) {
  const Aabb box = body_bbox(set.subjects[0].frames[static_cast<std::size_t>(t)].vertices);
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < n; ++i) {
    Vec3 u(uniform01(rng), uniform01(rng), uniform01(rng));
    pts.push_back(box.min + u.cwiseProduct(box.max - box.min));
  }
  return pts;
}

std::vector<Vec3> random_dirs(std::size_t n, std::mt19937_64& rng) {
  std::vector<Vec3> d;
  for (std::size_t i = 0; i < n; ++i) {
    Vec3 v(uniform01(rng) - 0.5, uniform01(rng) - 0.5, uniform01(rng) - 0.5);
    d.push_back(v.normalized());
  }
  return d;
}

// ---- skeletal bank ----

TEST(SkeletalBank, EveryEntryMatchesScalarReprojection) {
  const CaptureSet& set = small_capture();
  std::mt19937_64 rng(1);
  const std::vector<Camera> cams{set.cameras[0], set.cameras[2], set.cameras[3]};
  std::vector<std::vector<Vec3>> verts;
  for (int t : {4, 0, 9}) {
    auto v = set.subjects[0].frames[static_cast<std::size_t>(t)].vertices;
    v.resize(40);
    v.push_back(Vec3(5, 0, 0));   // leaves some views' images
    v.push_back(Vec3(0, 0, 3.2)); // behind camera 0
    verts.push_back(v);
  }
  const int fh = 8, fw = 8;
  const TD fmaps = oracle::random_matrix(rng, 3 * 3 * fh * fw, 5);
  const auto bank = build_skeletal_bank(fmaps, fh, fw, 16, 16, cams, verts);
  ASSERT_EQ(bank.features.shape(), (Shape{42 * 3, 3, 5}));
  std::size_t invalid = 0;
  for (std::size_t i = 0; i < 42; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t m = 0; m < 3; ++m) {
        bool ok = false;
        const auto ref = oracle::bank_entry(fmaps, fh, fw, cams, verts, i, c, m, &ok);
        ASSERT_EQ(bank.valid[(i * 3 + c) * 3 + m] != 0, ok) << i << " " << c << " " << m;
        invalid += !ok;
        for (std::size_t k = 0; k < 5; ++k) ASSERT_NEAR(bank.features[((i * 3 + c) * 3 + m) * 5 + k], ref[k], 1e-12);
      }
  EXPECT_GT(invalid, 0u);
}

TEST(SkeletalBank, ZeroFeaturesGiveZeroBank) {
  const CaptureSet& set = small_capture();
  const TD fmaps = TD::zeros({2 * 64, 7});
  const auto bank = build_skeletal_bank(fmaps, 8, 8, 16, 16, {set.cameras[0], set.cameras[1]},
                                        {set.subjects[0].frames[0].vertices});
  for (double v : bank.features.data()) ASSERT_EQ(v, 0.0);
}

TEST(SkeletalBank, SingleFrameBankIsFrameFeatures) {
  const CaptureSet& set = small_capture();
  std::mt19937_64 rng(2);
  const TD fmaps = oracle::random_matrix(rng, 64, 4);
  const auto& v = set.subjects[0].frames[5].vertices;
  const auto bank = build_skeletal_bank(fmaps, 8, 8, 16, 16, {set.cameras[1]}, {v});
  EXPECT_EQ(bank.frames, 1u);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Projection pr = project_unchecked(set.cameras[1], v[i]);
    const TD f = sample_pixel_aligned(fmaps, 8, 8, pr.pixel);
    for (std::size_t k = 0; k < 4; ++k) ASSERT_EQ(bank.features[i * 4 + k], f[k]);
  }
}

// ---- temporal attention ----

FieldConfig small_config() {
  FieldConfig cfg;
  cfg.temporal_dim = 8;
  cfg.fuse_dim = 12;
  cfg.voxel_dim = 6;
  cfg.encoder.features = 6;
  cfg.density_width = 10;
  cfg.color_width = 10;
  cfg.dir_freqs = 2;
  cfg.grid_resolution = 8;
  return cfg;
}

ParamSet<double> random_params(const FieldConfig& cfg, std::uint64_t seed) {
  ParamSet<double> p = make_field_params<double>(cfg, seed);
  std::mt19937_64 rng(seed + 99);
  for (const auto& name : p.names())
    if (name.back() == 'b')
      for (auto& v : p.at(name).mutable_data()) v = 0.2 * (uniform01(rng) - 0.5);
  return p;
}

TEST(TemporalFuse, MatchesScalarAttentionLoop) {
  const FieldConfig cfg = small_config();
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = random_params(cfg, static_cast<std::uint64_t>(trial));
    const std::size_t L = 1 + rng() % 20, C = 1 + rng() % 4, M = 1 + rng() % 4;
    const auto bank = oracle::random_bank(rng, L, C, M, 6, 0.25);
    const TD s = temporal_fuse(p, cfg, bank);
    for (std::size_t r = 0; r < L * C; ++r) {
      const auto ref = oracle::temporal_row(p, cfg, bank, r);
      for (std::size_t k = 0; k < 6; ++k) ASSERT_NEAR(s[r * 6 + k], ref[k], 1e-9);
    }
  }
}

TEST(TemporalFuse, SingleMemoryFrameTakesItsValue) {
  const FieldConfig cfg = small_config();
  const auto p = random_params(cfg, 4);
  std::mt19937_64 rng(4);
  const auto bank = oracle::random_bank(rng, 5, 2, 2, 6, 0.0);
  const TD s = temporal_fuse(p, cfg, bank);
  for (std::size_t r = 0; r < 10; ++r) {
    std::vector<double> mem(bank.features.data().begin() + static_cast<long>((r * 2 + 1) * 6),
                            bank.features.data().begin() + static_cast<long>((r * 2 + 2) * 6));
    const auto v = oracle::affine(p, "temporal.v", mem);
    for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(s[r * 6 + k], v[k] + bank.features[(r * 2) * 6 + k], 1e-12);
  }
}

TEST(TemporalFuse, IdenticalMemoryIgnoresAttention) {
  const FieldConfig cfg = small_config();
  const auto p = random_params(cfg, 5);
  std::mt19937_64 rng(5);
  auto bank = oracle::random_bank(rng, 4, 3, 4, 6, 0.0);
  auto f = bank.features.mutable_data();
  for (std::size_t r = 0; r < 12; ++r)
    for (std::size_t m = 2; m < 4; ++m)
      for (std::size_t k = 0; k < 6; ++k) f[(r * 4 + m) * 6 + k] = f[(r * 4 + 1) * 6 + k];
  const TD s = temporal_fuse(p, cfg, bank);
  for (std::size_t r = 0; r < 12; ++r) {
    std::vector<double> mem(f.begin() + static_cast<long>((r * 4 + 1) * 6), f.begin() + static_cast<long>((r * 4 + 2) * 6));
    const auto v = oracle::affine(p, "temporal.v", mem);
    for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(s[r * 6 + k], v[k] + f[(r * 4) * 6 + k], 1e-12);
  }
}

TEST(TemporalFuse, AllMemoryInvalidFallsBackToCurrentFrame) {
  const FieldConfig cfg = small_config();
  const auto p = random_params(cfg, 6);
  std::mt19937_64 rng(6);
  auto bank = oracle::random_bank(rng, 3, 2, 3, 6, 0.0);
  auto f = bank.features.mutable_data();
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t m = 1; m < 3; ++m) {
      bank.valid[r * 3 + m] = 0;
      for (std::size_t k = 0; k < 6; ++k) f[(r * 3 + m) * 6 + k] = 0.0;
    }
  const TD s = temporal_fuse(p, cfg, bank);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(s[r * 6 + k], f[(r * 3) * 6 + k]);
}

TEST(TemporalFuse, MemoryOrderDoesNotMatter) {
  const FieldConfig cfg = small_config();
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = random_params(cfg, 100 + static_cast<std::uint64_t>(trial));
    const auto bank = oracle::random_bank(rng, 6, 3, 4, 6, 0.2);
    auto swapped = bank;
    std::vector<double> f(bank.features.data().begin(), bank.features.data().end());
    const std::size_t order[4] = {0, 3, 1, 2};
    std::vector<double> g(f.size());
    for (std::size_t r = 0; r < 18; ++r)
      for (std::size_t m = 0; m < 4; ++m) {
        swapped.valid[r * 4 + m] = bank.valid[r * 4 + order[m]];
        for (std::size_t k = 0; k < 6; ++k) g[(r * 4 + m) * 6 + k] = f[(r * 4 + order[m]) * 6 + k];
      }
    swapped.features = TD(bank.features.shape(), g);
    const TD a = temporal_fuse(p, cfg, bank), b = temporal_fuse(p, cfg, swapped);
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], 1e-9);
  }
}

TEST(TemporalFuse, WithoutTransformerIsMaskedMean) {
  FieldConfig cfg = small_config();
  cfg.enable_temporal = false;
  const auto p = random_params(cfg, 8);
  std::mt19937_64 rng(8);
  const auto bank = oracle::random_bank(rng, 7, 2, 3, 6, 0.3);
  const TD s = temporal_fuse(p, cfg, bank);
  for (std::size_t r = 0; r < 14; ++r) {
    const auto ref = oracle::temporal_row(p, cfg, bank, r);
    for (std::size_t k = 0; k < 6; ++k) ASSERT_NEAR(s[r * 6 + k], ref[k], 1e-12);
  }
}

// ---- voxel diffusion ----

TEST(VoxelGrid, ZeroInputGivesZeroGrid) {
  const FieldConfig cfg = small_config();
  const ParamSet<double> p = make_field_params<double>(cfg, 9);
  const auto& v = small_capture().subjects[0].frames[0].vertices;
  const VoxelGrid<double> g = diffuse_to_voxels(p, TD::zeros({v.size() * 2, 6}), v, 2, cfg);
  for (double x : g.features.data()) ASSERT_EQ(x, 0.0);
}

TEST(VoxelGrid, SingleConvStaysInHaloOfOccupiedCell) {
  const FieldConfig cfg = small_config();
  ParamSet<double> p = random_params(cfg, 10);
  for (auto& b : p.at("voxel.conv1.b").mutable_data()) b = 0.0;
  for (auto& b : p.at("voxel.conv2.b").mutable_data()) b = 0.0;
  // Second conv reduced to the identity on the centre tap.
  auto w2 = p.at("voxel.conv2.w").mutable_data();
  std::fill(w2.begin(), w2.end(), 0.0);
  for (std::size_t c = 0; c < 6; ++c) w2[c * 27 * 6 + 13 * 6 + c] = 1.0;
  // Two vertices far apart define the box; only the first carries features.
  std::vector<Vec3> v{Vec3(0.1, 0.2, 0.3), Vec3(-0.5, -0.4, -0.2)};
  std::vector<double> s(2 * 6, 0.0);
  for (std::size_t k = 0; k < 6; ++k) s[k] = 1.0 + static_cast<double>(k);
  const VoxelGrid<double> g = diffuse_to_voxels(p, TD({2, 6}, s), v, 1, cfg);
  const GridGeometry& geo = *g.geometry;
  const int home = geo.vertex_cell[0];
  const int hx = home % geo.dims[0], hy = (home / geo.dims[0]) % geo.dims[1], hz = home / (geo.dims[0] * geo.dims[1]);
  std::size_t nonzero = 0;
  for (std::size_t r = 0; r < geo.level2.size(); ++r) {
    bool any = false;
    for (std::size_t k = 0; k < 6; ++k) any = any || g.features[r * 6 + k] != 0.0;
    if (!any) continue;
    ++nonzero;
    const int id = geo.level2[r];
    const int x = id % geo.dims[0], y = (id / geo.dims[0]) % geo.dims[1], z = id / (geo.dims[0] * geo.dims[1]);
    EXPECT_LE(std::max({std::abs(x - hx), std::abs(y - hy), std::abs(z - hz)}), 1) << "cell " << id;
  }
  EXPECT_GT(nonzero, 0u);
}

TEST(VoxelGrid, ActiveSetsGrowByOneDilation) {
  const auto& v = small_capture().subjects[0].frames[0].vertices;
  const GridGeometry g = make_grid(v, 16, 2);
  auto xyz = [&](int id) { return std::array<int, 3>{id % g.dims[0], (id / g.dims[0]) % g.dims[1], id / (g.dims[0] * g.dims[1])}; };
  auto near = [&](const std::vector<int>& set, int id) {
    const auto a = xyz(id);
    for (int o : set) {
      const auto b = xyz(o);
      if (std::abs(a[0] - b[0]) <= 1 && std::abs(a[1] - b[1]) <= 1 && std::abs(a[2] - b[2]) <= 1) return true;
    }
    return false;
  };
  for (int id : g.level1) ASSERT_TRUE(near(g.occupied, id));
  for (int id : g.level2) ASSERT_TRUE(near(g.level1, id));
  EXPECT_TRUE(std::includes(g.level2.begin(), g.level2.end(), g.level1.begin(), g.level1.end()));
  for (const auto& x : v) EXPECT_TRUE(g.box.contains(x));
  EXPECT_NEAR(g.edge, g.box.extent().maxCoeff() / 16, 1e-15);
}

TEST(VoxelGrid, GradientsMatchFiniteDifferences) {
  const FieldConfig cfg = small_config();
  ParamSet<double> p = random_params(cfg, 11);
  std::vector<Vec3> v(small_capture().subjects[0].frames[2].vertices.begin(),
                      small_capture().subjects[0].frames[2].vertices.begin() + 60);
  std::mt19937_64 rng(11);
  TD s = oracle::random_matrix(rng, v.size() * 2, 6);
  std::vector<Vec3> q;
  const Aabb box = body_bbox(v);
  for (int i = 0; i < 30; ++i) q.push_back(box.min + Vec3(uniform01(rng), uniform01(rng), uniform01(rng)).cwiseProduct(box.extent()));
  TD probe;
  auto loss = [&]() {
    const VoxelGrid<double> g = diffuse_to_voxels(p, s, v, 2, cfg);
    const TD feat = sample_skeletal(g, q);
    if (!probe.defined()) probe = oracle::random_matrix(rng, feat.dim(0), feat.dim(1));
    return sum(mul(feat, probe));
  };
  s.set_requires_grad(true);
  const auto r = grad_check_params(loss,
                                   {{"s", s}, {"voxel.conv1.w", p.at("voxel.conv1.w")}, {"voxel.conv1.b", p.at("voxel.conv1.b")},
                                    {"voxel.conv2.w", p.at("voxel.conv2.w")}, {"voxel.conv2.b", p.at("voxel.conv2.b")}},
                                   1e-6, 1e-6, 60, 12);
  EXPECT_GT(r.checked, 150u);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

VoxelGrid<double> random_grid(std::mt19937_64& rng) {
  const FieldConfig cfg = small_config();
  const auto p = random_params(cfg, 12);
  const auto& v = small_capture().subjects[0].frames[3].vertices;
  return diffuse_to_voxels(p, oracle::random_matrix(rng, v.size(), 6), v, 1, cfg);
}

Vec3 centre(const GridGeometry& g, int id) {
  const int x = id % g.dims[0], y = (id / g.dims[0]) % g.dims[1], z = id / (g.dims[0] * g.dims[1]);
  return g.origin + g.edge * Vec3(x + 0.5, y + 0.5, z + 0.5);
}

TEST(SampleSkeletal, CellCentreReturnsCellFeature) {
  std::mt19937_64 rng(13);
  const auto grid = random_grid(rng);
  const GridGeometry& g = *grid.geometry;
  int tested = 0;
  for (std::size_t r = 0; r < g.level2.size(); r += 7) {
    const Vec3 c = centre(g, g.level2[r]);
    if (!g.box.contains(c)) continue;
    const TD f = sample_skeletal(grid, std::vector<Vec3>{c});
    for (std::size_t k = 0; k < 6; ++k) ASSERT_NEAR(f[k], grid.features[r * 6 + k], 1e-12);
    ++tested;
  }
  EXPECT_GT(tested, 10);
}

TEST(SampleSkeletal, MidpointAveragesNeighbours) {
  std::mt19937_64 rng(14);
  const auto grid = random_grid(rng);
  const GridGeometry& g = *grid.geometry;
  int tested = 0;
  for (std::size_t r = 0; r < g.level2.size(); r += 5) {
    const int id = g.level2[r];
    const int nb = id + 1;
    if (id % g.dims[0] == g.dims[0] - 1 || g.level2_row[static_cast<std::size_t>(nb)] < 0) continue;
    const Vec3 mid = 0.5 * (centre(g, id) + centre(g, nb));
    if (!g.box.contains(mid)) continue;
    const auto rn = static_cast<std::size_t>(g.level2_row[static_cast<std::size_t>(nb)]);
    const TD f = sample_skeletal(grid, std::vector<Vec3>{mid});
    for (std::size_t k = 0; k < 6; ++k)
      ASSERT_NEAR(f[k], 0.5 * (grid.features[r * 6 + k] + grid.features[rn * 6 + k]), 1e-12);
    ++tested;
  }
  EXPECT_GT(tested, 10);
}

TEST(SampleSkeletal, OutsideBoxIsZero) {
  std::mt19937_64 rng(15);
  const auto grid = random_grid(rng);
  const Aabb& b = grid.geometry->box;
  const TD f = sample_skeletal(grid, std::vector<Vec3>{b.max + Vec3(1e-6, 0, 0), b.min - Vec3(0, 0.3, 0), Vec3(9, 9, 9)});
  for (double x : f.data()) EXPECT_EQ(x, 0.0);
}

// ---- pixel-aligned query features ----

TEST(QueryPixelFeatures, BehindEveryCameraIsZeroAndInvalid) {
  std::mt19937_64 rng(16);
  Camera a, b;
  a.K << 20, 0, 8, 0, 20, 8, 0, 0, 1;
  a.width = a.height = 16;
  b = a;
  b.t = Vec3(0, 0, 0.5);
  const TD fmaps = oracle::random_matrix(rng, 2 * 64, 4);
  const auto px = sample_query_pixel_features(fmaps, 8, 8, 16, 16, {a, b}, std::vector<Vec3>{Vec3(0, 0, -1)});
  for (double x : px.features.data()) EXPECT_EQ(x, 0.0);
  EXPECT_EQ(px.valid, (std::vector<std::uint8_t>{0, 0}));
}

TEST(QueryPixelFeatures, VertexMatchesBankAndScalarOracle) {
  const CaptureSet& set = small_capture();
  std::mt19937_64 rng(17);
  const std::vector<Camera> cams{set.cameras[0], set.cameras[1], set.cameras[3]};
  const auto& v = set.subjects[0].frames[6].vertices;
  const TD fmaps = oracle::random_matrix(rng, 3 * 64, 5);
  const auto bank = build_skeletal_bank(fmaps, 8, 8, 16, 16, cams, {v});
  const auto px = sample_query_pixel_features(fmaps, 8, 8, 16, 16, cams, v);
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      ASSERT_EQ(px.valid[i * 3 + c], bank.valid[i * 3 + c]);
      bool ok = false;
      const auto ref = oracle::bank_entry(fmaps, 8, 8, cams, {v}, i, c, 0, &ok);
      for (std::size_t k = 0; k < 5; ++k) {
        ASSERT_EQ(px.features[(i * 3 + c) * 5 + k], bank.features[(i * 3 + c) * 5 + k]);
        ASSERT_NEAR(px.features[(i * 3 + c) * 5 + k], ref[k], 1e-12);
      }
    }
}

// ---- multi-view fusion ----

struct MvCase {
  TD s, p;
  std::vector<std::uint8_t> valid;
};

MvCase random_case(std::mt19937_64& rng, std::size_t N, std::size_t C, double invalid_rate) {
  MvCase c{oracle::random_matrix(rng, N * C, 6), oracle::random_matrix(rng, N * C, 6), {}};
  c.valid.resize(N * C);
  for (auto& v : c.valid) v = uniform01(rng) >= invalid_rate;
  return c;
}

TEST(MultiviewFuse, MatchesScalarAttentionLoop) {
  for (bool separate : {false, true}) {
    FieldConfig cfg = small_config();
    cfg.separate_query = separate;
    std::mt19937_64 rng(18);
    for (int trial = 0; trial < 20; ++trial) {
      const auto p = random_params(cfg, 200 + static_cast<std::uint64_t>(trial));
      const std::size_t N = 1 + rng() % 6, C = 1 + rng() % 4;
      const MvCase mc = random_case(rng, N, C, 0.3);
      const auto fused = multiview_fuse(p, cfg, mc.s, mc.p, mc.valid, N, C);
      for (std::size_t n = 0; n < N; ++n) {
        std::vector<double> att;
        const auto z = oracle::multiview_point(p, cfg, mc.s, mc.p, mc.valid, n, C, &att);
        for (std::size_t i = 0; i < C * 12; ++i) ASSERT_NEAR(fused.z[n * C * 12 + i], z[i], 1e-9);
        for (std::size_t i = 0; i < C * C; ++i) ASSERT_NEAR(fused.attention[n * C * C + i], att[i], 1e-12);
      }
    }
  }
}

TEST(MultiviewFuse, SingleViewAttendsToItself) {
  const FieldConfig cfg = small_config();
  const auto p = random_params(cfg, 19);
  std::mt19937_64 rng(19);
  const MvCase mc = random_case(rng, 5, 1, 0.0);
  const auto fused = multiview_fuse(p, cfg, mc.s, mc.p, mc.valid, 5, 1);
  const TD expect = add(linear(mc.p, p.at("fuse.v.w"), p.at("fuse.v.b")), linear(mc.s, p.at("fuse.v.w"), p.at("fuse.v.b")));
  for (std::size_t n = 0; n < 5; ++n) EXPECT_EQ(fused.attention[n], 1.0);
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(fused.z[i], expect[i], 1e-12);
}

TEST(MultiviewFuse, IdenticalPixelFeaturesIgnoreAttention) {
  const FieldConfig cfg = small_config();
  const auto p = random_params(cfg, 20);
  std::mt19937_64 rng(20);
  MvCase mc = random_case(rng, 4, 3, 0.0);
  auto pd = mc.p.mutable_data();
  for (std::size_t n = 0; n < 4; ++n)
    for (std::size_t c = 1; c < 3; ++c)
      for (std::size_t k = 0; k < 6; ++k) pd[(n * 3 + c) * 6 + k] = pd[(n * 3) * 6 + k];
  const auto fused = multiview_fuse(p, cfg, mc.s, mc.p, mc.valid, 4, 3);
  const TD vp = linear(mc.p, p.at("fuse.v.w"), p.at("fuse.v.b"));
  const TD vs = linear(mc.s, p.at("fuse.v.w"), p.at("fuse.v.b"));
  for (std::size_t i = 0; i < vp.size(); ++i) EXPECT_NEAR(fused.z[i], vp[i] + vs[i], 1e-12);
}

TEST(MultiviewFuse, ViewPermutationPermutesRowsAndKeepsMean) {
  const FieldConfig cfg = small_config();
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = random_params(cfg, 300 + static_cast<std::uint64_t>(trial));
    const std::size_t N = 3, C = 4;
    const MvCase mc = random_case(rng, N, C, 0.25);
    std::vector<std::size_t> perm{0, 1, 2, 3};
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> s2(mc.s.size()), p2(mc.p.size());
    std::vector<std::uint8_t> v2(mc.valid.size());
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        v2[n * C + c] = mc.valid[n * C + perm[c]];
        for (std::size_t k = 0; k < 6; ++k) {
          s2[(n * C + c) * 6 + k] = mc.s[(n * C + perm[c]) * 6 + k];
          p2[(n * C + c) * 6 + k] = mc.p[(n * C + perm[c]) * 6 + k];
        }
      }
    const auto a = multiview_fuse(p, cfg, mc.s, mc.p, mc.valid, N, C);
    const auto b = multiview_fuse(p, cfg, TD(mc.s.shape(), s2), TD(mc.p.shape(), p2), v2, N, C);
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t k = 0; k < 12; ++k) ASSERT_NEAR(b.z[(n * C + c) * 12 + k], a.z[(n * C + perm[c]) * 12 + k], 1e-9);
      for (std::size_t k = 0; k < 12; ++k) {
        ASSERT_NEAR(b.z_mean[n * 12 + k], a.z_mean[n * 12 + k], 1e-9);
        ASSERT_NEAR(b.z_color[n * 12 + k], a.z_color[n * 12 + k], 1e-9);
      }
    }
  }
}

TEST(MultiviewFuse, NoViewsIsAnError) {
  const FieldConfig cfg = small_config();
  const auto p = random_params(cfg, 22);
  EXPECT_THROW(multiview_fuse(p, cfg, TD::zeros({0, 6}), TD::zeros({0, 6}), {}, 0, 0), std::invalid_argument);
}

// ---- direction encoding ----

TEST(PosencDir, ClosedFormForForwardAxis) {
  const TD e = posenc_dir<double>(std::vector<Vec3>{Vec3(0, 0, 1)}, 1);
  const double expect[6] = {0, 0, 0, 1, 1, -1};
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(e[static_cast<std::size_t>(i)], expect[i], 1e-15);
}

TEST(PosencDir, LengthAndOddness) {
  std::mt19937_64 rng(23);
  const auto d = random_dirs(20, rng);
  std::vector<Vec3> neg;
  for (const auto& x : d) neg.push_back(-x);
  const TD a = posenc_dir<double>(d, 4), b = posenc_dir<double>(neg, 4);
  EXPECT_EQ(a.shape(), (Shape{20, 24}));
  for (std::size_t n = 0; n < 20; ++n)
    for (std::size_t k = 0; k < 4; ++k)
      for (std::size_t j = 0; j < 3; ++j) {
        EXPECT_NEAR(b[n * 24 + 6 * k + j], -a[n * 24 + 6 * k + j], 1e-15);
        EXPECT_NEAR(b[n * 24 + 6 * k + 3 + j], a[n * 24 + 6 * k + 3 + j], 1e-15);
      }
}

TEST(PosencDir, NearUnitIsRenormalisedOtherwiseRejected) {
  const TD a = posenc_dir<double>(std::vector<Vec3>{Vec3(0, 0, 1.0005)}, 2);
  const TD b = posenc_dir<double>(std::vector<Vec3>{Vec3(0, 0, 1)}, 2);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
  EXPECT_THROW(posenc_dir<double>(std::vector<Vec3>{Vec3(0, 0, 1.01)}, 2), std::invalid_argument);
}

// ---- full point evaluation ----

TEST(EvaluatePoint, ZeroHeadsGiveClosedForm) {
  FieldConfig cfg;
  cfg.zero_init_heads = true;
  const auto p = make_field_params<double>(cfg, 24);
  const CaptureSet& set = small_capture();
  const auto st = prepare_frame(p, cfg, observation(set, 5, {0, 1, 2}, {0, 10}));
  std::mt19937_64 rng(24);
  for (const auto& x : points_near_body(set, 5, 20, rng)) {
    const PointSample ps = evaluate_point(p, cfg, st, x, Vec3(0, 0, -1));
    EXPECT_NEAR(ps.sigma, std::log(2.0), 1e-12);
    for (int c = 0; c < 3; ++c) EXPECT_EQ(ps.rgb[c], 0.5);
  }
}

TEST(EvaluatePoint, FiniteAndInRangeEverywhere) {
  FieldConfig cfg;
  const auto p = make_field_params<float>(cfg, 25);
  const CaptureSet& set = small_capture();
  const auto st = prepare_frame(p, cfg, observation(set, 5, {0, 1, 2}, {0, 10}));
  std::mt19937_64 rng(25);
  std::vector<Vec3> pts;
  for (int i = 0; i < 10000; ++i) pts.push_back(Vec3(uniform01(rng) - 0.5, uniform01(rng) - 0.5, uniform01(rng) - 0.5) * 6.0);
  const auto out = query_field(p, cfg, st, pts, random_dirs(pts.size(), rng));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    ASSERT_TRUE(std::isfinite(out.sigma[i]));
    ASSERT_GE(out.sigma[i], 0.0f);
    for (std::size_t c = 0; c < 3; ++c) {
      ASSERT_GE(out.rgb[i * 3 + c], 0.0f);
      ASSERT_LE(out.rgb[i * 3 + c], 1.0f);
    }
  }
}

TEST(EvaluatePoint, EndToEndGradientsMatchFiniteDifferences) {
  FieldConfig cfg = small_config();
  ParamSet<double> p = random_params(cfg, 26);
  const CaptureSet& set = small_capture();
  const FrameObservation obs = observation(set, 6, {0, 1, 3}, {1, 11});
  std::mt19937_64 rng(26);
  const auto pts = points_near_body(set, 6, 12, rng);
  const auto dirs = random_dirs(pts.size(), rng);
  const TD ws = oracle::random_matrix(rng, pts.size(), 1), wc = oracle::random_matrix(rng, pts.size(), 3);
  auto loss = [&]() {
    const auto st = prepare_frame(p, cfg, obs);
    const auto out = query_field(p, cfg, st, pts, dirs);
    return add(sum(mul(reshape(out.sigma, {pts.size(), 1}), ws)), sum(mul(out.rgb, wc)));
  };
  std::vector<std::pair<std::string, TD>> probe;
  for (const auto& name : p.names()) probe.emplace_back(name, p.at(name));
  const auto r = grad_check_params(loss, probe, 1e-6, 1e-6, 6, 27);
  EXPECT_GT(r.checked, 100u);
  EXPECT_LT(r.max_rel_error, 1e-3) << r.worst;
}

TEST(EvaluatePoint, EveryParameterGetsGradient) {
  for (const bool temporal : {false, true}) {
    for (const bool multiview : {false, true}) {
      FieldConfig cfg = small_config();
      cfg.enable_temporal = temporal;
      cfg.enable_multiview = multiview;
      cfg.separate_query = multiview;
      const auto p = make_field_params<double>(cfg, 28);
      const CaptureSet& set = small_capture();
      std::mt19937_64 rng(28);
      const auto st = prepare_frame(p, cfg, observation(set, 4, {0, 1, 2}, {0, 9}));
      const auto pts = points_near_body(set, 4, 200, rng);
      const auto out = query_field(p, cfg, st, pts, random_dirs(pts.size(), rng));
      const TD target = oracle::random_matrix(rng, pts.size(), 3);
      backward(add(mean(square(sub(out.rgb, target))), mean(out.sigma)));
      for (const auto& name : p.names()) {
        double mag = 0.0;
        for (double g : p.at(name).grad()) mag = std::max(mag, std::abs(g));
        EXPECT_GT(mag, 0.0) << cfg.variant_name() << " " << name;
      }
    }
  }
}

TEST(VoxelPathway, RigidMotionInvariance) {
  FieldConfig cfg = small_config();
  const auto p = random_params(cfg, 29);
  const CaptureSet& set = small_capture();
  const FrameObservation obs = observation(set, 7, {0, 2, 3}, {2});
  std::mt19937_64 rng(29);
  const auto pts = points_near_body(set, 7, 50, rng);
  const auto base = prepare_frame(p, cfg, obs);
  std::vector<Vec3> local;
  for (const auto& x : pts) local.push_back(world_to_body(base.pose, x));
  const TD ref = sample_skeletal(base.grid, local);
  for (int trial = 0; trial < 5; ++trial) {
    const auto g = oracle::random_rigid(rng, 2.0);
    FrameObservation moved = obs;
    for (auto& c : moved.cameras) c = oracle::move_camera(c, g);
    for (auto& frame : moved.vertices)
      for (auto& v : frame) v = g.apply(v);
    moved.pose = oracle::move_pose(obs.pose, g);
    const auto st = prepare_frame(p, cfg, moved);
    std::vector<Vec3> moved_local;
    for (const auto& x : pts) moved_local.push_back(world_to_body(st.pose, g.apply(x)));
    const TD out = sample_skeletal(st.grid, moved_local);
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(out[i], ref[i], 1e-6);
  }
}

}  // namespace
}  // namespace nhp
