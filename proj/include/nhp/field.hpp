// SPDX-License-Identifier: Apache-2.0
//
// Generalizable radiance field: skeletal feature bank, temporal attention
// over memory frames, sparse voxel diffusion in the body-local frame,
// multi-view cross-attention with pixel-aligned features, and MLP heads.
#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "nhp/encoder.hpp"
#include "nhp/geometry.hpp"
#include "nhp/ops.hpp"
#include "nhp/params.hpp"

namespace nhp {

struct FieldConfig {
  bool enable_skeletal = true;
  bool enable_pixel_aligned = true;
  bool enable_temporal = true;   // else mean over memory frames
  bool enable_multiview = true;  // else mean over views
  bool separate_query = false;   // distinct q map in the multi-view attention

  EncoderConfig encoder;
  int temporal_dim = 64;   // d0
  int voxel_dim = 32;      // d_vox
  int fuse_dim = 128;      // d1
  int density_width = 64;
  int color_width = 64;
  int dir_freqs = 4;       // l
  int grid_resolution = 32;
  int grid_padding = 2;
  bool zero_init_heads = false;

  // Throws std::invalid_argument for unsupported flag combinations.
  void validate() const;
  std::string variant_name() const;
};

// Registers every weight the configuration uses.
template <typename T>
ParamSet<T> make_field_params(const FieldConfig& cfg, std::uint64_t seed);

// Inputs for one query time t.
struct FrameObservation {
  std::vector<Camera> cameras;                    // C input views
  std::vector<std::vector<const Image*>> images;  // [m][c], m = 0 is time t, then memory frames
  std::vector<std::vector<Vec3>> vertices;        // [m] world vertices
  BodyPose pose;                                  // body pose at time t

  std::size_t views() const { return cameras.size(); }
  std::size_t frames() const { return images.size(); }
};

template <typename T>
struct SkeletalBank {
  Tensor<T> features;          // [L * C, M', d], row (i, c), slab m
  std::vector<std::uint8_t> valid;  // [L * C * M']
  std::size_t vertices = 0, views = 0, frames = 0;
};

// fmaps: [M' * C * fm_h * fm_w, d], map (m, c) at block m * C + c.
template <typename T>
SkeletalBank<T> build_skeletal_bank(const Tensor<T>& fmaps, int fm_height, int fm_width, int src_height,
                                    int src_width, const std::vector<Camera>& cameras,
                                    const std::vector<std::vector<Vec3>>& vertices);

// s' [L * C, d]. Attention from the frame-t slab over the memory slabs plus a
// residual; without the temporal transformer, the masked mean of all slabs.
// `attention` receives the [L * C, 1, M' - 1] weights when attention runs.
template <typename T>
Tensor<T> temporal_fuse(const ParamSet<T>& params, const FieldConfig& cfg, const SkeletalBank<T>& bank,
                        Tensor<T>* attention = nullptr);

// Sparse grid layout over the body-local box. Active sets grow from the
// occupied cells by one 3x3x3 dilation per conv layer.
struct GridGeometry {
  Aabb box;
  Vec3 origin = Vec3::Zero();  // corner of cell (0, 0, 0)
  double edge = 0.0;
  std::array<int, 3> dims{};
  std::vector<int> occupied, level1, level2;  // linear cell ids, ascending
  std::vector<int> vertex_cell;
  std::vector<int> level2_row;  // dense cell id -> row in level2 or -1

  int cell_id(int x, int y, int z) const { return (z * dims[1] + y) * dims[0] + x; }
  std::size_t cells() const { return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2]; }
};

GridGeometry make_grid(std::span<const Vec3> local_vertices, int resolution, int padding);

template <typename T>
struct VoxelGrid {
  std::shared_ptr<const GridGeometry> geometry;
  std::size_t views = 0;
  Tensor<T> features;  // [|level2| * C, d_vox], row (cell, c)
};

// Scatter-mean of s' into occupied cells, then two 3x3x3 sparse convs with
// relu, weights shared across views.
template <typename T>
VoxelGrid<T> diffuse_to_voxels(const ParamSet<T>& params, const Tensor<T>& s_prime,
                               std::span<const Vec3> local_vertices, std::size_t views, const FieldConfig& cfg);

// Trilinear over cell centres; inactive cells read as zero, points outside
// the box give zero rows. Output [N * C, d_vox], row (point, c).
template <typename T>
Tensor<T> sample_skeletal(const VoxelGrid<T>& grid, std::span<const Vec3> local_points);

template <typename T>
struct PixelFeatures {
  Tensor<T> features;               // [N * C, d]
  std::vector<std::uint8_t> valid;  // [N * C]
};

// Projects world points into each view and samples the frame-t maps (the
// first C blocks of fmaps).
template <typename T>
PixelFeatures<T> sample_query_pixel_features(const Tensor<T>& fmaps, int fm_height, int fm_width,
                                             int src_height, int src_width, const std::vector<Camera>& cameras,
                                             std::span<const Vec3> points);

template <typename T>
struct FusedFeatures {
  Tensor<T> z;        // [N, C, d1]
  Tensor<T> z_mean;   // [N, d1], mean over all views
  Tensor<T> z_color;  // [N, d1], mean over valid views
  Tensor<T> attention;  // [N, C, C] when the multi-view transformer runs
};

// s and p are [N * C, d]; either may be undefined when its branch is off.
template <typename T>
FusedFeatures<T> multiview_fuse(const ParamSet<T>& params, const FieldConfig& cfg, const Tensor<T>& s,
                                const Tensor<T>& p, const std::vector<std::uint8_t>& valid, std::size_t points,
                                std::size_t views);

// [N, 6l]: for k < l, sin(2^k pi d) for x, y, z then cos(2^k pi d) for x, y, z.
// Directions within 1e-3 of unit length are renormalised, others throw.
template <typename T>
Tensor<T> posenc_dir(std::span<const Vec3> dirs, int freqs);

template <typename T>
struct FieldOutput {
  Tensor<T> sigma;  // [N]
  Tensor<T> rgb;    // [N, 3]
};

template <typename T>
FieldOutput<T> field_heads(const ParamSet<T>& params, const FieldConfig& cfg, const FusedFeatures<T>& fused,
                           const Tensor<T>& dir_encoding);

// Everything that depends only on the frame: feature maps and voxel grid.
template <typename T>
struct FrameState {
  std::vector<Camera> cameras;
  int src_height = 0, src_width = 0, fm_height = 0, fm_width = 0;
  Tensor<T> fmaps;
  BodyPose pose;
  bool has_grid = false;
  VoxelGrid<T> grid;
};

template <typename T>
FrameState<T> prepare_frame(const ParamSet<T>& params, const FieldConfig& cfg, const FrameObservation& obs);

template <typename T>
FieldOutput<T> query_field(const ParamSet<T>& params, const FieldConfig& cfg, const FrameState<T>& state,
                           std::span<const Vec3> points, std::span<const Vec3> dirs);

struct PointSample {
  double sigma = 0.0;
  Vec3 rgb = Vec3::Zero();
};

template <typename T>
PointSample evaluate_point(const ParamSet<T>& params, const FieldConfig& cfg, const FrameState<T>& state,
                           const Vec3& x, const Vec3& dir);

}  // namespace nhp
