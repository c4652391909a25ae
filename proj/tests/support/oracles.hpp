// SPDX-License-Identifier: Apache-2.0
//
// Brute-force reference implementations used by unit and acceptance tests.
#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "nhp/field.hpp"

namespace nhp::oracle {

// Row vector times a [in, out] weight plus bias, in plain loops.
std::vector<double> affine(const ParamSet<double>& p, const std::string& name, const std::vector<double>& x);

// Bilinear sample of map (m, c) of fmaps at source pixel p; empty when the
// point is outside the image.
std::vector<double> bilinear(const Tensor<double>& fmaps, std::size_t map, int fm_h, int fm_w, const Vec2& p,
                             bool* inside);

// Bank entry (vertex i, view c, frame m) recomputed on its own.
std::vector<double> bank_entry(const Tensor<double>& fmaps, int fm_h, int fm_w, const std::vector<Camera>& cameras,
                               const std::vector<std::vector<Vec3>>& vertices, std::size_t i, std::size_t c,
                               std::size_t m, bool* valid);

// Temporal attention for one (vertex, view) row of a bank: returns s' and
// the attention weights over memory frames.
std::vector<double> temporal_row(const ParamSet<double>& p, const FieldConfig& cfg, const SkeletalBank<double>& bank,
                                 std::size_t row, std::vector<double>* weights = nullptr);

// Multi-view attention for point n: z rows [C * d1] and attention [C * C].
std::vector<double> multiview_point(const ParamSet<double>& p, const FieldConfig& cfg, const Tensor<double>& s,
                                    const Tensor<double>& px, const std::vector<std::uint8_t>& valid, std::size_t n,
                                    std::size_t C, std::vector<double>* attention = nullptr);

// Random bank with invalid entries zeroed.
SkeletalBank<double> random_bank(std::mt19937_64& rng, std::size_t L, std::size_t C, std::size_t M, std::size_t d,
                                 double invalid_rate);

// Random [rows, cols] tensor, uniform in [-1, 1].
Tensor<double> random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols);

// A uniformly random rotation and a translation of up to `reach` per axis.
struct Rigid {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  Vec3 apply(const Vec3& x) const { return R * x + t; }
};
Rigid random_rigid(std::mt19937_64& rng, double reach);
// Camera seeing apply(x) exactly where `cam` saw x.
Camera move_camera(const Camera& cam, const Rigid& g);
// World-to-body pose for the moved world.
BodyPose move_pose(const BodyPose& pose, const Rigid& g);

}  // namespace nhp::oracle
