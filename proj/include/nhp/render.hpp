// SPDX-License-Identifier: Apache-2.0
//
// Ray sampling, quadrature compositing, image rendering and metrics.
#pragma once

#include <functional>
#include <random>
#include <span>
#include <vector>

#include "nhp/field.hpp"
#include "nhp/image.hpp"

namespace nhp {

class RenderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SampleMode { kEval, kTrain };

struct RaySamples {
  std::vector<double> depths;  // ascending
  std::vector<double> deltas;  // z_{i+1} - z_i, last = (far - near) / n
};

// One sample per equal bin of [z_near, z_far]: bin centres in eval mode,
// uniform jitter within the bin in training mode (rng required).
RaySamples sample_points(const Ray& ray, int n, SampleMode mode, std::mt19937_64* rng = nullptr);

struct CompositeResult {
  Vec3 rgb = Vec3::Zero();
  double alpha = 0.0;
  std::vector<double> weights;
  std::vector<double> transmittance;
};

// alpha_i = 1 - exp(-sigma_i delta_i), T_i = prod_{j<i} (1 - alpha_j),
// w_i = T_i alpha_i. Throws RenderError on negative sigma or delta.
CompositeResult composite(std::span<const double> sigma, std::span<const Vec3> colors,
                          std::span<const double> deltas);

template <typename T>
struct CompositeBatch {
  Tensor<T> rgb;      // [B, 3]
  Tensor<T> alpha;    // [B]
  Tensor<T> weights;  // [B, n]
};

// Differentiable form: sigma [B, n], rgb [B, n, 3], deltas [B * n].
template <typename T>
CompositeBatch<T> composite_batch(const Tensor<T>& sigma, const Tensor<T>& rgb, const std::vector<T>& deltas);

struct RenderOptions {
  int samples = 64;
  int threads = 0;
  std::size_t chunk_rays = 128;  // fixed work unit; output does not depend on threads
};

struct RenderResult {
  Image image;
  GrayImage alpha;
  std::size_t rays_evaluated = 0;
};

// Evaluates sigma and rgb for a chunk of points; called concurrently from
// several threads with disjoint chunks.
using FieldFn = std::function<void(std::span<const Vec3> points, std::span<const Vec3> dirs,
                                   std::vector<double>& sigma, std::vector<Vec3>& rgb)>;

// Eval-mode render of any field: one ray per pixel centre, rays missing
// `box` stay black, samples composited in double precision.
RenderResult render_field(const FieldFn& field, const Aabb& box, const Camera& query, const RenderOptions& opts = {});

// Eval-mode render of a prepared frame. Rays missing `box` stay black.
// The parameters must not require gradients.
template <typename T>
RenderResult render_image(const ParamSet<T>& params, const FieldConfig& cfg, const FrameState<T>& state,
                          const Aabb& box, const Camera& query, const RenderOptions& opts = {});

inline constexpr double kPsnrCap = 100.0;

double mse(const Image& a, const Image& b);
// 10 log10(1 / MSE), capped at kPsnrCap.
double psnr(const Image& a, const Image& b);
// PSNR restricted to the rectangle [x0, x1) x [y0, y1).
double psnr_region(const Image& a, const Image& b, int x0, int y0, int x1, int y1);
// 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2, valid region,
// averaged over channels.
double ssim(const Image& a, const Image& b);

}  // namespace nhp
