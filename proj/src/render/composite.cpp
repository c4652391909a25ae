// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <sstream>

#include "nhp/render.hpp"

namespace nhp {

RaySamples sample_points(const Ray& ray, int n, SampleMode mode, std::mt19937_64* rng) {
  if (n <= 0) throw RenderError("sample_points: sample count must be positive");
  if (!(ray.z_near < ray.z_far)) {
    std::ostringstream os;
    os << "sample_points: z_near " << ray.z_near << " must be below z_far " << ray.z_far;
    throw RenderError(os.str());
  }
  if (mode == SampleMode::kTrain && !rng) throw RenderError("sample_points: training mode needs an rng");
  const double bin = (ray.z_far - ray.z_near) / n;
  RaySamples s;
  s.depths.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double u = mode == SampleMode::kEval ? 0.5 : uniform01(*rng);
    s.depths[static_cast<std::size_t>(i)] = ray.z_near + (i + u) * bin;
  }
  s.deltas.resize(s.depths.size());
  for (std::size_t i = 0; i + 1 < s.depths.size(); ++i) s.deltas[i] = s.depths[i + 1] - s.depths[i];
  s.deltas.back() = bin;
  return s;
}

CompositeResult composite(std::span<const double> sigma, std::span<const Vec3> colors,
                          std::span<const double> deltas) {
  if (sigma.size() != colors.size() || sigma.size() != deltas.size()) {
    throw RenderError("composite: sigma, color and delta counts differ");
  }
  CompositeResult r;
  r.weights.resize(sigma.size());
  r.transmittance.resize(sigma.size());
  double optical = 0.0;
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    if (sigma[i] < 0 || deltas[i] < 0) throw RenderError("composite: negative density or interval");
    const double tau = sigma[i] * deltas[i];
    r.transmittance[i] = std::exp(-optical);
    const double w = r.transmittance[i] * -std::expm1(-tau);
    r.weights[i] = w;
    r.rgb += w * colors[i];
    r.alpha += w;
    optical += tau;
  }
  return r;
}

template <typename T>
CompositeBatch<T> composite_batch(const Tensor<T>& sigma, const Tensor<T>& rgb, const std::vector<T>& deltas) {
  if (sigma.rank() != 2 || rgb.rank() != 3 || rgb.dim(0) != sigma.dim(0) || rgb.dim(1) != sigma.dim(1) ||
      rgb.dim(2) != 3 || deltas.size() != sigma.size()) {
    throw DimensionError("composite_batch: sigma " + shape_str(sigma.shape()) + ", rgb " + shape_str(rgb.shape()) +
                         " and " + std::to_string(deltas.size()) + " intervals are inconsistent");
  }
  const std::size_t B = sigma.dim(0), n = sigma.dim(1);
  const Tensor<T> delta(sigma.shape(), deltas);
  const Tensor<T> tau = mul(sigma, delta);
  const Tensor<T> trans = exp(scale(cumsum_exclusive(tau), T(-1)));
  const Tensor<T> alpha = add_scalar(scale(exp(scale(tau, T(-1))), T(-1)), T(1));
  CompositeBatch<T> out;
  out.weights = mul(trans, alpha);
  out.rgb = reshape(matmul(reshape(out.weights, {B, 1, n}), rgb), {B, 3});
  out.alpha = sum_last(out.weights);
  return out;
}

template CompositeBatch<float> composite_batch(const Tensor<float>&, const Tensor<float>&, const std::vector<float>&);
template CompositeBatch<double> composite_batch(const Tensor<double>&, const Tensor<double>&,
                                                const std::vector<double>&);

}  // namespace nhp
