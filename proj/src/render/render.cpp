// SPDX-License-Identifier: Apache-2.0
#include <algorithm>

#include "nhp/parallel.hpp"
#include "nhp/render.hpp"

namespace nhp {

RenderResult render_field(const FieldFn& field, const Aabb& box, const Camera& query, const RenderOptions& opts) {
  RenderResult out{Image(query.width, query.height), GrayImage(query.width, query.height), 0};
  struct Job {
    int x, y;
    Ray ray;
  };
  std::vector<Job> jobs;
  for (int y = 0; y < query.height; ++y) {
    for (int x = 0; x < query.width; ++x) {
      Ray ray = generate_ray(query, Vec2(x, y));
      const auto bounds = ray_box_bounds(ray, box);
      if (!bounds || !(bounds->first < bounds->second)) continue;
      ray.z_near = bounds->first;
      ray.z_far = bounds->second;
      jobs.push_back({x, y, ray});
    }
  }
  out.rays_evaluated = jobs.size();
  const std::size_t chunk = std::max<std::size_t>(1, opts.chunk_rays);
  const std::size_t chunks = (jobs.size() + chunk - 1) / chunk;
  const auto n = static_cast<std::size_t>(opts.samples);
  parallel_for(chunks, opts.threads, [&](std::size_t c0, std::size_t c1) {
    std::vector<Vec3> points, dirs, rgb;
    std::vector<double> deltas, sigma;
    for (std::size_t ci = c0; ci < c1; ++ci) {
      const std::size_t b0 = ci * chunk, b1 = std::min(jobs.size(), b0 + chunk);
      points.clear();
      dirs.clear();
      deltas.clear();
      for (std::size_t b = b0; b < b1; ++b) {
        const RaySamples s = sample_points(jobs[b].ray, opts.samples, SampleMode::kEval);
        for (std::size_t i = 0; i < n; ++i) {
          points.push_back(jobs[b].ray.at(s.depths[i]));
          dirs.push_back(jobs[b].ray.dir);
          deltas.push_back(s.deltas[i]);
        }
      }
      sigma.clear();
      rgb.clear();
      field(points, dirs, sigma, rgb);
      if (sigma.size() != points.size() || rgb.size() != points.size()) {
        throw RenderError("render_field: field returned the wrong number of samples");
      }
      for (std::size_t b = b0; b < b1; ++b) {
        const std::size_t o = (b - b0) * n;
        const CompositeResult c = composite(std::span<const double>(sigma).subspan(o, n),
                                            std::span<const Vec3>(rgb).subspan(o, n),
                                            std::span<const double>(deltas).subspan(o, n));
        for (int k = 0; k < 3; ++k) out.image.at(jobs[b].x, jobs[b].y, k) = static_cast<float>(c.rgb[k]);
        out.alpha.at(jobs[b].x, jobs[b].y) = static_cast<float>(c.alpha);
      }
    }
  });
  return out;
}

template <typename T>
RenderResult render_image(const ParamSet<T>& params, const FieldConfig& cfg, const FrameState<T>& state,
                          const Aabb& box, const Camera& query, const RenderOptions& opts) {
  for (const auto& name : params.names()) {
    if (params.at(name).requires_grad()) {
      throw RenderError("render_image: parameters must be detached (" + name + " requires grad)");
    }
  }
  const FieldFn field = [&](std::span<const Vec3> points, std::span<const Vec3> dirs, std::vector<double>& sigma,
                            std::vector<Vec3>& rgb) {
    const FieldOutput<T> f = query_field(params, cfg, state, points, dirs);
    for (std::size_t i = 0; i < points.size(); ++i) {
      sigma.push_back(static_cast<double>(f.sigma[i]));
      rgb.emplace_back(f.rgb[i * 3], f.rgb[i * 3 + 1], f.rgb[i * 3 + 2]);
    }
  };
  return render_field(field, box, query, opts);
}

template RenderResult render_image(const ParamSet<float>&, const FieldConfig&, const FrameState<float>&, const Aabb&,
                                   const Camera&, const RenderOptions&);
template RenderResult render_image(const ParamSet<double>&, const FieldConfig&, const FrameState<double>&,
                                   const Aabb&, const Camera&, const RenderOptions&);

}  // namespace nhp
