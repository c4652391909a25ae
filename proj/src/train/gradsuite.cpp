// SPDX-License-Identifier: Apache-2.0
#include "nhp/gradsuite.hpp"

#include <map>
#include <random>

#include "nhp/gradcheck.hpp"
#include "nhp/render.hpp"
#include "nhp/synth.hpp"

namespace nhp {

namespace {

using TD = Tensor<double>;

TD random(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = lo + (hi - lo) * uniform01(rng);
  return TD(std::move(shape), std::move(v), true);
}

// Keeps values away from the relu kink so central differences are valid.
TD away_from_zero(std::mt19937_64& rng, Shape shape) {
  TD t = random(rng, std::move(shape));
  for (auto& x : t.mutable_data()) x = x < 0 ? x - 0.05 : x + 0.05;
  return t;
}

class Suite {
 public:
  Suite(std::uint64_t seed, const std::function<void(const GradSuiteEntry&)>& progress)
      : rng_(seed), progress_(progress) {}

  void check(const std::string& name, double tol, const std::function<TD()>& loss,
             std::vector<std::pair<std::string, TD>> inputs, std::size_t max_entries = 0) {
    const GradCheckResult r = grad_check_params(loss, std::move(inputs), 1e-6, 1e-6, max_entries, rng_());
    GradSuiteEntry e{name, r.max_rel_error, tol, r.checked, r.skipped_kinks, r.worst};
    if (progress_) progress_(e);
    entries_.push_back(std::move(e));
  }

  // Weighted sum so every output coordinate carries a distinct gradient.
  TD project(const TD& y) {
    auto it = probes_.find(y.shape());
    if (it == probes_.end()) it = probes_.emplace(y.shape(), random(rng_, y.shape()).detach()).first;
    return sum(mul(y, it->second));
  }

  std::mt19937_64& rng() { return rng_; }
  std::vector<GradSuiteEntry> take() { return std::move(entries_); }

 private:
  std::mt19937_64 rng_;
  std::function<void(const GradSuiteEntry&)> progress_;
  std::map<Shape, TD> probes_;
  std::vector<GradSuiteEntry> entries_;
};

FrameObservation observation(const CaptureSet& set, int t, const std::vector<int>& views, const std::vector<int>& memory) {
  const SubjectCapture& s = set.subjects[0];
  FrameObservation obs;
  for (int v : views) obs.cameras.push_back(set.cameras[static_cast<std::size_t>(v)]);
  std::vector<int> times{t};
  times.insert(times.end(), memory.begin(), memory.end());
  for (int tm : times) {
    std::vector<const Image*> row;
    for (int v : views) row.push_back(&s.images[static_cast<std::size_t>(v)][static_cast<std::size_t>(tm)]);
    obs.images.push_back(row);
    obs.vertices.push_back(s.frames[static_cast<std::size_t>(tm)].vertices);
  }
  obs.pose = s.frames[static_cast<std::size_t>(t)].pose;
  return obs;
}

ParamSet<double> with_random_biases(ParamSet<double> p, std::mt19937_64& rng) {
  for (const auto& name : p.names())
    if (name.back() == 'b')
      for (auto& v : p.at(name).mutable_data()) v = 0.2 * (uniform01(rng) - 0.5);
  return p;
}

std::vector<std::pair<std::string, TD>> all_params(const ParamSet<double>& p) {
  std::vector<std::pair<std::string, TD>> out;
  for (const auto& name : p.names()) out.emplace_back(name, p.at(name));
  return out;
}

void elementwise_ops(Suite& s) {
  auto& rng = s.rng();
  TD a = away_from_zero(rng, {3, 4}), b = random(rng, {3, 4}), pos = random(rng, {3, 4}, 0.2, 1.5);
  s.check("add", kOpGradTolerance, [&] { return s.project(add(a, b)); }, {{"a", a}, {"b", b}});
  s.check("sub", kOpGradTolerance, [&] { return s.project(sub(a, b)); }, {{"a", a}, {"b", b}});
  s.check("mul", kOpGradTolerance, [&] { return s.project(mul(a, b)); }, {{"a", a}, {"b", b}});
  s.check("scale", kOpGradTolerance, [&] { return s.project(scale(a, 1.7)); }, {{"a", a}});
  s.check("add_scalar", kOpGradTolerance, [&] { return s.project(add_scalar(a, -0.4)); }, {{"a", a}});
  s.check("relu", kOpGradTolerance, [&] { return s.project(relu(a)); }, {{"a", a}});
  s.check("sigmoid", kOpGradTolerance, [&] { return s.project(sigmoid(scale(b, 3.0))); }, {{"b", b}});
  s.check("softplus", kOpGradTolerance, [&] { return s.project(softplus(scale(b, 3.0))); }, {{"b", b}});
  s.check("exp", kOpGradTolerance, [&] { return s.project(exp(b)); }, {{"b", b}});
  s.check("square", kOpGradTolerance, [&] { return s.project(square(b)); }, {{"b", b}});
  TD bias = random(rng, {4});
  TD x3 = random(rng, {2, 3, 4});
  s.check("add_bias", kOpGradTolerance, [&] { return s.project(add_bias(x3, bias)); }, {{"x", x3}, {"bias", bias}});
  s.check("sum", kOpGradTolerance, [&] { return sum(mul(pos, pos)); }, {{"x", pos}});
  s.check("mean", kOpGradTolerance, [&] { return mean(mul(pos, b)); }, {{"x", pos}, {"b", b}});
  s.check("sum_last", kOpGradTolerance, [&] { return s.project(sum_last(x3)); }, {{"x", x3}});
  s.check("mse", kOpGradTolerance, [&] { return mse(a, b); }, {{"a", a}, {"b", b}});
}

void structural_ops(Suite& s) {
  auto& rng = s.rng();
  TD x = random(rng, {2, 3, 4}), y = random(rng, {2, 5}), z = random(rng, {2, 3});
  s.check("reshape", kOpGradTolerance, [&] { return s.project(reshape(x, {6, 4})); }, {{"x", x}});
  s.check("transpose", kOpGradTolerance, [&] { return s.project(transpose(x)); }, {{"x", x}});
  s.check("concat", kOpGradTolerance, [&] { return s.project(concat<double>({z, y}, 1)); }, {{"y", y}, {"z", z}});
  TD a = random(rng, {5, 3}), w = random(rng, {3, 4}), wb = random(rng, {2, 3, 6}), bb = random(rng, {2, 6, 4});
  TD bt = random(rng, {2, 4, 6}), bias = random(rng, {4});
  s.check("matmul", kOpGradTolerance, [&] { return s.project(matmul(a, w)); }, {{"a", a}, {"w", w}});
  s.check("matmul_batched", kOpGradTolerance, [&] { return s.project(matmul(wb, bb)); }, {{"a", wb}, {"b", bb}});
  s.check("matmul_transposed", kOpGradTolerance, [&] { return s.project(matmul(wb, bt, true)); }, {{"a", wb}, {"b", bt}});
  s.check("linear", kOpGradTolerance, [&] { return s.project(linear(a, w, bias)); }, {{"x", a}, {"w", w}, {"b", bias}});
  SparseRows<double> rows(5);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 5; ++c)
      if (uniform01(rng) < 0.6) rows.push(c, uniform01(rng) * 2 - 1);
    rows.end_row();
  }
  s.check("spmm", kOpGradTolerance, [&] { return s.project(spmm(rows, a)); }, {{"x", a}});
  TD logits = random(rng, {3, 2, 4}, -2.0, 2.0);
  std::vector<std::uint8_t> mask(24, 1);
  mask[1] = mask[6] = mask[7] = 0;
  for (int k = 16; k < 20; ++k) mask[static_cast<std::size_t>(k)] = 0;
  s.check("softmax_rows", kOpGradTolerance, [&] { return s.project(softmax_rows(logits)); }, {{"x", logits}});
  s.check("softmax_rows_masked", kOpGradTolerance, [&] { return s.project(softmax_rows(logits, &mask)); }, {{"x", logits}});
  TD c = random(rng, {3, 5});
  s.check("cumsum_exclusive", kOpGradTolerance, [&] { return s.project(cumsum_exclusive(c)); }, {{"x", c}});
}

void model_ops(Suite& s, const CaptureSet& set) {
  auto& rng = s.rng();
  FieldConfig cfg;
  ParamSet<double> p = with_random_biases(make_field_params<double>(cfg, rng()), rng);
  const FrameObservation obs = observation(set, 5, {0, 1, 3}, {0, 10});
  std::vector<const Image*> stack;
  for (const auto& row : obs.images)
    for (const Image* img : row) stack.push_back(img);
  const TD images = image_stack<double>(stack);
  const int h = set.cameras[0].height, w = set.cameras[0].width;
  const auto count = static_cast<int>(stack.size());

  s.check("encoder", kOpGradTolerance, [&] { return s.project(encode_images(p, images, count, h, w)); },
          {{"enc.conv1.w", p.at("enc.conv1.w")}, {"enc.conv1.b", p.at("enc.conv1.b")},
           {"enc.conv2.w", p.at("enc.conv2.w")}, {"enc.conv3.w", p.at("enc.conv3.w")}, {"enc.conv3.b", p.at("enc.conv3.b")}},
          30);

  TD fmaps = random(rng, {static_cast<std::size_t>(count) * (h / 2) * (w / 2), 32});
  s.check("pixel_aligned_sampling", kOpGradTolerance,
          [&] {
            const auto bank = build_skeletal_bank(fmaps, h / 2, w / 2, h, w, obs.cameras, obs.vertices);
            return s.project(bank.features);
          },
          {{"fmaps", fmaps}}, 200);

  const auto bank0 = build_skeletal_bank(fmaps.detach(), h / 2, w / 2, h, w, obs.cameras, obs.vertices);
  SkeletalBank<double> bank = bank0;
  bank.features = TD(bank0.features.shape(), std::vector<double>(bank0.features.data().begin(), bank0.features.data().end()), true);
  // temporal.k.b shifts every logit of a row by the same amount, so its
  // gradient is exactly zero and only roundoff would be compared.
  s.check("temporal_fuse", kOpGradTolerance, [&] { return s.project(temporal_fuse(p, cfg, bank)); },
          {{"bank", bank.features}, {"temporal.q.w", p.at("temporal.q.w")}, {"temporal.q.b", p.at("temporal.q.b")},
           {"temporal.k.w", p.at("temporal.k.w")}, {"temporal.v.w", p.at("temporal.v.w")}, {"temporal.v.b", p.at("temporal.v.b")}},
          40);

  std::vector<Vec3> local;
  for (const auto& v : obs.vertices[0]) local.push_back(world_to_body(obs.pose, v));
  const std::size_t C = obs.views();
  TD sp = random(rng, {local.size() * C, 32});
  const Aabb box = body_bbox(local);
  std::vector<Vec3> q;
  for (int i = 0; i < 40; ++i) q.push_back(box.min + Vec3(uniform01(rng), uniform01(rng), uniform01(rng)).cwiseProduct(box.extent()));
  s.check("voxel_diffusion_and_trilinear", kOpGradTolerance,
          [&] { return s.project(sample_skeletal(diffuse_to_voxels(p, sp, local, C, cfg), q)); },
          {{"s_prime", sp}, {"voxel.conv1.w", p.at("voxel.conv1.w")}, {"voxel.conv1.b", p.at("voxel.conv1.b")},
           {"voxel.conv2.w", p.at("voxel.conv2.w")}, {"voxel.conv2.b", p.at("voxel.conv2.b")}},
          24);

  const std::size_t N = 6;
  TD ms = random(rng, {N * C, 32}), mp = random(rng, {N * C, 32});
  std::vector<std::uint8_t> valid(N * C, 1);
  valid[2] = valid[7] = 0;
  s.check("multiview_fuse", kOpGradTolerance,
          [&] {
            const auto f = multiview_fuse(p, cfg, ms, mp, valid, N, C);
            return add(add(s.project(f.z), s.project(f.z_mean)), s.project(f.z_color));
          },
          {{"s", ms}, {"p", mp}, {"fuse.k.w", p.at("fuse.k.w")}, {"fuse.k.b", p.at("fuse.k.b")},
           {"fuse.v.w", p.at("fuse.v.w")}, {"fuse.v.b", p.at("fuse.v.b")}},
          40);

  std::vector<Vec3> dirs;
  for (std::size_t i = 0; i < N; ++i) dirs.push_back(Vec3(uniform01(rng) - 0.5, uniform01(rng) - 0.5, 0.7).normalized());
  const TD enc = posenc_dir<double>(dirs, cfg.dir_freqs);
  FusedFeatures<double> fused;
  fused.z_mean = random(rng, {N, 128});
  fused.z_color = random(rng, {N, 128});
  std::vector<std::pair<std::string, TD>> head_inputs{{"z_mean", fused.z_mean}, {"z_color", fused.z_color}};
  for (const auto& name : p.names())
    if (name.rfind("density", 0) == 0 || name.rfind("color", 0) == 0) head_inputs.emplace_back(name, p.at(name));
  s.check("heads", kOpGradTolerance,
          [&] {
            const auto out = field_heads(p, cfg, fused, enc);
            return add(s.project(out.sigma), s.project(out.rgb));
          },
          head_inputs, 20);

  TD sigma = random(rng, {4, 8}, 0.1, 4.0), rgb = random(rng, {4, 8, 3}, 0.0, 1.0);
  std::vector<double> deltas(32);
  for (auto& d : deltas) d = 0.02 + 0.2 * uniform01(rng);
  s.check("composite", kOpGradTolerance,
          [&] {
            const auto c = composite_batch(sigma, rgb, deltas);
            return add(s.project(c.rgb), s.project(c.alpha));
          },
          {{"sigma", sigma}, {"rgb", rgb}});
}

void end_to_end(Suite& s, const CaptureSet& set) {
  auto& rng = s.rng();
  for (const bool full : {true, false}) {
    FieldConfig cfg;
    cfg.enable_temporal = full;
    cfg.enable_multiview = full;
    ParamSet<double> p = with_random_biases(make_field_params<double>(cfg, rng()), rng);
    const FrameObservation obs = observation(set, 6, {0, 2, 3}, {1, 11});
    const Aabb box = body_bbox(obs.vertices[0]);
    std::vector<Vec3> pts, dirs;
    for (int i = 0; i < 8; ++i) {
      pts.push_back(box.min + Vec3(uniform01(rng), uniform01(rng), uniform01(rng)).cwiseProduct(box.extent()));
      dirs.push_back(Vec3(uniform01(rng) - 0.5, uniform01(rng) - 0.5, uniform01(rng) - 0.5).normalized());
    }
    s.check(std::string("point_evaluation_") + cfg.variant_name(), kEndToEndGradTolerance,
            [&] {
              const auto st = prepare_frame(p, cfg, obs);
              const auto out = query_field(p, cfg, st, pts, dirs);
              return add(s.project(out.sigma), s.project(out.rgb));
            },
            all_params(p), 4);
  }
}

}  // namespace

std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed,
                                               const std::function<void(const GradSuiteEntry&)>& progress) {
  Suite s(seed, progress);
  elementwise_ops(s);
  structural_ops(s);
  GenerateOptions o;
  o.subjects = 1;
  o.frames = 12;
  o.views = 4;
  o.resolution = 16;
  o.seed = seed;
  const CaptureSet set = generate_captures(o);
  model_ops(s, set);
  end_to_end(s, set);
  return s.take();
}

}  // namespace nhp
