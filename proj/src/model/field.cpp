// SPDX-License-Identifier: Apache-2.0
#include "nhp/field.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace nhp {

void FieldConfig::validate() const {
  if (!enable_skeletal && !enable_pixel_aligned) {
    throw std::invalid_argument("field config: enable skeletal or pixel-aligned features (or both)");
  }
  if (enable_temporal && !enable_skeletal) {
    throw std::invalid_argument("field config: the temporal transformer needs skeletal features");
  }
  if (enable_multiview && !(enable_skeletal && enable_pixel_aligned)) {
    throw std::invalid_argument("field config: the multi-view transformer needs skeletal and pixel-aligned features");
  }
  if (enable_skeletal && enable_pixel_aligned && voxel_dim != encoder.features) {
    throw std::invalid_argument("field config: voxel_dim must equal the encoder feature width");
  }
  for (int v : {encoder.hidden1, encoder.hidden2, encoder.features, temporal_dim, voxel_dim, fuse_dim, density_width,
                color_width, dir_freqs, grid_resolution}) {
    if (v <= 0) throw std::invalid_argument("field config: widths and counts must be positive");
  }
  if (grid_padding < 0) throw std::invalid_argument("field config: grid_padding must be >= 0");
}

std::string FieldConfig::variant_name() const {
  std::string s;
  auto add = [&](const char* part) { s += s.empty() ? part : std::string("+") + part; };
  if (enable_skeletal) add("Sk");
  if (enable_pixel_aligned) add("Px");
  if (enable_temporal) add("T");
  if (enable_multiview) add("MV");
  return s;
}

namespace {

template <typename T>
void add_linear(ParamSet<T>& p, const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng,
                bool zero = false) {
  auto& w = p.add(name + ".w", {in, out});
  if (!zero) glorot_fill(w, in, out, rng);
  p.add(name + ".b", {out});
}

template <typename T>
Tensor<T> apply(const ParamSet<T>& p, const std::string& name, const Tensor<T>& x) {
  return linear(x, p.at(name + ".w"), p.at(name + ".b"));
}

// Rows averaging groups of `views` consecutive rows, optionally restricted
// to entries whose flag is set (empty rows stay zero).
template <typename T>
std::shared_ptr<const SparseRows<T>> group_mean(std::size_t groups, std::size_t members,
                                                const std::vector<std::uint8_t>* valid) {
  auto s = std::make_shared<SparseRows<T>>(groups * members);
  s->reserve(groups, groups * members);
  for (std::size_t g = 0; g < groups; ++g) {
    std::size_t n = 0;
    for (std::size_t m = 0; m < members; ++m) n += !valid || (*valid)[g * members + m];
    for (std::size_t m = 0; m < members; ++m) {
      if (valid && !(*valid)[g * members + m]) continue;
      s->push(g * members + m, static_cast<T>(1.0 / static_cast<double>(n)));
    }
    s->end_row();
  }
  return s;
}

}  // namespace

template <typename T>
ParamSet<T> make_field_params(const FieldConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ParamSet<T> p;
  add_encoder_params(p, cfg.encoder, rng);
  const auto d_img = static_cast<std::size_t>(cfg.encoder.features);
  const auto d_vox = static_cast<std::size_t>(cfg.voxel_dim);
  const auto d0 = static_cast<std::size_t>(cfg.temporal_dim);
  const auto d1 = static_cast<std::size_t>(cfg.fuse_dim);
  if (cfg.enable_skeletal && cfg.enable_temporal) {
    add_linear(p, "temporal.q", d_img, d0, rng);
    add_linear(p, "temporal.k", d_img, d0, rng);
    add_linear(p, "temporal.v", d_img, d_img, rng);
  }
  if (cfg.enable_skeletal) {
    auto& w1 = p.add("voxel.conv1.w", {d_img, 27 * d_vox});
    glorot_fill(w1, 27 * d_img, d_vox, rng);
    p.add("voxel.conv1.b", {d_vox});
    auto& w2 = p.add("voxel.conv2.w", {d_vox, 27 * d_vox});
    glorot_fill(w2, 27 * d_vox, d_vox, rng);
    p.add("voxel.conv2.b", {d_vox});
  }
  const std::size_t d_in = cfg.enable_skeletal ? d_vox : d_img;
  add_linear(p, "fuse.v", d_in, d1, rng);
  if (cfg.enable_multiview) {
    add_linear(p, "fuse.k", d_in, d1, rng);
    if (cfg.separate_query) add_linear(p, "fuse.q", d_in, d1, rng);
  }
  const auto hw = static_cast<std::size_t>(cfg.density_width);
  add_linear(p, "density.l0", d1, hw, rng);
  add_linear(p, "density.l1", hw, hw, rng);
  add_linear(p, "density.l2", hw, hw, rng);
  add_linear(p, "density.l3", hw, 1, rng, cfg.zero_init_heads);
  const auto cw = static_cast<std::size_t>(cfg.color_width);
  add_linear(p, "color.l0", d1 + 6 * static_cast<std::size_t>(cfg.dir_freqs), cw, rng);
  add_linear(p, "color.l1", cw, 3, rng, cfg.zero_init_heads);
  return p;
}

template <typename T>
SkeletalBank<T> build_skeletal_bank(const Tensor<T>& fmaps, int fm_height, int fm_width, int src_height,
                                    int src_width, const std::vector<Camera>& cameras,
                                    const std::vector<std::vector<Vec3>>& vertices) {
  const std::size_t C = cameras.size(), M = vertices.size();
  if (C == 0 || M == 0) throw std::invalid_argument("build_skeletal_bank: needs at least one view and frame");
  const std::size_t L = vertices[0].size();
  for (const auto& v : vertices) {
    if (v.size() != L) throw std::invalid_argument("build_skeletal_bank: vertex count differs across frames");
  }
  const std::size_t map_size = static_cast<std::size_t>(fm_height) * fm_width;
  if (fmaps.rank() != 2 || fmaps.dim(0) != M * C * map_size) {
    throw DimensionError("build_skeletal_bank: feature maps " + shape_str(fmaps.shape()) + " do not hold " +
                         std::to_string(M * C) + " maps of " + std::to_string(map_size) + " sites");
  }
  SkeletalBank<T> bank;
  bank.vertices = L;
  bank.views = C;
  bank.frames = M;
  bank.valid.assign(L * C * M, 0);
  SparseRows<T> rows(fmaps.dim(0));
  rows.reserve(L * C * M, 4 * L * C * M);
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t m = 0; m < M; ++m) {
        const Projection pr = project_unchecked(cameras[c], vertices[m][i]);
        bool ok = false;
        if (pr.depth > kMinDepth) {
          ok = push_bilinear_row(rows, (m * C + c) * map_size, fm_height, fm_width, src_height, src_width, pr.pixel);
        } else {
          rows.end_row();
        }
        bank.valid[(i * C + c) * M + m] = ok;
      }
    }
  }
  bank.features = reshape(spmm(rows, fmaps), {L * C, M, fmaps.dim(1)});
  return bank;
}

template <typename T>
Tensor<T> temporal_fuse(const ParamSet<T>& params, const FieldConfig& cfg, const SkeletalBank<T>& bank,
                        Tensor<T>* attention) {
  const std::size_t LC = bank.vertices * bank.views, M = bank.frames;
  if (LC == 0 || M == 0) throw std::invalid_argument("temporal_fuse: empty bank");
  const std::size_t d = bank.features.dim(2);
  const Tensor<T> flat = reshape(bank.features, {LC * M, d});
  if (!cfg.enable_temporal) return spmm(group_mean<T>(LC, M, &bank.valid), flat);

  auto current = std::make_shared<SparseRows<T>>(LC * M);
  for (std::size_t r = 0; r < LC; ++r) {
    current->push(r * M, T(1));
    current->end_row();
  }
  const Tensor<T> s_t = spmm(std::shared_ptr<const SparseRows<T>>(current), flat);
  if (M == 1) return s_t;

  const std::size_t mem = M - 1;
  auto memory = std::make_shared<SparseRows<T>>(LC * M);
  std::vector<std::uint8_t> mask(LC * mem);
  for (std::size_t r = 0; r < LC; ++r) {
    for (std::size_t m = 1; m < M; ++m) {
      memory->push(r * M + m, T(1));
      memory->end_row();
      mask[r * mem + (m - 1)] = bank.valid[r * M + m];
    }
  }
  const Tensor<T> s_mem = spmm(std::shared_ptr<const SparseRows<T>>(memory), flat);
  const auto d0 = static_cast<std::size_t>(cfg.temporal_dim);
  const Tensor<T> q = reshape(apply(params, "temporal.q", s_t), {LC, 1, d0});
  const Tensor<T> k = reshape(apply(params, "temporal.k", s_mem), {LC, mem, d0});
  const Tensor<T> v = reshape(apply(params, "temporal.v", s_mem), {LC, mem, d});
  const Tensor<T> logits = scale(matmul(q, k, true), static_cast<T>(1.0 / std::sqrt(static_cast<double>(d0))));
  const Tensor<T> att = softmax_rows(logits, &mask);
  if (attention) *attention = att;
  return add(reshape(matmul(att, v), {LC, d}), s_t);
}

template <typename T>
PixelFeatures<T> sample_query_pixel_features(const Tensor<T>& fmaps, int fm_height, int fm_width,
                                             int src_height, int src_width, const std::vector<Camera>& cameras,
                                             std::span<const Vec3> points) {
  const std::size_t C = cameras.size(), N = points.size();
  const std::size_t map_size = static_cast<std::size_t>(fm_height) * fm_width;
  if (fmaps.rank() != 2 || fmaps.dim(0) < C * map_size) {
    throw DimensionError("sample_query_pixel_features: feature maps " + shape_str(fmaps.shape()) +
                         " hold fewer than " + std::to_string(C) + " maps");
  }
  PixelFeatures<T> out;
  out.valid.assign(N * C, 0);
  SparseRows<T> rows(fmaps.dim(0));
  rows.reserve(N * C, 4 * N * C);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const Projection pr = project_unchecked(cameras[c], points[n]);
      bool ok = false;
      if (pr.depth > kMinDepth) {
        ok = push_bilinear_row(rows, c * map_size, fm_height, fm_width, src_height, src_width, pr.pixel);
      } else {
        rows.end_row();
      }
      out.valid[n * C + c] = ok;
    }
  }
  out.features = spmm(rows, fmaps);
  return out;
}

template <typename T>
FusedFeatures<T> multiview_fuse(const ParamSet<T>& params, const FieldConfig& cfg, const Tensor<T>& s,
                                const Tensor<T>& p, const std::vector<std::uint8_t>& valid, std::size_t points,
                                std::size_t views) {
  if (views == 0) throw std::invalid_argument("multiview_fuse: no views");
  const std::size_t N = points, C = views;
  const auto d1 = static_cast<std::size_t>(cfg.fuse_dim);
  if (valid.size() != N * C) throw DimensionError("multiview_fuse: validity flags do not match N * C");
  FusedFeatures<T> out;
  Tensor<T> z;
  const bool use_s = cfg.enable_skeletal, use_p = cfg.enable_pixel_aligned;
  if (use_s && (!s.defined() || s.dim(0) != N * C)) throw DimensionError("multiview_fuse: skeletal rows != N * C");
  if (use_p && (!p.defined() || p.dim(0) != N * C)) throw DimensionError("multiview_fuse: pixel rows != N * C");
  if (use_s && use_p && cfg.enable_multiview) {
    const Tensor<T> ks = reshape(apply(params, cfg.separate_query ? "fuse.q" : "fuse.k", s), {N, C, d1});
    const Tensor<T> kp = reshape(apply(params, "fuse.k", p), {N, C, d1});
    const Tensor<T> vp = reshape(apply(params, "fuse.v", p), {N, C, d1});
    const Tensor<T> vs = reshape(apply(params, "fuse.v", s), {N, C, d1});
    std::vector<std::uint8_t> mask(N * C * C);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < C; ++i)
        for (std::size_t j = 0; j < C; ++j) mask[(n * C + i) * C + j] = valid[n * C + j];
    const Tensor<T> logits = scale(matmul(ks, kp, true), static_cast<T>(1.0 / std::sqrt(static_cast<double>(d1))));
    out.attention = softmax_rows(logits, &mask);
    z = add(matmul(out.attention, vp), vs);
  } else if (use_s && use_p) {
    const Tensor<T> vs = apply(params, "fuse.v", s);
    const Tensor<T> vp_mean = spmm(group_mean<T>(N, C, &valid), apply(params, "fuse.v", p));  // [N, d1]
    auto spread = std::make_shared<SparseRows<T>>(N);
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        spread->push(n, T(1));
        spread->end_row();
      }
    }
    z = reshape(add(vs, spmm(std::shared_ptr<const SparseRows<T>>(spread), vp_mean)), {N, C, d1});
  } else {
    z = reshape(apply(params, "fuse.v", use_s ? s : p), {N, C, d1});
  }
  out.z = z;
  const Tensor<T> flat = reshape(z, {N * C, d1});
  out.z_mean = spmm(group_mean<T>(N, C, nullptr), flat);
  out.z_color = spmm(group_mean<T>(N, C, &valid), flat);
  return out;
}

template <typename T>
Tensor<T> posenc_dir(std::span<const Vec3> dirs, int freqs) {
  if (freqs <= 0) throw std::invalid_argument("posenc_dir: frequency count must be positive");
  const std::size_t width = 6 * static_cast<std::size_t>(freqs);
  std::vector<T> data(dirs.size() * width);
  for (std::size_t n = 0; n < dirs.size(); ++n) {
    const double len = dirs[n].norm();
    if (std::abs(len - 1.0) > 1e-3) {
      throw std::invalid_argument("posenc_dir: direction with norm " + std::to_string(len) + " is not unit");
    }
    const Vec3 d = dirs[n] / len;
    T* row = data.data() + n * width;
    for (int k = 0; k < freqs; ++k) {
      const double f = std::ldexp(std::numbers::pi, k);
      for (int j = 0; j < 3; ++j) {
        row[6 * k + j] = static_cast<T>(std::sin(f * d[j]));
        row[6 * k + 3 + j] = static_cast<T>(std::cos(f * d[j]));
      }
    }
  }
  return Tensor<T>({dirs.size(), width}, std::move(data));
}

template <typename T>
FieldOutput<T> field_heads(const ParamSet<T>& params, const FieldConfig&, const FusedFeatures<T>& fused,
                           const Tensor<T>& dir_encoding) {
  const std::size_t N = fused.z_mean.dim(0);
  Tensor<T> h = relu(apply(params, "density.l0", fused.z_mean));
  h = relu(apply(params, "density.l1", h));
  h = relu(apply(params, "density.l2", h));
  FieldOutput<T> out;
  out.sigma = reshape(softplus(apply(params, "density.l3", h)), {N});
  const Tensor<T> c = relu(apply(params, "color.l0", concat<T>({fused.z_color, dir_encoding}, 1)));
  out.rgb = sigmoid(apply(params, "color.l1", c));
  return out;
}

template <typename T>
FrameState<T> prepare_frame(const ParamSet<T>& params, const FieldConfig& cfg, const FrameObservation& obs) {
  cfg.validate();
  const std::size_t C = obs.views();
  if (C == 0 || obs.frames() == 0) throw std::invalid_argument("prepare_frame: no input views or frames");
  if (obs.vertices.size() != obs.frames()) {
    throw std::invalid_argument("prepare_frame: need vertices for every frame");
  }
  FrameState<T> st;
  st.cameras = obs.cameras;
  st.pose = obs.pose;
  const Image* first = obs.images[0][0];
  st.src_height = first->height;
  st.src_width = first->width;
  st.fm_height = first->height / 2;
  st.fm_width = first->width / 2;
  // Pixel-aligned features only need time t; skeletal features use every frame.
  const std::size_t frames = cfg.enable_skeletal ? obs.frames() : 1;
  std::vector<const Image*> stack;
  for (std::size_t m = 0; m < frames; ++m) {
    if (obs.images[m].size() != C) throw std::invalid_argument("prepare_frame: image count differs from views");
    for (const Image* img : obs.images[m]) stack.push_back(img);
  }
  st.fmaps = encode_images(params, image_stack<T>(stack), static_cast<int>(stack.size()), st.src_height,
                           st.src_width);
  if (cfg.enable_skeletal) {
    const SkeletalBank<T> bank = build_skeletal_bank(st.fmaps, st.fm_height, st.fm_width, st.src_height,
                                                     st.src_width, obs.cameras, obs.vertices);
    const Tensor<T> s_prime = temporal_fuse(params, cfg, bank);
    std::vector<Vec3> local;
    local.reserve(obs.vertices[0].size());
    for (const auto& v : obs.vertices[0]) local.push_back(world_to_body(obs.pose, v));
    st.grid = diffuse_to_voxels(params, s_prime, local, C, cfg);
    st.has_grid = true;
  }
  return st;
}

template <typename T>
FieldOutput<T> query_field(const ParamSet<T>& params, const FieldConfig& cfg, const FrameState<T>& state,
                           std::span<const Vec3> points, std::span<const Vec3> dirs) {
  if (points.size() != dirs.size()) throw DimensionError("query_field: points and directions differ in count");
  const std::size_t N = points.size(), C = state.cameras.size();
  PixelFeatures<T> px = sample_query_pixel_features(state.fmaps, state.fm_height, state.fm_width, state.src_height,
                                                    state.src_width, state.cameras, points);
  Tensor<T> s;
  if (cfg.enable_skeletal) {
    std::vector<Vec3> local;
    local.reserve(N);
    for (const auto& x : points) local.push_back(world_to_body(state.pose, x));
    s = sample_skeletal(state.grid, local);
  }
  const Tensor<T> p = cfg.enable_pixel_aligned ? px.features : Tensor<T>();
  const FusedFeatures<T> fused = multiview_fuse(params, cfg, s, p, px.valid, N, C);
  return field_heads(params, cfg, fused, posenc_dir<T>(dirs, cfg.dir_freqs));
}

template <typename T>
PointSample evaluate_point(const ParamSet<T>& params, const FieldConfig& cfg, const FrameState<T>& state,
                           const Vec3& x, const Vec3& dir) {
  const FieldOutput<T> out = query_field(params, cfg, state, std::span<const Vec3>(&x, 1),
                                         std::span<const Vec3>(&dir, 1));
  PointSample ps;
  ps.sigma = out.sigma[0];
  ps.rgb = Vec3(out.rgb[0], out.rgb[1], out.rgb[2]);
  return ps;
}

#define NHP_INSTANTIATE_FIELD(T)                                                                             \
  template ParamSet<T> make_field_params<T>(const FieldConfig&, std::uint64_t);                            \
  template SkeletalBank<T> build_skeletal_bank(const Tensor<T>&, int, int, int, int, const std::vector<Camera>&, \
                                               const std::vector<std::vector<Vec3>>&);                      \
  template Tensor<T> temporal_fuse(const ParamSet<T>&, const FieldConfig&, const SkeletalBank<T>&, Tensor<T>*);         \
  template PixelFeatures<T> sample_query_pixel_features(const Tensor<T>&, int, int, int, int,               \
                                                        const std::vector<Camera>&, std::span<const Vec3>);  \
  template FusedFeatures<T> multiview_fuse(const ParamSet<T>&, const FieldConfig&, const Tensor<T>&,        \
                                           const Tensor<T>&, const std::vector<std::uint8_t>&, std::size_t, \
                                           std::size_t);                                                    \
  template Tensor<T> posenc_dir<T>(std::span<const Vec3>, int);                                             \
  template FieldOutput<T> field_heads(const ParamSet<T>&, const FieldConfig&, const FusedFeatures<T>&,      \
                                      const Tensor<T>&);                                                    \
  template FrameState<T> prepare_frame(const ParamSet<T>&, const FieldConfig&, const FrameObservation&);    \
  template FieldOutput<T> query_field(const ParamSet<T>&, const FieldConfig&, const FrameState<T>&,         \
                                      std::span<const Vec3>, std::span<const Vec3>);                         \
  template PointSample evaluate_point(const ParamSet<T>&, const FieldConfig&, const FrameState<T>&,          \
                                      const Vec3&, const Vec3&);

NHP_INSTANTIATE_FIELD(float)
NHP_INSTANTIATE_FIELD(double)

}  // namespace nhp
