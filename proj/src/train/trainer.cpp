// SPDX-License-Identifier: Apache-2.0
#include "nhp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace nhp {

namespace {

std::size_t pick(std::mt19937_64& rng, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)));
}

std::vector<int> all_views(int count) {
  std::vector<int> v(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) v[static_cast<std::size_t>(i)] = i;
  return v;
}

template <typename T>
Tensor<T> leaf_copy(const Tensor<T>& t) {
  return Tensor<T>(t.shape(), std::vector<T>(t.data().begin(), t.data().end()), true);
}

}  // namespace

void TrainConfig::validate() const {
  if (rays_per_step < 1 || samples < 1 || steps < 0 || chunk_rays < 1) {
    throw ConfigError("train: rays_per_step, samples and chunk_rays must be >= 1, steps >= 0");
  }
  if (memory_offset < 0) throw ConfigError("train: memory_offset must be >= 0");
  if (precision != 32 && precision != 64) throw ConfigError("train: precision must be 32 or 64");
  if (!(learning_rate > 0)) throw ConfigError("train: learning_rate must be positive");
  if (!(foreground_fraction >= 0 && foreground_fraction <= 1)) {
    throw ConfigError("train: foreground_fraction must lie in [0, 1]");
  }
  if (mask_dilation < 0) throw ConfigError("train: mask_dilation must be >= 0");
  try {
    field.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::vector<int> memory_frames(int t, int offset, int frames) {
  if (t < 0 || t >= frames) {
    throw std::out_of_range("memory_frames: frame " + std::to_string(t) + " outside [0, " + std::to_string(frames) + ")");
  }
  if (offset == 0) return {};
  return {std::clamp(t - offset, 0, frames - 1), std::clamp(t + offset, 0, frames - 1)};
}

std::vector<int> input_views_for(const std::vector<int>& pool, int query_view) {
  std::vector<int> out;
  for (int v : pool)
    if (v != query_view) out.push_back(v);
  return out;
}

FrameObservation make_observation(const CaptureSet& set, int subject, int t, const std::vector<int>& views,
                                  int memory_offset) {
  if (subject < 0 || subject >= static_cast<int>(set.subjects.size())) {
    throw std::out_of_range("make_observation: no subject " + std::to_string(subject));
  }
  if (views.empty()) throw std::invalid_argument("make_observation: no input views");
  const SubjectCapture& s = set.subjects[static_cast<std::size_t>(subject)];
  const int frames = static_cast<int>(s.frames.size());
  std::vector<int> times{t};
  for (int m : memory_frames(t, memory_offset, frames)) times.push_back(m);
  FrameObservation obs;
  for (int v : views) {
    if (v < 0 || v >= set.views()) throw std::out_of_range("make_observation: no camera " + std::to_string(v));
    obs.cameras.push_back(set.cameras[static_cast<std::size_t>(v)]);
  }
  for (int tm : times) {
    std::vector<const Image*> row;
    for (int v : views) row.push_back(&s.images[static_cast<std::size_t>(v)][static_cast<std::size_t>(tm)]);
    obs.images.push_back(std::move(row));
    obs.vertices.push_back(s.frames[static_cast<std::size_t>(tm)].vertices);
  }
  obs.pose = s.frames[static_cast<std::size_t>(t)].pose;
  return obs;
}

Mask dilate_mask(const Mask& mask, int radius) {
  Mask out(mask.width, mask.height);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(x, y) < 0.5f) continue;
      for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if (nx >= 0 && ny >= 0 && nx < mask.width && ny < mask.height) out.at(nx, ny) = 1.0f;
        }
      }
    }
  }
  return out;
}

RayBatch sample_training_rays(const SubjectCapture& subject, const Camera& camera, int t, int query_view, int n,
                              double foreground_fraction, int dilation, std::mt19937_64& rng) {
  if (n < 1) throw std::invalid_argument("sample_training_rays: need at least one ray");
  const auto v = static_cast<std::size_t>(query_view);
  const auto ti = static_cast<std::size_t>(t);
  if (v >= subject.images.size() || ti >= subject.images[v].size()) {
    throw std::out_of_range("sample_training_rays: no image for view " + std::to_string(query_view) + " frame " +
                            std::to_string(t));
  }
  const Image& img = subject.images[v][ti];
  const Mask region = dilate_mask(subject.masks[v][ti], dilation);
  std::vector<Vec2> fg, bg;
  for (int y = 0; y < region.height; ++y)
    for (int x = 0; x < region.width; ++x) (region.at(x, y) >= 0.5f ? fg : bg).emplace_back(x, y);

  RayBatch batch;
  batch.mask_empty = fg.empty();
  auto n_fg = static_cast<int>(std::lround(foreground_fraction * n));
  if (fg.empty()) n_fg = 0;
  if (bg.empty()) n_fg = n;
  const Aabb box = body_bbox(subject.frames[ti].vertices);
  for (int i = 0; i < n; ++i) {
    const auto& pool = i < n_fg ? fg : bg;
    const Vec2 px = pool[pick(rng, pool.size())];
    Ray ray = generate_ray(camera, px);
    const auto bounds = ray_box_bounds(ray, box);
    const bool hit = bounds && bounds->first < bounds->second;
    if (hit) {
      ray.z_near = bounds->first;
      ray.z_far = bounds->second;
    }
    const int x = static_cast<int>(px.x()), y = static_cast<int>(px.y());
    batch.rays.push_back(ray);
    batch.hits_box.push_back(hit ? 1 : 0);
    batch.targets.emplace_back(img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2));
    batch.pixels.push_back(px);
  }
  return batch;
}

template <typename T>
void Adam<T>::step(ParamSet<T>& params) {
  const auto& names = params.names();
  if (m_.empty()) {
    for (const auto& name : names) {
      m_.emplace_back(params.at(name).size(), T(0));
      v_.emplace_back(params.at(name).size(), T(0));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < names.size(); ++k) {
    Tensor<T>& p = params.at(names[k]);
    const auto g = p.grad();
    if (g.empty()) continue;
    auto data = p.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double gi = g[i];
      m[i] = static_cast<T>(b1_ * m[i] + (1.0 - b1_) * gi);
      v[i] = static_cast<T>(b2_ * v[i] + (1.0 - b2_) * gi * gi);
      const double mh = m[i] / c1, vh = v[i] / c2;
      data[i] = static_cast<T>(data[i] - lr_ * mh / (std::sqrt(vh) + eps_));
    }
  }
}

template <typename T>
double accumulate_batch_loss(const ParamSet<T>& params, const FieldConfig& cfg, const FrameObservation& obs,
                             const RayBatch& batch, int samples, int chunk_rays, std::mt19937_64& rng) {
  if (batch.rays.empty()) throw std::invalid_argument("accumulate_batch_loss: empty batch");
  const FrameState<T> st = prepare_frame(params, cfg, obs);
  // The field reads the frame state through detached leaves; their gradients
  // are pushed through the frame graph once after all chunks.
  FrameState<T> view = st;
  const bool track = st.fmaps.requires_grad();
  if (track) {
    view.fmaps = leaf_copy(st.fmaps);
    if (st.has_grid) view.grid.features = leaf_copy(st.grid.features);
  }
  const double count = 3.0 * static_cast<double>(batch.rays.size());
  double total = 0.0;
  std::vector<std::size_t> hits;
  for (std::size_t r = 0; r < batch.rays.size(); ++r) {
    if (batch.hits_box[r]) {
      hits.push_back(r);
    } else {
      total += batch.targets[r].squaredNorm();  // unrendered rays are black
    }
  }
  const auto n = static_cast<std::size_t>(samples);
  const auto chunk = static_cast<std::size_t>(std::max(1, chunk_rays));
  for (std::size_t c0 = 0; c0 < hits.size(); c0 += chunk) {
    const std::size_t B = std::min(chunk, hits.size() - c0);
    std::vector<Vec3> points, dirs;
    std::vector<T> deltas, target;
    points.reserve(B * n);
    dirs.reserve(B * n);
    deltas.reserve(B * n);
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t r = hits[c0 + b];
      const Ray& ray = batch.rays[r];
      const RaySamples s = sample_points(ray, samples, SampleMode::kTrain, &rng);
      for (std::size_t i = 0; i < n; ++i) {
        points.push_back(ray.at(s.depths[i]));
        dirs.push_back(ray.dir);
        deltas.push_back(static_cast<T>(s.deltas[i]));
      }
      for (int c = 0; c < 3; ++c) target.push_back(static_cast<T>(batch.targets[r][c]));
    }
    const FieldOutput<T> out = query_field(params, cfg, view, points, dirs);
    const CompositeBatch<T> comp = composite_batch(reshape(out.sigma, {B, n}), reshape(out.rgb, {B, n, 3}), deltas);
    const Tensor<T> loss =
        scale(sum(square(sub(comp.rgb, Tensor<T>({B, 3}, std::move(target))))), static_cast<T>(1.0 / count));
    const double value = static_cast<double>(loss.item());
    if (!std::isfinite(value)) {
      std::ostringstream os;
      os << "non-finite loss in training batch";
      for (std::size_t b = 0; b < B; ++b) {
        bool bad = false;
        for (int c = 0; c < 3; ++c) bad = bad || !std::isfinite(static_cast<double>(comp.rgb[b * 3 + static_cast<std::size_t>(c)]));
        if (!bad) continue;
        const std::size_t r = hits[c0 + b];
        const Ray& ray = batch.rays[r];
        os << "; ray " << r << " pixel (" << batch.pixels[r].x() << ", " << batch.pixels[r].y() << ") origin ("
           << ray.origin.transpose() << ") dir (" << ray.dir.transpose() << ") near " << ray.z_near << " far "
           << ray.z_far;
        break;
      }
      throw TrainingError(os.str());
    }
    total += value * count;
    if (loss.requires_grad()) backward(loss);
  }
  if (track && view.fmaps.has_grad()) {
    std::vector<Tensor<T>> terms;
    terms.push_back(sum(mul(st.fmaps, Tensor<T>(st.fmaps.shape(), std::vector<T>(view.fmaps.grad().begin(), view.fmaps.grad().end())))));
    if (st.has_grid && view.grid.features.has_grad()) {
      const auto& g = view.grid.features.grad();
      terms.push_back(sum(mul(st.grid.features, Tensor<T>(st.grid.features.shape(), std::vector<T>(g.begin(), g.end())))));
    }
    Tensor<T> surrogate = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) surrogate = add(surrogate, terms[i]);
    backward(surrogate);
  }
  return total / count;
}

template <typename T>
Trainer<T>::Trainer(TrainConfig cfg, const CaptureSet& data, Split split)
    : cfg_(std::move(cfg)),
      data_(data),
      split_(std::move(split)),
      adam_(cfg_.learning_rate, cfg_.beta1, cfg_.beta2, cfg_.epsilon),
      rng_(splitmix64(cfg_.seed ^ 0x7261795f73616d70ull)) {
  cfg_.validate();
  if (cfg_.precision != static_cast<int>(8 * sizeof(T))) {
    throw ConfigError("trainer: precision " + std::to_string(cfg_.precision) + " does not match the trainer type");
  }
  if (split_.train_subjects.empty()) throw ConfigError("trainer: no training subjects");
  for (int s : split_.train_subjects) {
    if (s < 0 || s >= static_cast<int>(data_.subjects.size())) {
      throw ConfigError("trainer: training subject " + std::to_string(s) + " not in the dataset");
    }
  }
  if (split_.train_frame_begin < 0 || split_.train_frame_end > data_.frames ||
      split_.train_frame_begin >= split_.train_frame_end) {
    throw ConfigError("trainer: training frame range outside the dataset");
  }
  pool_ = cfg_.input_views.empty() ? all_views(data_.views()) : cfg_.input_views;
  queries_ = cfg_.query_views.empty() ? pool_ : cfg_.query_views;
  for (int v : pool_)
    if (v < 0 || v >= data_.views()) throw ConfigError("trainer: input view " + std::to_string(v) + " out of range");
  for (int q : queries_) {
    if (q < 0 || q >= data_.views()) throw ConfigError("trainer: query view " + std::to_string(q) + " out of range");
    if (input_views_for(pool_, q).empty()) throw ConfigError("trainer: query view " + std::to_string(q) + " leaves no input view");
  }
  params_ = make_field_params<T>(cfg_.field, cfg_.seed);
}

template <typename T>
double Trainer<T>::step() {
  const int subject = split_.train_subjects[pick(rng_, split_.train_subjects.size())];
  const int t = split_.train_frame_begin +
                static_cast<int>(pick(rng_, static_cast<std::size_t>(split_.train_frame_end - split_.train_frame_begin)));
  const int q = queries_[pick(rng_, queries_.size())];
  const FrameObservation obs = make_observation(data_, subject, t, input_views_for(pool_, q), cfg_.memory_offset);
  const RayBatch batch =
      sample_training_rays(data_.subjects[static_cast<std::size_t>(subject)], data_.cameras[static_cast<std::size_t>(q)], t,
                           q, cfg_.rays_per_step, cfg_.foreground_fraction, cfg_.mask_dilation, rng_);
  params_.zero_grad();
  const double loss = accumulate_batch_loss(params_, cfg_.field, obs, batch, cfg_.samples, cfg_.chunk_rays, rng_);
  adam_.step(params_);
  return loss;
}

template <typename T>
void Trainer<T>::run(int steps, const std::function<void(int, double)>& on_step) {
  for (int i = 0; i < steps; ++i) {
    const double loss = step();
    if (on_step) on_step(i, loss);
  }
}

template class Adam<float>;
template class Adam<double>;
template class Trainer<float>;
template class Trainer<double>;
template double accumulate_batch_loss(const ParamSet<float>&, const FieldConfig&, const FrameObservation&,
                                      const RayBatch&, int, int, std::mt19937_64&);
template double accumulate_batch_loss(const ParamSet<double>&, const FieldConfig&, const FrameObservation&,
                                      const RayBatch&, int, int, std::mt19937_64&);

}  // namespace nhp
