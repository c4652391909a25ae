// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "nhp/trainer.hpp"

namespace nhp {

namespace {

template <typename T>
bool needs_detach(const ParamSet<T>& params) {
  for (const auto& name : params.names())
    if (params.at(name).requires_grad()) return true;
  return false;
}

double mean_of(const std::vector<EvalRecord>& r, double EvalRecord::*field) {
  if (r.empty()) return 0.0;
  double s = 0.0;
  for (const auto& e : r) s += e.*field;
  return s / static_cast<double>(r.size());
}

// Bounding rectangle of the mask grown by `pad` pixels; whole image if empty.
std::array<int, 4> mask_rect(const Mask& m, int pad) {
  int x0 = m.width, y0 = m.height, x1 = -1, y1 = -1;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(x, y) >= 0.5f) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  if (x1 < 0) return {0, 0, m.width, m.height};
  return {std::max(0, x0 - pad), std::max(0, y0 - pad), std::min(m.width, x1 + pad + 1), std::min(m.height, y1 + pad + 1)};
}

}  // namespace

Protocol parse_protocol(const std::string& name) {
  if (name == "seen") return Protocol::kSeen;
  if (name == "pose") return Protocol::kPose;
  if (name == "identity") return Protocol::kIdentity;
  throw ConfigError("unknown protocol '" + name + "' (expected seen, pose or identity)");
}

std::string protocol_name(Protocol p) {
  switch (p) {
    case Protocol::kSeen:
      return "seen";
    case Protocol::kPose:
      return "pose";
    case Protocol::kIdentity:
      return "identity";
  }
  return "?";
}

double EvalReport::mean_psnr() const { return mean_of(records, &EvalRecord::psnr); }
double EvalReport::mean_ssim() const { return mean_of(records, &EvalRecord::ssim); }
double EvalReport::mean_psnr_body() const { return mean_of(records, &EvalRecord::psnr_body); }

std::string EvalReport::csv() const {
  std::ostringstream os;
  os << "subject,frame,view,psnr,ssim\n" << std::fixed << std::setprecision(4);
  for (const auto& r : records) os << r.subject << ',' << r.frame << ',' << r.view << ',' << r.psnr << ',' << r.ssim << '\n';
  return os.str();
}

EvalSet protocol_set(const Split& split, Protocol protocol, int frame_stride) {
  if (frame_stride < 1) throw ConfigError("evaluate: frame stride must be >= 1");
  auto frames = [&](int b, int e) {
    std::vector<int> f;
    for (int t = b; t < e; t += frame_stride) f.push_back(t);
    return f;
  };
  const bool frames_overlap =
      split.train_frame_begin < split.test_frame_end && split.test_frame_begin < split.train_frame_end;
  EvalSet set;
  switch (protocol) {
    case Protocol::kSeen:
      set.subjects = split.train_subjects;
      set.frames = frames(split.train_frame_begin, split.train_frame_end);
      break;
    case Protocol::kPose:
      if (frames_overlap) throw ConfigError("pose protocol: train and test frame ranges overlap");
      set.subjects = split.train_subjects;
      set.frames = frames(split.test_frame_begin, split.test_frame_end);
      break;
    case Protocol::kIdentity: {
      const std::set<int> train(split.train_subjects.begin(), split.train_subjects.end());
      for (int s : split.test_subjects)
        if (train.count(s)) throw ConfigError("identity protocol: subject " + std::to_string(s) + " is in both sets");
      set.subjects = split.test_subjects;
      set.frames = frames(split.test_frame_begin, split.test_frame_end);
      break;
    }
  }
  if (set.subjects.empty() || set.frames.empty()) throw ConfigError(protocol_name(protocol) + " protocol: empty evaluation set");
  return set;
}

template <typename T>
RenderResult render_camera(const ParamSet<T>& params, const TrainConfig& cfg, const CaptureSet& data, int subject,
                           int t, const Camera& camera, const std::vector<int>& input_views, int threads) {
  const FrameObservation obs = make_observation(data, subject, t, input_views, cfg.memory_offset);
  RenderOptions ro;
  ro.samples = cfg.samples;
  ro.threads = threads;
  const Aabb box = body_bbox(data.subjects[static_cast<std::size_t>(subject)].frames[static_cast<std::size_t>(t)].vertices);
  if (needs_detach(params)) {
    const ParamSet<T> frozen = params.detached();
    return render_image(frozen, cfg.field, prepare_frame(frozen, cfg.field, obs), box, camera, ro);
  }
  return render_image(params, cfg.field, prepare_frame(params, cfg.field, obs), box, camera, ro);
}

template <typename T>
RenderResult render_view(const ParamSet<T>& params, const TrainConfig& cfg, const CaptureSet& data, int subject,
                         int t, int query_view, int threads) {
  if (query_view < 0 || query_view >= data.views()) {
    throw std::out_of_range("render_view: no camera " + std::to_string(query_view));
  }
  std::vector<int> pool = cfg.input_views;
  if (pool.empty())
    for (int v = 0; v < data.views(); ++v) pool.push_back(v);
  return render_camera(params, cfg, data, subject, t, data.cameras[static_cast<std::size_t>(query_view)],
                       input_views_for(pool, query_view), threads);
}

template <typename T>
EvalReport evaluate(const ParamSet<T>& params, const TrainConfig& cfg, const CaptureSet& data, const Split& split,
                    Protocol protocol, const EvalOptions& opts) {
  const EvalSet set = protocol_set(split, protocol, opts.frame_stride);
  std::vector<int> views = opts.views;
  if (views.empty())
    for (int v = 0; v < data.views(); ++v) views.push_back(v);
  const ParamSet<T> frozen = needs_detach(params) ? params.detached() : params;
  EvalReport report;
  for (int s : set.subjects) {
    if (s < 0 || s >= static_cast<int>(data.subjects.size())) {
      throw ConfigError("evaluate: subject " + std::to_string(s) + " not in the dataset");
    }
    const SubjectCapture& sc = data.subjects[static_cast<std::size_t>(s)];
    for (int t : set.frames) {
      if (t >= data.frames) throw ConfigError("evaluate: frame " + std::to_string(t) + " not in the dataset");
      for (int q : views) {
        const RenderResult r = render_view(frozen, cfg, data, s, t, q, opts.threads);
        const Image& gt = sc.images[static_cast<std::size_t>(q)][static_cast<std::size_t>(t)];
        const auto rect = mask_rect(sc.masks[static_cast<std::size_t>(q)][static_cast<std::size_t>(t)], 2);
        EvalRecord rec;
        rec.subject = sc.name;
        rec.frame = t;
        rec.view = q;
        rec.psnr = psnr(r.image, gt);
        rec.ssim = ssim(r.image, gt);
        rec.psnr_body = psnr_region(r.image, gt, rect[0], rect[1], rect[2], rect[3]);
        report.records.push_back(rec);
      }
    }
  }
  return report;
}

Image constant_mean_color(const Image& gt) {
  double mean[3] = {0, 0, 0};
  for (std::size_t i = 0; i < gt.pixels(); ++i)
    for (int c = 0; c < 3; ++c) mean[c] += gt.rgb[i * 3 + static_cast<std::size_t>(c)];
  Image out(gt.width, gt.height);
  const double n = static_cast<double>(std::max<std::size_t>(1, gt.pixels()));
  for (std::size_t i = 0; i < gt.pixels(); ++i)
    for (int c = 0; c < 3; ++c) out.rgb[i * 3 + static_cast<std::size_t>(c)] = static_cast<float>(mean[c] / n);
  return out;
}

Image constant_gray(const Image& gt) {
  const double sum = std::accumulate(gt.rgb.begin(), gt.rgb.end(), 0.0);
  Image out(gt.width, gt.height);
  std::fill(out.rgb.begin(), out.rgb.end(), static_cast<float>(sum / static_cast<double>(std::max<std::size_t>(1, gt.rgb.size()))));
  return out;
}

template RenderResult render_camera(const ParamSet<float>&, const TrainConfig&, const CaptureSet&, int, int,
                                    const Camera&, const std::vector<int>&, int);
template RenderResult render_camera(const ParamSet<double>&, const TrainConfig&, const CaptureSet&, int, int,
                                    const Camera&, const std::vector<int>&, int);
template RenderResult render_view(const ParamSet<float>&, const TrainConfig&, const CaptureSet&, int, int, int, int);
template RenderResult render_view(const ParamSet<double>&, const TrainConfig&, const CaptureSet&, int, int, int, int);
template EvalReport evaluate(const ParamSet<float>&, const TrainConfig&, const CaptureSet&, const Split&, Protocol,
                             const EvalOptions&);
template EvalReport evaluate(const ParamSet<double>&, const TrainConfig&, const CaptureSet&, const Split&, Protocol,
                             const EvalOptions&);

}  // namespace nhp
