// SPDX-License-Identifier: Apache-2.0
//
// Photometric training, evaluation protocols and checkpoints.
#pragma once

#include <filesystem>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "nhp/field.hpp"
#include "nhp/render.hpp"
#include "nhp/synth.hpp"

namespace nhp {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int rays_per_step = 1024;
  int samples = 64;
  int memory_offset = 5;    // memory frames at t - offset and t + offset; 0 disables them
  int steps = 2000;
  double learning_rate = 5e-4;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  std::uint64_t seed = 0;
  int precision = 32;       // 32 or 64
  double foreground_fraction = 0.8;
  int mask_dilation = 2;    // px
  int chunk_rays = 8;       // rays per tape segment inside one step
  std::vector<int> input_views;  // camera pool for inputs; empty = all cameras
  std::vector<int> query_views;  // views supervised during training; empty = input pool
  FieldConfig field;

  void validate() const;
};

struct Split {
  std::vector<int> train_subjects{0, 1, 2, 3, 4, 5};
  std::vector<int> test_subjects{6, 7};
  int train_frame_begin = 0, train_frame_end = 20;  // [begin, end)
  int test_frame_begin = 20, test_frame_end = 30;
};

// Memory frames t - offset and t + offset, clamped to [0, frames).
std::vector<int> memory_frames(int t, int offset, int frames);

// Input views for a query: the pool without the query view.
std::vector<int> input_views_for(const std::vector<int>& pool, int query_view);

// Gathers the observation for time t seen from `views`.
FrameObservation make_observation(const CaptureSet& set, int subject, int t, const std::vector<int>& views,
                                  int memory_offset);

struct RayBatch {
  std::vector<Ray> rays;         // z_near/z_far set when hits_box
  std::vector<std::uint8_t> hits_box;
  std::vector<Vec3> targets;
  std::vector<Vec2> pixels;
  bool mask_empty = false;       // every ray drawn from the background
};

// Dilates a binary mask by `radius` pixels (square structuring element).
Mask dilate_mask(const Mask& mask, int radius);

// n pixels: round(fraction * n) from the dilated mask, the rest from its
// complement, both with replacement.
RayBatch sample_training_rays(const SubjectCapture& subject, const Camera& camera, int t, int query_view, int n,
                              double foreground_fraction, int dilation, std::mt19937_64& rng);

template <typename T>
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}
  void step(ParamSet<T>& params);
  long steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

// MSE of one ray batch for a prepared frame. Gradients accumulate into the
// parameters (not cleared, no update). The per-frame state is processed
// once; rays run through the field in chunks of `chunk_rays`.
template <typename T>
double accumulate_batch_loss(const ParamSet<T>& params, const FieldConfig& cfg, const FrameObservation& obs,
                             const RayBatch& batch, int samples, int chunk_rays, std::mt19937_64& rng);

template <typename T>
class Trainer {
 public:
  Trainer(TrainConfig cfg, const CaptureSet& data, Split split);

  // One optimisation step on a random (subject, frame, query view).
  double step();
  // Runs `steps` steps; the callback sees (step index, loss).
  void run(int steps, const std::function<void(int, double)>& on_step = {});

  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  const TrainConfig& config() const { return cfg_; }
  long steps_done() const { return adam_.steps(); }

 private:
  TrainConfig cfg_;
  const CaptureSet& data_;
  Split split_;
  ParamSet<T> params_;
  Adam<T> adam_;
  std::mt19937_64 rng_;
  std::vector<int> pool_, queries_;
};

enum class Protocol { kSeen, kPose, kIdentity };
Protocol parse_protocol(const std::string& name);
std::string protocol_name(Protocol p);

struct EvalRecord {
  std::string subject;
  int frame = 0, view = 0;
  double psnr = 0, ssim = 0, psnr_body = 0;
};

struct EvalReport {
  std::vector<EvalRecord> records;
  double mean_psnr() const;
  double mean_ssim() const;
  double mean_psnr_body() const;
  // CSV: subject,frame,view,psnr,ssim
  std::string csv() const;
};

struct EvalOptions {
  int frame_stride = 1;
  std::vector<int> views;  // query views; empty = every camera
  int threads = 0;
};

// Subjects and frames a protocol covers. Throws ConfigError when the split
// violates the protocol's disjointness requirement.
struct EvalSet {
  std::vector<int> subjects;
  std::vector<int> frames;
};
EvalSet protocol_set(const Split& split, Protocol protocol, int frame_stride = 1);

// Renders an eval-mode image of (subject, t) from camera `query_view` using
// the input pool minus that view.
template <typename T>
RenderResult render_view(const ParamSet<T>& params, const TrainConfig& cfg, const CaptureSet& data, int subject,
                         int t, int query_view, int threads = 0);

// Renders (subject, t) from an arbitrary camera using the given input views.
template <typename T>
RenderResult render_camera(const ParamSet<T>& params, const TrainConfig& cfg, const CaptureSet& data, int subject,
                           int t, const Camera& camera, const std::vector<int>& input_views, int threads = 0);

template <typename T>
EvalReport evaluate(const ParamSet<T>& params, const TrainConfig& cfg, const CaptureSet& data, const Split& split,
                    Protocol protocol, const EvalOptions& opts = {});

// Reference images that ignore the model.
Image constant_mean_color(const Image& gt);
Image constant_gray(const Image& gt);

// NHPT tensors plus the configuration as "__config__.<key>" scalars.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamSet<T>& params, const TrainConfig& cfg);

struct Checkpoint {
  TrainConfig config;
  ParamSet<float> params32;
  ParamSet<double> params64;
};

// Rebuilds the configuration stored in the file and loads every tensor.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Loads into the architecture of `cfg`. Throws CheckpointError naming the
// missing and extra parameters when the file does not match.
template <typename T>
ParamSet<T> load_checkpoint_into(const std::filesystem::path& path, const FieldConfig& cfg);

// Ablation grid over the feature and attention switches: Sk, Px, Sk+Px,
// Sk+Px+T, Sk+Px+MV, Sk+Px+T+MV.
std::vector<std::string> ablation_variants();
// `base` with the switches of a variant name such as "Sk+Px+T".
FieldConfig variant_config(const FieldConfig& base, const std::string& name);

struct AblationRow {
  std::string variant;
  double psnr = 0, ssim = 0, psnr_body = 0;
  double final_loss = 0;  // mean over the last 50 steps
  double seconds = 0;
};

// Trains each variant from the same seed on the same data, then evaluates
// the protocol. Dispatches on cfg.precision.
std::vector<AblationRow> run_ablation(const TrainConfig& base, const CaptureSet& data, const Split& split,
                                      Protocol protocol, const EvalOptions& eval,
                                      const std::vector<std::string>& variants,
                                      const std::function<void(const AblationRow&)>& on_row = {});
std::string ablation_csv(const std::vector<AblationRow>& rows);

// INI file with [train], [field], [split] sections (docs/config.md).
struct RunConfig {
  TrainConfig train;
  Split split;
};
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace nhp
