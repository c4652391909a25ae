// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <CLI11.hpp>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <ostream>

#include "nhp/gradsuite.hpp"
#include "nhp/trainer.hpp"

namespace nhp {

namespace {

namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

RunConfig config_or_default(const std::string& path) { return path.empty() ? RunConfig{} : load_config(path); }

struct GenDataArgs {
  GenerateOptions opts;
  std::string out;
};

struct TrainArgs {
  std::string data, config, out, log, variant;
  int steps = -1, rays = 0, samples = 0, precision = 0, log_every = 50;
  std::int64_t seed = -1;
  bool no_skeletal = false, no_pixel = false, no_temporal = false, no_multiview = false;
};

struct RenderArgs {
  std::string checkpoint, data, out, alpha;
  int subject = 0, frame = 0, view = -1, samples = 0, threads = 0;
  double azimuth = std::nan(""), height = 0.3, radius = 3.0;
};

struct EvalArgs {
  std::string checkpoint, data, config, protocol = "pose", out;
  int frame_stride = 1, threads = 0;
  std::vector<int> views;
};

struct AblateArgs {
  std::string data, config, out, protocol = "identity";
  std::vector<std::string> variants;
  int steps = -1, frame_stride = 1, threads = 0;
  std::int64_t seed = -1;
  std::vector<int> views;
};

int run_gen_data(const GenDataArgs& a, std::ostream& out) {
  const CaptureSet set = generate_captures(a.opts);
  write_dataset(set, a.out);
  out << "wrote " << set.subjects.size() << " subjects x " << set.frames << " frames x " << set.views()
      << " views to " << a.out << "\n";
  return 0;
}

template <typename T>
void train_typed(const TrainConfig& cfg, const CaptureSet& data, const Split& split, const TrainArgs& a,
                 std::ostream& out) {
  Trainer<T> trainer(cfg, data, split);
  std::ofstream log;
  if (!a.log.empty()) {
    log.open(a.log);
    if (!log) throw std::runtime_error("cannot write " + a.log);
    log << "step,loss\n";
  }
  double window = 0.0;
  int count = 0;
  trainer.run(cfg.steps, [&](int i, double loss) {
    if (log.is_open()) log << i << ',' << std::setprecision(9) << loss << '\n';
    window += loss;
    ++count;
    if (a.log_every > 0 && ((i + 1) % a.log_every == 0 || i + 1 == cfg.steps)) {
      out << "step " << (i + 1) << "/" << cfg.steps << " loss " << std::setprecision(6) << window / count << "\n"
          << std::flush;
      window = 0.0;
      count = 0;
    }
  });
  save_checkpoint(a.out, trainer.params(), cfg);
}

int run_train(const TrainArgs& a, std::ostream& out) {
  RunConfig rc = config_or_default(a.config);
  TrainConfig& cfg = rc.train;
  if (a.steps >= 0) cfg.steps = a.steps;
  if (a.rays > 0) cfg.rays_per_step = a.rays;
  if (a.samples > 0) cfg.samples = a.samples;
  if (a.precision > 0) cfg.precision = a.precision;
  if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
  if (!a.variant.empty()) cfg.field = variant_config(cfg.field, a.variant);
  if (a.no_skeletal) cfg.field.enable_skeletal = false;
  if (a.no_pixel) cfg.field.enable_pixel_aligned = false;
  if (a.no_temporal) cfg.field.enable_temporal = false;
  if (a.no_multiview) cfg.field.enable_multiview = false;
  cfg.validate();
  const CaptureSet data = read_dataset(a.data);
  out << "training " << cfg.field.variant_name() << " for " << cfg.steps << " steps (" << cfg.rays_per_step
      << " rays x " << cfg.samples << " samples, " << cfg.precision << "-bit)\n";
  if (cfg.precision == 64) {
    train_typed<double>(cfg, data, rc.split, a, out);
  } else {
    train_typed<float>(cfg, data, rc.split, a, out);
  }
  out << "saved " << a.out << "\n";
  return 0;
}

template <typename T>
RenderResult render_typed(const ParamSet<T>& params, const TrainConfig& cfg, const CaptureSet& data,
                          const RenderArgs& a) {
  std::vector<int> pool = cfg.input_views;
  if (pool.empty())
    for (int v = 0; v < data.views(); ++v) pool.push_back(v);
  if (a.view >= 0) return render_view(params, cfg, data, a.subject, a.frame, a.view, a.threads);
  const int res = data.cameras.front().width;
  const double phi = a.azimuth * std::numbers::pi / 180.0;
  const Vec3 eye(a.radius * std::sin(phi), a.height, a.radius * std::cos(phi));
  const Camera cam = look_at(eye, Vec3(0.0, 0.1, 0.0), Vec3::UnitY(), 1.8 * res, res, res);
  return render_camera(params, cfg, data, a.subject, a.frame, cam, pool, a.threads);
}

int run_render(const RenderArgs& a, std::ostream& out) {
  if (a.view >= 0 && !std::isnan(a.azimuth)) throw UsageError("--view and --azimuth are mutually exclusive");
  if (a.view < 0 && std::isnan(a.azimuth)) throw UsageError("one of --view or --azimuth is required");
  Checkpoint ck = load_checkpoint(a.checkpoint);
  if (a.samples > 0) ck.config.samples = a.samples;
  const CaptureSet data = read_dataset(a.data);
  if (a.subject < 0 || a.subject >= static_cast<int>(data.subjects.size())) {
    throw std::out_of_range("no subject " + std::to_string(a.subject) + " in " + a.data);
  }
  if (a.frame < 0 || a.frame >= data.frames) throw std::out_of_range("no frame " + std::to_string(a.frame) + " in " + a.data);
  const RenderResult r = ck.config.precision == 64 ? render_typed(ck.params64, ck.config, data, a)
                                                   : render_typed(ck.params32, ck.config, data, a);
  write_png(a.out, r.image);
  if (!a.alpha.empty()) write_png(a.alpha, r.alpha);
  out << "rendered " << r.image.width << "x" << r.image.height << " (" << r.rays_evaluated << " rays) to " << a.out
      << "\n";
  if (a.view >= 0) {
    const Image& gt = data.subjects[static_cast<std::size_t>(a.subject)].images[static_cast<std::size_t>(a.view)]
                                   [static_cast<std::size_t>(a.frame)];
    out << "psnr " << std::fixed << std::setprecision(3) << psnr(r.image, gt) << " ssim " << std::setprecision(4)
        << ssim(r.image, gt) << "\n";
  }
  return 0;
}

int run_eval(const EvalArgs& a, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Split split = config_or_default(a.config).split;
  const Protocol protocol = parse_protocol(a.protocol);
  const CaptureSet data = read_dataset(a.data);
  EvalOptions opts;
  opts.frame_stride = a.frame_stride;
  opts.views = a.views;
  opts.threads = a.threads;
  const EvalReport rep = ck.config.precision == 64 ? evaluate(ck.params64, ck.config, data, split, protocol, opts)
                                                   : evaluate(ck.params32, ck.config, data, split, protocol, opts);
  if (!a.out.empty()) write_text(a.out, rep.csv());
  out << protocol_name(protocol) << ": " << rep.records.size() << " images, psnr " << std::fixed << std::setprecision(3)
      << rep.mean_psnr() << " ssim " << std::setprecision(4) << rep.mean_ssim() << " body psnr "
      << std::setprecision(3) << rep.mean_psnr_body() << "\n";
  return 0;
}

int run_gradcheck(std::uint64_t seed, std::ostream& out) {
  bool ok = true;
  run_gradient_suite(seed, [&](const GradSuiteEntry& e) {
    ok = ok && e.passed();
    out << (e.passed() ? "ok   " : "FAIL ") << std::left << std::setw(34) << e.name << std::right << " max rel "
        << std::scientific << std::setprecision(3) << e.max_rel_error << " tol " << std::setprecision(0)
        << e.tolerance << " (" << e.checked << " coords)" << std::defaultfloat << "\n"
        << std::flush;
    if (!e.passed()) out << "     worst: " << e.worst << "\n";
  });
  out << (ok ? "gradient suite passed\n" : "gradient suite FAILED\n");
  return ok ? 0 : 1;
}

int run_ablate(const AblateArgs& a, std::ostream& out) {
  RunConfig rc = config_or_default(a.config);
  if (a.steps >= 0) rc.train.steps = a.steps;
  if (a.seed >= 0) rc.train.seed = static_cast<std::uint64_t>(a.seed);
  const std::vector<std::string> variants = a.variants.empty() ? ablation_variants() : a.variants;
  const Protocol protocol = parse_protocol(a.protocol);
  const CaptureSet data = read_dataset(a.data);
  EvalOptions opts;
  opts.frame_stride = a.frame_stride;
  opts.views = a.views;
  opts.threads = a.threads;
  const auto rows = run_ablation(rc.train, data, rc.split, protocol, opts, variants, [&](const AblationRow& r) {
    out << std::left << std::setw(12) << r.variant << std::right << std::fixed << " psnr " << std::setprecision(3)
        << r.psnr << " ssim " << std::setprecision(4) << r.ssim << " (" << std::setprecision(0) << r.seconds
        << " s)" << std::defaultfloat << "\n"
        << std::flush;
  });
  write_text(a.out, ablation_csv(rows));
  out << "wrote " << a.out << "\n";
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Generalizable human radiance field: data generation, training, rendering and evaluation", "nhp"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic multi-view capture dataset");
  gen_cmd->add_option("--seed", gen.opts.seed, "Dataset seed")->capture_default_str();
  gen_cmd->add_option("--subjects", gen.opts.subjects, "Number of subjects")->capture_default_str()->check(CLI::PositiveNumber);
  gen_cmd->add_option("--frames", gen.opts.frames, "Frames per subject")->capture_default_str()->check(CLI::PositiveNumber);
  gen_cmd->add_option("--views", gen.opts.views, "Cameras on the ring")->capture_default_str()->check(CLI::PositiveNumber);
  gen_cmd->add_option("--resolution", gen.opts.resolution, "Image width and height (px)")->capture_default_str()->check(CLI::PositiveNumber);
  gen_cmd->add_option("--threads", gen.opts.threads, "Worker threads (0 = auto)")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
  train_cmd->add_option("--data", tr.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--config", tr.config, "INI configuration file")->check(CLI::ExistingFile);
  train_cmd->add_option("--out", tr.out, "Checkpoint path")->required();
  train_cmd->add_option("--steps", tr.steps, "Override train.steps");
  train_cmd->add_option("--rays", tr.rays, "Override train.rays_per_step");
  train_cmd->add_option("--samples", tr.samples, "Override train.samples");
  train_cmd->add_option("--precision", tr.precision, "Override train.precision (32 or 64)");
  train_cmd->add_option("--seed", tr.seed, "Override train.seed");
  train_cmd->add_option("--variant", tr.variant, "Ablation variant, e.g. Sk+Px+T");
  train_cmd->add_flag("--no-skeletal", tr.no_skeletal, "Disable skeletal features");
  train_cmd->add_flag("--no-pixel-aligned", tr.no_pixel, "Disable pixel-aligned features");
  train_cmd->add_flag("--no-temporal", tr.no_temporal, "Mean over memory frames instead of attention");
  train_cmd->add_flag("--no-multiview", tr.no_multiview, "Mean over views instead of attention");
  train_cmd->add_option("--log", tr.log, "Per-step loss CSV");
  train_cmd->add_option("--log-every", tr.log_every, "Progress line interval (0 = quiet)")->capture_default_str();

  RenderArgs rd;
  auto* render_cmd = app.add_subcommand("render", "Render one frame to PNG");
  render_cmd->add_option("--checkpoint", rd.checkpoint, "Checkpoint path")->required()->check(CLI::ExistingFile);
  render_cmd->add_option("--data", rd.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  render_cmd->add_option("--subject", rd.subject, "Subject index")->capture_default_str();
  render_cmd->add_option("--frame", rd.frame, "Frame index")->capture_default_str();
  render_cmd->add_option("--view", rd.view, "Dataset camera index");
  render_cmd->add_option("--azimuth", rd.azimuth, "Novel camera azimuth on the ring (degrees)");
  render_cmd->add_option("--height", rd.height, "Novel camera height (m)")->capture_default_str();
  render_cmd->add_option("--radius", rd.radius, "Novel camera ring radius (m)")->capture_default_str();
  render_cmd->add_option("--samples", rd.samples, "Samples per ray (default from checkpoint)");
  render_cmd->add_option("--threads", rd.threads, "Worker threads (0 = auto)")->capture_default_str();
  render_cmd->add_option("--out", rd.out, "Output PNG")->required();
  render_cmd->add_option("--alpha", rd.alpha, "Optional opacity PNG");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint under a protocol");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint path")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--protocol", ev.protocol, "seen, pose or identity")->capture_default_str()
      ->check(CLI::IsMember({"seen", "pose", "identity"}));
  eval_cmd->add_option("--config", ev.config, "INI file whose [split] section is used")->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", ev.out, "Per-image CSV");
  eval_cmd->add_option("--frame-stride", ev.frame_stride, "Evaluate every n-th frame")->capture_default_str();
  eval_cmd->add_option("--views", ev.views, "Query views (default all)")->delimiter(',');
  eval_cmd->add_option("--threads", ev.threads, "Worker threads (0 = auto)")->capture_default_str();

  std::uint64_t grad_seed = 0;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
  grad_cmd->add_option("--seed", grad_seed, "Seed for inputs and probes")->capture_default_str();

  AblateArgs ab;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train every ablation variant and compare");
  ablate_cmd->add_option("--data", ab.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ablate_cmd->add_option("--config", ab.config, "INI configuration file")->check(CLI::ExistingFile);
  ablate_cmd->add_option("--out", ab.out, "Comparison CSV")->required();
  ablate_cmd->add_option("--variants", ab.variants, "Variants (default: all six)")->delimiter(',');
  ablate_cmd->add_option("--steps", ab.steps, "Override train.steps");
  ablate_cmd->add_option("--seed", ab.seed, "Override train.seed");
  ablate_cmd->add_option("--protocol", ab.protocol, "seen, pose or identity")->capture_default_str()
      ->check(CLI::IsMember({"seen", "pose", "identity"}));
  ablate_cmd->add_option("--frame-stride", ab.frame_stride, "Evaluate every n-th frame")->capture_default_str();
  ablate_cmd->add_option("--views", ab.views, "Query views (default all)")->delimiter(',');
  ablate_cmd->add_option("--threads", ab.threads, "Worker threads (0 = auto)")->capture_default_str();

  auto usage = [&](const std::string& message) {
    CLI::App* sub = nullptr;
    for (CLI::App* s : app.get_subcommands()) sub = s;
    err << "error: " << message << "\n\n" << (sub ? sub->help() : app.help());
    return 2;
  };

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    return usage(e.what());
  }

  try {
    if (gen_cmd->parsed()) return run_gen_data(gen, out);
    if (train_cmd->parsed()) return run_train(tr, out);
    if (render_cmd->parsed()) return run_render(rd, out);
    if (eval_cmd->parsed()) return run_eval(ev, out);
    if (grad_cmd->parsed()) return run_gradcheck(grad_seed, out);
    if (ablate_cmd->parsed()) return run_ablate(ab, out);
  } catch (const UsageError& e) {
    return usage(e.what());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return usage("no subcommand");
}

}  // namespace nhp
