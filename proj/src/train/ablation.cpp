// SPDX-License-Identifier: Apache-2.0
#include <chrono>
#include <iomanip>
#include <sstream>

#include "nhp/trainer.hpp"

namespace nhp {

namespace {

template <typename T>
AblationRow train_and_evaluate(const TrainConfig& cfg, const CaptureSet& data, const Split& split, Protocol protocol,
                               const EvalOptions& eval) {
  const auto start = std::chrono::steady_clock::now();
  Trainer<T> trainer(cfg, data, split);
  std::vector<double> losses;
  trainer.run(cfg.steps, [&](int, double l) { losses.push_back(l); });
  const EvalReport report = evaluate(trainer.params(), cfg, data, split, protocol, eval);
  AblationRow row;
  row.variant = cfg.field.variant_name();
  row.psnr = report.mean_psnr();
  row.ssim = report.mean_ssim();
  row.psnr_body = report.mean_psnr_body();
  const std::size_t tail = std::min<std::size_t>(50, losses.size());
  for (std::size_t i = losses.size() - tail; i < losses.size(); ++i) row.final_loss += losses[i] / static_cast<double>(tail);
  row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return row;
}

}  // namespace

std::vector<std::string> ablation_variants() { return {"Sk", "Px", "Sk+Px", "Sk+Px+T", "Sk+Px+MV", "Sk+Px+T+MV"}; }

FieldConfig variant_config(const FieldConfig& base, const std::string& name) {
  FieldConfig f = base;
  f.enable_skeletal = f.enable_pixel_aligned = f.enable_temporal = f.enable_multiview = false;
  std::istringstream in(name);
  std::string part;
  while (std::getline(in, part, '+')) {
    if (part == "Sk") {
      f.enable_skeletal = true;
    } else if (part == "Px") {
      f.enable_pixel_aligned = true;
    } else if (part == "T") {
      f.enable_temporal = true;
    } else if (part == "MV") {
      f.enable_multiview = true;
    } else {
      throw ConfigError("unknown variant component '" + part + "' in '" + name + "' (expected Sk, Px, T, MV)");
    }
  }
  try {
    f.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("variant " + name + ": " + e.what());
  }
  return f;
}

std::vector<AblationRow> run_ablation(const TrainConfig& base, const CaptureSet& data, const Split& split,
                                      Protocol protocol, const EvalOptions& eval,
                                      const std::vector<std::string>& variants,
                                      const std::function<void(const AblationRow&)>& on_row) {
  std::vector<TrainConfig> configs;
  for (const auto& v : variants) {
    TrainConfig cfg = base;
    cfg.field = variant_config(base.field, v);
    cfg.validate();
    configs.push_back(cfg);
  }
  protocol_set(split, protocol, eval.frame_stride);
  std::vector<AblationRow> rows;
  for (const auto& cfg : configs) {
    rows.push_back(cfg.precision == 64 ? train_and_evaluate<double>(cfg, data, split, protocol, eval)
                                       : train_and_evaluate<float>(cfg, data, split, protocol, eval));
    if (on_row) on_row(rows.back());
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "variant,psnr,ssim,psnr_body,final_loss,seconds\n" << std::fixed;
  for (const auto& r : rows) {
    os << r.variant << ',' << std::setprecision(4) << r.psnr << ',' << r.ssim << ',' << r.psnr_body << ','
       << std::setprecision(6) << r.final_loss << ',' << std::setprecision(1) << r.seconds << '\n';
  }
  return os.str();
}

}  // namespace nhp
