// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "nhp/render.hpp"

namespace nhp {

namespace {

void check_same(const Image& a, const Image& b, const char* what) {
  if (a.width != b.width || a.height != b.height) {
    throw DimensionError(std::string(what) + ": image sizes " + std::to_string(a.width) + "x" +
                         std::to_string(a.height) + " and " + std::to_string(b.width) + "x" +
                         std::to_string(b.height) + " differ");
  }
}

double psnr_from_mse(double m) { return m < 1e-10 ? kPsnrCap : std::min(kPsnrCap, 10.0 * std::log10(1.0 / m)); }

}  // namespace

double mse(const Image& a, const Image& b) {
  check_same(a, b, "mse");
  if (a.rgb.empty()) throw DimensionError("mse: empty images");
  double s = 0.0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    const double d = static_cast<double>(a.rgb[i]) - b.rgb[i];
    s += d * d;
  }
  return s / static_cast<double>(a.rgb.size());
}

double psnr(const Image& a, const Image& b) { return psnr_from_mse(mse(a, b)); }

double psnr_region(const Image& a, const Image& b, int x0, int y0, int x1, int y1) {
  check_same(a, b, "psnr_region");
  x0 = std::max(x0, 0);
  y0 = std::max(y0, 0);
  x1 = std::min(x1, a.width);
  y1 = std::min(y1, a.height);
  if (x0 >= x1 || y0 >= y1) throw DimensionError("psnr_region: empty region");
  double s = 0.0;
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x)
      for (int c = 0; c < 3; ++c) {
        const double d = static_cast<double>(a.at(x, y, c)) - b.at(x, y, c);
        s += d * d;
      }
  return psnr_from_mse(s / (3.0 * (x1 - x0) * (y1 - y0)));
}

double ssim(const Image& a, const Image& b) {
  check_same(a, b, "ssim");
  constexpr int kWin = 11;
  if (a.width < kWin || a.height < kWin) throw DimensionError("ssim: image smaller than the 11x11 window");
  double g[kWin], gsum = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kWin / 2;
    g[i] = std::exp(-d * d / (2 * 1.5 * 1.5));
    gsum += g[i];
  }
  for (double& v : g) v /= gsum;
  constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  const int ow = a.width - kWin + 1, oh = a.height - kWin + 1;
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    double channel = 0.0;
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int j = 0; j < kWin; ++j) {
          for (int i = 0; i < kWin; ++i) {
            const double w = g[i] * g[j];
            const double va = a.at(x + i, y + j, c), vb = b.at(x + i, y + j, c);
            ma += w * va;
            mb += w * vb;
            saa += w * va * va;
            sbb += w * vb * vb;
            sab += w * va * vb;
          }
        }
        const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
        channel += ((2 * ma * mb + C1) * (2 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
      }
    }
    total += channel / (static_cast<double>(ow) * oh);
  }
  return total / 3.0;
}

}  // namespace nhp
