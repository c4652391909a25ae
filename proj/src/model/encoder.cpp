// SPDX-License-Identifier: Apache-2.0
#include "nhp/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <tuple>

namespace nhp {

namespace {

// Replicate-padded 3x3 im2col gather: rows (image, i, j, tap).
template <typename T>
std::shared_ptr<const SparseRows<T>> im2col(int count, int height, int width, int stride) {
  using Key = std::tuple<int, int, int, int>;
  static std::mutex mu;
  static std::map<Key, std::shared_ptr<const SparseRows<T>>> cache;
  const Key key{count, height, width, stride};
  std::lock_guard<std::mutex> lock(mu);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  const int oh = height / stride, ow = width / stride;
  const std::size_t pixels = static_cast<std::size_t>(height) * width;
  auto s = std::make_shared<SparseRows<T>>(static_cast<std::size_t>(count) * pixels);
  s->reserve(static_cast<std::size_t>(count) * oh * ow * 9, static_cast<std::size_t>(count) * oh * ow * 9);
  for (int k = 0; k < count; ++k) {
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) {
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int y = std::clamp(stride * i + dy, 0, height - 1);
            const int x = std::clamp(stride * j + dx, 0, width - 1);
            s->push(static_cast<std::size_t>(k) * pixels + static_cast<std::size_t>(y) * width + x, T(1));
            s->end_row();
          }
        }
      }
    }
  }
  cache.emplace(key, s);
  return s;
}

template <typename T>
Tensor<T> conv3x3(const ParamSet<T>& params, const std::string& name, const Tensor<T>& x, int count,
                  int height, int width, int stride) {
  const auto& w = params.at(name + ".w");
  const auto& b = params.at(name + ".b");
  const std::size_t cin = x.dim(1);
  if (w.dim(0) != 9 * cin) {
    throw DimensionError("conv " + name + ": weight " + shape_str(w.shape()) + " does not take " +
                         std::to_string(cin) + " input channels");
  }
  const std::size_t out_pixels = static_cast<std::size_t>(count) * (height / stride) * (width / stride);
  const Tensor<T> cols = reshape(spmm(im2col<T>(count, height, width, stride), x), {out_pixels, 9 * cin});
  return relu(linear(cols, w, b));
}

}  // namespace

template <typename T>
void add_encoder_params(ParamSet<T>& params, const EncoderConfig& cfg, std::mt19937_64& rng) {
  const std::size_t widths[4] = {3, static_cast<std::size_t>(cfg.hidden1), static_cast<std::size_t>(cfg.hidden2),
                                 static_cast<std::size_t>(cfg.features)};
  for (int l = 0; l < 3; ++l) {
    const std::string name = "enc.conv" + std::to_string(l + 1);
    auto& w = params.add(name + ".w", {9 * widths[l], widths[l + 1]});
    glorot_fill(w, 9 * widths[l], widths[l + 1], rng);
    params.add(name + ".b", {widths[l + 1]});
  }
}

template <typename T>
Tensor<T> image_stack(const std::vector<const Image*>& images) {
  if (images.empty()) throw DimensionError("image_stack: no images");
  const int w = images[0]->width, h = images[0]->height;
  std::vector<T> data;
  data.reserve(images.size() * static_cast<std::size_t>(w) * h * 3);
  for (const Image* img : images) {
    if (img->width != w || img->height != h) throw DimensionError("image_stack: images differ in size");
    for (float v : img->rgb) data.push_back(static_cast<T>(v));
  }
  return Tensor<T>({images.size() * static_cast<std::size_t>(w) * h, 3}, std::move(data));
}

template <typename T>
Tensor<T> encode_images(const ParamSet<T>& params, const Tensor<T>& images, int count, int height,
                        int width) {
  if (height <= 0 || width <= 0 || height % 2 != 0 || width % 2 != 0) {
    throw DimensionError("encode_images: image size " + std::to_string(width) + "x" + std::to_string(height) +
                         " must be positive and even");
  }
  if (images.rank() != 2 || images.dim(0) != static_cast<std::size_t>(count) * height * width ||
      images.dim(1) != 3) {
    throw DimensionError("encode_images: expected [" + std::to_string(count * height * width) + ", 3], got " +
                         shape_str(images.shape()));
  }
  Tensor<T> x = conv3x3(params, "enc.conv1", images, count, height, width, 2);
  x = conv3x3(params, "enc.conv2", x, count, height / 2, width / 2, 1);
  return conv3x3(params, "enc.conv3", x, count, height / 2, width / 2, 1);
}

template <typename T>
bool push_bilinear_row(SparseRows<T>& rows, std::size_t col_offset, int fm_height, int fm_width,
                       int src_height, int src_width, const Vec2& p) {
  if (!(p.x() >= -0.5 && p.y() >= -0.5 && p.x() <= src_width - 0.5 && p.y() <= src_height - 0.5)) {
    rows.end_row();
    return false;
  }
  const double u = std::clamp(0.5 * p.x(), 0.0, static_cast<double>(fm_width - 1));
  const double v = std::clamp(0.5 * p.y(), 0.0, static_cast<double>(fm_height - 1));
  const int x0 = std::min(static_cast<int>(std::floor(u)), fm_width - 1);
  const int y0 = std::min(static_cast<int>(std::floor(v)), fm_height - 1);
  const int x1 = std::min(x0 + 1, fm_width - 1), y1 = std::min(y0 + 1, fm_height - 1);
  const double fx = u - x0, fy = v - y0;
  const int xs[2] = {x0, x1}, ys[2] = {y0, y1};
  const double wx[2] = {1 - fx, fx}, wy[2] = {1 - fy, fy};
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      const double wgt = wy[a] * wx[b];
      if (wgt == 0.0) continue;
      rows.push(col_offset + static_cast<std::size_t>(ys[a]) * fm_width + xs[b], static_cast<T>(wgt));
    }
  }
  rows.end_row();
  return true;
}

template <typename T>
Tensor<T> sample_pixel_aligned(const Tensor<T>& fm, int fm_height, int fm_width, const Vec2& p) {
  SparseRows<T> rows(static_cast<std::size_t>(fm_height) * fm_width);
  push_bilinear_row(rows, 0, fm_height, fm_width, 2 * fm_height, 2 * fm_width, p);
  return spmm(rows, fm);
}

#define NHP_INSTANTIATE_ENCODER(T)                                                                  \
  template void add_encoder_params(ParamSet<T>&, const EncoderConfig&, std::mt19937_64&);          \
  template Tensor<T> image_stack(const std::vector<const Image*>&);                                \
  template Tensor<T> encode_images(const ParamSet<T>&, const Tensor<T>&, int, int, int);            \
  template bool push_bilinear_row(SparseRows<T>&, std::size_t, int, int, int, int, const Vec2&);   \
  template Tensor<T> sample_pixel_aligned(const Tensor<T>&, int, int, const Vec2&);

NHP_INSTANTIATE_ENCODER(float)
NHP_INSTANTIATE_ENCODER(double)

}  // namespace nhp
