// SPDX-License-Identifier: Apache-2.0
//
// Small convolutional image encoder and pixel-aligned feature sampling.
#pragma once

#include <memory>
#include <random>

#include "nhp/geometry.hpp"
#include "nhp/image.hpp"
#include "nhp/ops.hpp"
#include "nhp/params.hpp"

namespace nhp {

struct EncoderConfig {
  int hidden1 = 16;
  int hidden2 = 32;
  int features = 32;  // d_img
};

// Registers enc.conv{1,2,3}.{w,b}. Weights are [9 * c_in, c_out] with rows
// ordered tap-major (3x3 taps row by row), channel-minor.
template <typename T>
void add_encoder_params(ParamSet<T>& params, const EncoderConfig& cfg, std::mt19937_64& rng);

// Stacks images into a [count * H * W, 3] tensor (row-major pixels).
template <typename T>
Tensor<T> image_stack(const std::vector<const Image*>& images);

// images: [count * H * W, 3] -> feature maps [count * (H/2) * (W/2), d_img].
// Stride-2 3x3 conv, then two stride-1 3x3 convs, each followed by relu.
// Borders use replicate padding. Throws DimensionError on odd sizes.
template <typename T>
Tensor<T> encode_images(const ParamSet<T>& params, const Tensor<T>& images, int count, int height,
                        int width);

// Appends one row of bilinear weights for source-image pixel p to rows, with
// the feature map occupying columns [col_offset, col_offset + h * w). Returns
// false and appends an empty row when p lies outside the source image.
// Feature site (i, j) sits at source pixel (2j, 2i); sites past the last
// one clamp to the border.
template <typename T>
bool push_bilinear_row(SparseRows<T>& rows, std::size_t col_offset, int fm_height, int fm_width,
                       int src_height, int src_width, const Vec2& p);

// Single-point convenience: fm is [h * w, d]; returns [1, d].
template <typename T>
Tensor<T> sample_pixel_aligned(const Tensor<T>& fm, int fm_height, int fm_width, const Vec2& p);

}  // namespace nhp
