// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "nhp/tensor.hpp"

namespace nhp {

// Constant sparse matrix in CSR form. spmm(S, X) computes S * X where X is
// viewed as [S.num_cols(), features]. Used for every gather/scatter in the
// pipeline: bilinear and trilinear sampling, im2col, scatter-mean, row
// selection and sparse convolution rulebooks.
template <typename T>
class SparseRows {
 public:
  explicit SparseRows(std::size_t num_cols = 0) : num_cols_(num_cols) { offsets_.push_back(0); }

  void push(std::size_t col, T weight) {
    cols_.push_back(static_cast<std::uint32_t>(col));
    weights_.push_back(weight);
  }
  void end_row() { offsets_.push_back(cols_.size()); }
  void reserve(std::size_t rows, std::size_t entries) {
    offsets_.reserve(rows + 1);
    cols_.reserve(entries);
    weights_.reserve(entries);
  }

  std::size_t num_rows() const { return offsets_.size() - 1; }
  std::size_t num_cols() const { return num_cols_; }
  std::size_t num_entries() const { return cols_.size(); }
  std::size_t row_begin(std::size_t r) const { return offsets_[r]; }
  std::size_t row_end(std::size_t r) const { return offsets_[r + 1]; }
  std::uint32_t col(std::size_t e) const { return cols_[e]; }
  T weight(std::size_t e) const { return weights_[e]; }

 private:
  std::size_t num_cols_;
  std::vector<std::size_t> offsets_;
  std::vector<std::uint32_t> cols_;
  std::vector<T> weights_;
};

// Elementwise; shapes must match exactly.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> softplus(const Tensor<T>& a);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> square(const Tensor<T>& a);

// x[..., n] + b[n], broadcast over the leading axes only.
template <typename T> Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b);

// Reductions.
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
// Sums the last axis away: [..., n] -> [...].
template <typename T> Tensor<T> sum_last(const Tensor<T>& a);
template <typename T> Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b);

// Shape ops.
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
// Swaps the last two axes.
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

// Matrix products.
//   a[..., k] * b[k, n]             -> a[..., n]  (shared right operand)
//   a[B..., m, k] * b[B..., k, n]   -> [B..., m, n] (batched, same leading axes)
// With transpose_b the right operand is read as b[..., n, k].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);
// x[..., in] * w[in, out] + b[out]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);
// S * x with x viewed as [S.num_cols(), size / S.num_cols()].
template <typename T>
Tensor<T> spmm(const SparseRows<T>& s, const Tensor<T>& x);
// Same, sharing the pattern with the backward rule instead of copying it.
template <typename T>
Tensor<T> spmm(std::shared_ptr<const SparseRows<T>> s, const Tensor<T>& x);

// Row-wise softmax over the last axis, stabilised by the row maximum. A zero
// mask entry behaves as a -inf logit; a fully masked row yields all zeros.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x, const std::vector<std::uint8_t>* mask = nullptr);

// Exclusive prefix sum along the last axis: y_i = sum_{j<i} x_j.
template <typename T> Tensor<T> cumsum_exclusive(const Tensor<T>& x);

// Low-level kernel: C (m x n) (+)= op(A) * op(B), row-major, dense.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c, bool accumulate);

}  // namespace nhp
