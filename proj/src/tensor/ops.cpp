// SPDX-License-Identifier: Apache-2.0
#include "nhp/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace nhp {

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename T>
Node<T>* grad_target(Node<T>& out, std::size_t i) {
  Node<T>* p = out.parents[i].get();
  return p->requires_grad ? p : nullptr;
}

template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& a, F forward, D derivative) {
  auto x = a.data();
  std::vector<T> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = forward(x[i]);
  return make_result<T>(a.shape(), std::move(y), {a}, [derivative](Node<T>& out) {
    Node<T>* in = grad_target(out, 0);
    if (!in) return;
    auto& g = in->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += out.grad[i] * derivative(in->data[i], out.data[i]);
    }
  });
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  if (m * n * k <= 4096) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        T acc = accumulate ? c[i * n + j] : T(0);
        for (std::size_t l = 0; l < k; ++l) {
          T av = trans_a ? a[l * m + i] : a[i * k + l];
          T bv = trans_b ? b[j * k + l] : b[l * n + j];
          acc += av * bv;
        }
        c[i * n + j] = acc;
      }
    }
    return;
  }
  using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Idx = Eigen::Index;
  Eigen::Map<const RowMat> A(a, static_cast<Idx>(trans_a ? k : m), static_cast<Idx>(trans_a ? m : k));
  Eigen::Map<const RowMat> B(b, static_cast<Idx>(trans_b ? n : k), static_cast<Idx>(trans_b ? k : n));
  Eigen::Map<RowMat> C(c, static_cast<Idx>(m), static_cast<Idx>(n));
  if (!accumulate) C.setZero();
  if (!trans_a && !trans_b) {
    C.noalias() += A * B;
  } else if (!trans_a && trans_b) {
    C.noalias() += A * B.transpose();
  } else if (trans_a && !trans_b) {
    C.noalias() += A.transpose() * B;
  } else {
    C.noalias() += A.transpose() * B.transpose();
  }
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  auto x = a.data(), y = b.data();
  std::vector<T> r(x.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = x[i] + y[i];
  return make_result<T>(a.shape(), std::move(r), {a, b}, [](Node<T>& out) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (Node<T>* in = grad_target(out, p)) {
        auto& g = in->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
      }
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  auto x = a.data(), y = b.data();
  std::vector<T> r(x.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = x[i] - y[i];
  return make_result<T>(a.shape(), std::move(r), {a, b}, [](Node<T>& out) {
    if (Node<T>* in = grad_target(out, 0)) {
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
    if (Node<T>* in = grad_target(out, 1)) {
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= out.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  auto x = a.data(), y = b.data();
  std::vector<T> r(x.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = x[i] * y[i];
  return make_result<T>(a.shape(), std::move(r), {a, b}, [](Node<T>& out) {
    Node<T>* pa = out.parents[0].get();
    Node<T>* pb = out.parents[1].get();
    if (pa->requires_grad) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * pb->data[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * pa->data[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary(
      a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary(a, [](T x) { return sigmoid_scalar(x); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
  return unary(
      a,
      [](T x) { return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](T x, T) { return sigmoid_scalar(x); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return unary(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
  if (x.rank() == 0 || b.rank() != 1 || b.dim(0) != x.shape().back()) {
    throw DimensionError("add_bias: cannot add bias " + shape_str(b.shape()) + " to " +
                         shape_str(x.shape()));
  }
  const std::size_t n = b.size();
  auto xs = x.data(), bs = b.data();
  std::vector<T> r(xs.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = xs[i] + bs[i % n];
  return make_result<T>(x.shape(), std::move(r), {x, b}, [n](Node<T>& out) {
    if (Node<T>* in = grad_target(out, 0)) {
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
    if (Node<T>* in = grad_target(out, 1)) {
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < out.grad.size(); ++i) g[i % n] += out.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = T(0);
  for (T v : a.data()) s += v;
  return make_result<T>(Shape{}, {s}, {a}, [](Node<T>& out) {
    if (Node<T>* in = grad_target(out, 0)) {
      auto& g = in->grad_buffer();
      for (auto& v : g) v += out.grad[0];
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.size() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

template <typename T>
Tensor<T> sum_last(const Tensor<T>& a) {
  if (a.rank() == 0) throw DimensionError("sum_last: scalar input");
  const std::size_t n = a.shape().back();
  Shape shape(a.shape().begin(), a.shape().end() - 1);
  const std::size_t rows = numel(shape);
  auto x = a.data();
  std::vector<T> r(rows, T(0));
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < n; ++j) r[i] += x[i * n + j];
  }
  return make_result<T>(std::move(shape), std::move(r), {a}, [n](Node<T>& out) {
    if (Node<T>* in = grad_target(out, 0)) {
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i / n];
    }
  });
}

template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mse");
  return mean(square(sub(a, b)));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<T> r(a.data().begin(), a.data().end());
  return make_result<T>(std::move(shape), std::move(r), {a}, [](Node<T>& out) {
    if (Node<T>* in = grad_target(out, 0)) {
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() < 2) throw DimensionError("transpose: rank < 2 for " + shape_str(a.shape()));
  Shape shape = a.shape();
  const std::size_t m = shape[shape.size() - 2], n = shape.back();
  std::swap(shape[shape.size() - 2], shape.back());
  const std::size_t batch = a.size() / std::max<std::size_t>(1, m * n);
  auto x = a.data();
  std::vector<T> r(x.size());
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t off = b * m * n;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) r[off + j * m + i] = x[off + i * n + j];
  }
  return make_result<T>(std::move(shape), std::move(r), {a}, [m, n, batch](Node<T>& out) {
    if (Node<T>* in = grad_target(out, 0)) {
      auto& g = in->grad_buffer();
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t off = b * m * n;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) g[off + i * n + j] += out.grad[off + j * m + i];
      }
    }
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_str(first));
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  Shape shape = first;
  shape[axis] = 0;
  std::vector<std::size_t> inner;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) {
      throw DimensionError("concat: incompatible shapes " + shape_str(first) + " and " +
                           shape_str(s) + " along axis " + std::to_string(axis));
    }
    shape[axis] += s[axis];
    inner.push_back(outer ? p.size() / std::max<std::size_t>(outer, 1) : 0);
  }
  std::size_t row = 0;
  for (auto v : inner) row += v;
  std::vector<T> r(outer * row);
  std::size_t col = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto x = parts[p].data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(x.begin() + o * inner[p], inner[p], r.begin() + o * row + col);
    col += inner[p];
  }
  return make_result<T>(std::move(shape), std::move(r), parts, [outer, row, inner](Node<T>& out) {
    std::size_t c = 0;
    for (std::size_t p = 0; p < inner.size(); ++p) {
      if (Node<T>* in = grad_target(out, p)) {
        auto& g = in->grad_buffer();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t j = 0; j < inner[p]; ++j) g[o * inner[p] + j] += out.grad[o * row + c + j];
      }
      c += inner[p];
    }
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  auto mismatch = [&]() {
    return DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                          shape_str(b.shape()) + (transpose_b ? " (right transposed)" : ""));
  };
  if (a.rank() == 0 || b.rank() < 2) throw mismatch();
  std::size_t batch = 1, m = 0, k = a.shape().back(), n = 0;
  bool shared = b.rank() == 2;
  Shape shape;
  const std::size_t bk = transpose_b ? b.shape().back() : b.shape()[b.rank() - 2];
  n = transpose_b ? b.shape()[b.rank() - 2] : b.shape().back();
  if (bk != k) throw mismatch();
  if (shared) {
    m = a.size() / std::max<std::size_t>(k, 1);
    shape.assign(a.shape().begin(), a.shape().end() - 1);
    shape.push_back(n);
    if (k == 0) m = numel(Shape(a.shape().begin(), a.shape().end() - 1));
  } else {
    if (a.rank() != b.rank() || a.rank() < 3) throw mismatch();
    for (std::size_t i = 0; i + 2 < a.rank(); ++i) {
      if (a.shape()[i] != b.shape()[i]) throw mismatch();
      batch *= a.shape()[i];
    }
    m = a.shape()[a.rank() - 2];
    shape.assign(a.shape().begin(), a.shape().end() - 1);
    shape.push_back(n);
  }
  std::vector<T> r(batch * m * n, T(0));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (std::size_t i = 0; i < batch; ++i) {
    gemm<T>(false, transpose_b, m, n, k, pa + i * m * k, shared ? pb : pb + i * k * n,
            r.data() + i * m * n, false);
  }
  return make_result<T>(
      std::move(shape), std::move(r), {a, b}, [batch, m, n, k, shared, transpose_b](Node<T>& out) {
        Node<T>* na = out.parents[0].get();
        Node<T>* nb = out.parents[1].get();
        const T* dc = out.grad.data();
        if (na->requires_grad) {
          T* da = na->grad_buffer().data();
          const T* pb = nb->data.data();
          for (std::size_t i = 0; i < batch; ++i) {
            // dA = dC * op(B)^T
            gemm<T>(false, !transpose_b, m, k, n, dc + i * m * n, shared ? pb : pb + i * k * n,
                    da + i * m * k, true);
          }
        }
        if (nb->requires_grad) {
          T* db = nb->grad_buffer().data();
          const T* pa = na->data.data();
          for (std::size_t i = 0; i < batch; ++i) {
            T* dbi = shared ? db : db + i * k * n;
            if (transpose_b) {
              // B is [n, k]: dB = dC^T * A
              gemm<T>(true, false, n, k, m, dc + i * m * n, pa + i * m * k, dbi, true);
            } else {
              gemm<T>(true, false, k, n, m, pa + i * m * k, dc + i * m * n, dbi, true);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add_bias(matmul(x, w), b);
}

template <typename T>
Tensor<T> spmm(const SparseRows<T>& s, const Tensor<T>& x) {
  return spmm(std::make_shared<const SparseRows<T>>(s), x);
}

template <typename T>
Tensor<T> spmm(std::shared_ptr<const SparseRows<T>> pattern, const Tensor<T>& x) {
  const SparseRows<T>& s = *pattern;
  const std::size_t cols = s.num_cols();
  // x must split as [leading axes with product cols, trailing feature axes].
  std::size_t prefix = 1;
  for (std::size_t i = 0; i < x.rank() && prefix < cols; ++i) prefix *= x.shape()[i];
  if (cols == 0 || prefix != cols) {
    throw DimensionError("spmm: sparse matrix with " + std::to_string(cols) +
                         " columns cannot multiply " + shape_str(x.shape()));
  }
  const std::size_t f = x.size() / cols;
  const std::size_t rows = s.num_rows();
  std::vector<T> r(rows * f, T(0));
  const T* px = x.data().data();
  for (std::size_t i = 0; i < rows; ++i) {
    T* dst = r.data() + i * f;
    for (std::size_t e = s.row_begin(i); e < s.row_end(i); ++e) {
      const T w = s.weight(e);
      const T* src = px + static_cast<std::size_t>(s.col(e)) * f;
      for (std::size_t j = 0; j < f; ++j) dst[j] += w * src[j];
    }
  }
  return make_result<T>(Shape{rows, f}, std::move(r), {x}, [pattern, f](Node<T>& out) {
    Node<T>* in = grad_target(out, 0);
    if (!in) return;
    T* g = in->grad_buffer().data();
    const SparseRows<T>& sp = *pattern;
    for (std::size_t i = 0; i < sp.num_rows(); ++i) {
      const T* src = out.grad.data() + i * f;
      for (std::size_t e = sp.row_begin(i); e < sp.row_end(i); ++e) {
        const T w = sp.weight(e);
        T* dst = g + static_cast<std::size_t>(sp.col(e)) * f;
        for (std::size_t j = 0; j < f; ++j) dst[j] += w * src[j];
      }
    }
  });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x, const std::vector<std::uint8_t>* mask) {
  if (x.rank() == 0 || x.shape().back() == 0) {
    throw DimensionError("softmax_rows: need a non-empty last axis, got " + shape_str(x.shape()));
  }
  if (mask && mask->size() != x.size()) {
    throw DimensionError("softmax_rows: mask size does not match " + shape_str(x.shape()));
  }
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / n;
  auto xs = x.data();
  std::vector<T> y(xs.size(), T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t off = r * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (!mask || (*mask)[off + j]) mx = std::max(mx, xs[off + j]);
    if (mx == -std::numeric_limits<T>::infinity()) continue;
    T total = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      if (mask && !(*mask)[off + j]) continue;
      y[off + j] = std::exp(xs[off + j] - mx);
      total += y[off + j];
    }
    for (std::size_t j = 0; j < n; ++j) y[off + j] /= total;
  }
  return make_result<T>(x.shape(), std::move(y), {x}, [n, rows](Node<T>& out) {
    Node<T>* in = grad_target(out, 0);
    if (!in) return;
    auto& g = in->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t off = r * n;
      T dot = T(0);
      for (std::size_t j = 0; j < n; ++j) dot += out.data[off + j] * out.grad[off + j];
      for (std::size_t j = 0; j < n; ++j) g[off + j] += out.data[off + j] * (out.grad[off + j] - dot);
    }
  });
}

template <typename T>
Tensor<T> cumsum_exclusive(const Tensor<T>& x) {
  if (x.rank() == 0) throw DimensionError("cumsum_exclusive: scalar input");
  const std::size_t n = x.shape().back();
  const std::size_t rows = n ? x.size() / n : 0;
  auto xs = x.data();
  std::vector<T> y(xs.size());
  for (std::size_t r = 0; r < rows; ++r) {
    T acc = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      y[r * n + j] = acc;
      acc += xs[r * n + j];
    }
  }
  return make_result<T>(x.shape(), std::move(y), {x}, [n, rows](Node<T>& out) {
    Node<T>* in = grad_target(out, 0);
    if (!in) return;
    auto& g = in->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      // dx_j = sum_{i>j} dy_i
      T acc = T(0);
      for (std::size_t j = n; j-- > 0;) {
        g[r * n + j] += acc;
        acc += out.grad[r * n + j];
      }
    }
  });
}

#define NHP_INSTANTIATE_OPS(T)                                                                  \
  template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, const T*, const T*, \
                        T*, bool);                                                             \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> scale(const Tensor<T>&, T);                                               \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                          \
  template Tensor<T> relu(const Tensor<T>&);                                                   \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                \
  template Tensor<T> softplus(const Tensor<T>&);                                               \
  template Tensor<T> exp(const Tensor<T>&);                                                    \
  template Tensor<T> square(const Tensor<T>&);                                                 \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> sum(const Tensor<T>&);                                                    \
  template Tensor<T> mean(const Tensor<T>&);                                                   \
  template Tensor<T> sum_last(const Tensor<T>&);                                               \
  template Tensor<T> mse(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                         \
  template Tensor<T> transpose(const Tensor<T>&);                                              \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                       \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&, bool);                          \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> spmm(const SparseRows<T>&, const Tensor<T>&);                             \
  template Tensor<T> spmm(std::shared_ptr<const SparseRows<T>>, const Tensor<T>&);             \
  template Tensor<T> softmax_rows(const Tensor<T>&, const std::vector<std::uint8_t>*);         \
  template Tensor<T> cumsum_exclusive(const Tensor<T>&);

NHP_INSTANTIATE_OPS(float)
NHP_INSTANTIATE_OPS(double)

}  // namespace nhp
