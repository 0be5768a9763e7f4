#include "sar/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <type_traits>
#include <vector>

namespace sar::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr long kParallelWork = 1L << 16;

bool go_parallel(int m, int k, int n) {
  return static_cast<long>(m) * k * n >= kParallelWork && !omp_in_parallel() &&
         omp_get_max_threads() > 1;
}

template <class T>
void zero(std::span<T> c) {
  std::fill(c.begin(), c.end(), T(0));
}

// Register-tiled core shared by all three products:
//   C[i, j] += sum_p A(i, p) * B[p, j]
// where A(i, p) = a[i * a_row + p * a_col] (so A may be a transpose view) and
// B is dense row-major with leading dimension ldb. Each C tile accumulates
// over p in order, so results do not depend on how tiles are split among
// threads.
template <class T, int MR, int NR>
inline void tile(const T* __restrict a, std::size_t a_row, std::size_t a_col,
                 const T* __restrict b, std::size_t ldb, T* __restrict c, std::size_t ldc, int k) {
  T acc[MR][NR] = {};
  for (int p = 0; p < k; ++p) {
    const T* __restrict bp = b + static_cast<std::size_t>(p) * ldb;
    for (int r = 0; r < MR; ++r) {
      const T av = a[r * a_row + p * a_col];
#pragma omp simd
      for (int j = 0; j < NR; ++j) acc[r][j] += av * bp[j];
    }
  }
  for (int r = 0; r < MR; ++r) {
#pragma omp simd
    for (int j = 0; j < NR; ++j) c[r * ldc + j] += acc[r][j];
  }
}

template <class T, int MR>
inline void tile_row(const T* a, std::size_t a_row, std::size_t a_col, const T* b, std::size_t ldb,
                     T* c, std::size_t ldc, int k, int n) {
  constexpr int VL = 64 / sizeof(T);
  int j = 0;
  for (; j + 2 * VL <= n; j += 2 * VL) tile<T, MR, 2 * VL>(a, a_row, a_col, b + j, ldb, c + j, ldc, k);
  for (; j + VL <= n; j += VL) tile<T, MR, VL>(a, a_row, a_col, b + j, ldb, c + j, ldc, k);
  for (; j + 4 <= n; j += 4) tile<T, MR, 4>(a, a_row, a_col, b + j, ldb, c + j, ldc, k);
  for (; j < n; ++j) tile<T, MR, 1>(a, a_row, a_col, b + j, ldb, c + j, ldc, k);
}

constexpr int kRowTile = 4;

template <class T>
void strided_product(const T* a, std::size_t a_row, std::size_t a_col, const T* b, T* c, int m,
                     int k, int n) {
  const int full = m / kRowTile;
  auto body = [&](int t) {
    const std::size_t i = static_cast<std::size_t>(t) * kRowTile;
    tile_row<T, kRowTile>(a + i * a_row, a_row, a_col, b, n, c + i * n, n, k, n);
  };
  if (go_parallel(m, k, n)) {
#pragma omp parallel for schedule(static)
    for (int t = 0; t < full; ++t) body(t);
  } else {
    for (int t = 0; t < full; ++t) body(t);
  }
  for (int i = full * kRowTile; i < m; ++i) {
    tile_row<T, 1>(a + static_cast<std::size_t>(i) * a_row, a_row, a_col, b, n,
                   c + static_cast<std::size_t>(i) * n, n, k, n);
  }
}

// Cephes-style expf: exp(x) = 2^n * exp(r), |r| <= ln2/2, degree-6 polynomial.
inline float fast_exp(float x) {
  x = std::clamp(x, -87.0f, 88.0f);
  const float n = std::floor(x * std::numbers::log2e_v<float> + 0.5f);
  float r = x - n * 0.693359375f;
  r += n * 2.12194440e-4f;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  const float e = p * r * r + r + 1.0f;
  const auto bits = static_cast<std::int32_t>(n + 127.0f) << 23;
  return e * std::bit_cast<float>(bits);
}

// Abramowitz & Stegun 7.1.26, |error| < 1.5e-7.
inline float fast_erf(float x) {
  const float ax = std::abs(x);
  const float t = 1.0f / (1.0f + 0.3275911f * ax);
  float p = 1.061405429f;
  p = p * t - 1.453152027f;
  p = p * t + 1.421413741f;
  p = p * t - 0.284496736f;
  p = p * t + 0.254829592f;
  const float y = 1.0f - p * t * fast_exp(-ax * ax);
  return std::copysign(y, x);
}

template <class T>
inline T exp_of(T x) {
  if constexpr (std::is_same_v<T, float>) {
    return fast_exp(x);
  } else {
    return std::exp(x);
  }
}

template <class T>
inline T erf_of(T x) {
  if constexpr (std::is_same_v<T, float>) {
    return fast_erf(x);
  } else {
    return std::erf(x);
  }
}

constexpr double kInvSqrt2 = std::numbers::sqrt2 / 2;
constexpr double kInvSqrt2Pi = std::numbers::inv_sqrtpi / std::numbers::sqrt2;

}  // namespace

template <class T>
void softmax_rows(std::span<T> m, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    T* __restrict row = m.data() + static_cast<std::size_t>(r) * cols;
    T peak = row[0];
    for (int c = 1; c < cols; ++c) peak = std::max(peak, row[c]);
    T sum = 0;
#pragma omp simd reduction(+ : sum)
    for (int c = 0; c < cols; ++c) {
      row[c] = exp_of(row[c] - peak);
      sum += row[c];
    }
    const T inv = T(1) / sum;
#pragma omp simd
    for (int c = 0; c < cols; ++c) row[c] *= inv;
  }
}

template <class T>
void gelu(std::span<const T> in, std::span<T> out) {
  const T* __restrict x = in.data();
  T* __restrict y = out.data();
  const auto n = in.size();
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = T(0.5) * x[i] * (T(1) + erf_of(x[i] * T(kInvSqrt2)));
  }
}

template <class T>
void gelu_backward(std::span<const T> pre, std::span<T> grad) {
  const T* __restrict x = pre.data();
  T* __restrict g = grad.data();
  const auto n = pre.size();
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) {
    const T cdf = T(0.5) * (T(1) + erf_of(x[i] * T(kInvSqrt2)));
    const T pdf = exp_of(T(-0.5) * x[i] * x[i]) * T(kInvSqrt2Pi);
    g[i] *= cdf + x[i] * pdf;
  }
}

int max_threads() { return omp_get_max_threads(); }

void set_threads(int n) { omp_set_num_threads(std::max(1, n)); }

template <class T>
void gemm_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n,
             bool accumulate) {
  if (!accumulate) zero(c);
  strided_product(a.data(), static_cast<std::size_t>(k), 1, b.data(), c.data(), m, k, n);
}

template <class T>
void gemm_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n,
             bool accumulate) {
  // Transpose B once so the tiles read contiguous rows.
  thread_local std::vector<T> bt;
  bt.resize(static_cast<std::size_t>(k) * n);
  for (int j = 0; j < n; ++j) {
    for (int p = 0; p < k; ++p) {
      bt[static_cast<std::size_t>(p) * n + j] = b[static_cast<std::size_t>(j) * k + p];
    }
  }
  if (!accumulate) zero(c);
  strided_product(a.data(), static_cast<std::size_t>(k), 1, bt.data(), c.data(), m, k, n);
}

template <class T>
void gemm_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n,
             bool accumulate) {
  if (!accumulate) zero(c);
  // C[k x n] = A^T B: row p of A^T is column p of A.
  strided_product(a.data(), 1, static_cast<std::size_t>(k), b.data(), c.data(), k, m, n);
}

namespace reference {

template <class T>
void gemm_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n,
             bool accumulate) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T sum = accumulate ? c[static_cast<std::size_t>(i) * n + j] : T(0);
      for (int p = 0; p < k; ++p) {
        sum += a[static_cast<std::size_t>(i) * k + p] * b[static_cast<std::size_t>(p) * n + j];
      }
      c[static_cast<std::size_t>(i) * n + j] = sum;
    }
  }
}

template <class T>
void gemm_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n,
             bool accumulate) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T sum = accumulate ? c[static_cast<std::size_t>(i) * n + j] : T(0);
      for (int p = 0; p < k; ++p) {
        sum += a[static_cast<std::size_t>(i) * k + p] * b[static_cast<std::size_t>(j) * k + p];
      }
      c[static_cast<std::size_t>(i) * n + j] = sum;
    }
  }
}

template <class T>
void gemm_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n,
             bool accumulate) {
  for (int p = 0; p < k; ++p) {
    for (int j = 0; j < n; ++j) {
      T sum = accumulate ? c[static_cast<std::size_t>(p) * n + j] : T(0);
      for (int i = 0; i < m; ++i) {
        sum += a[static_cast<std::size_t>(i) * k + p] * b[static_cast<std::size_t>(i) * n + j];
      }
      c[static_cast<std::size_t>(p) * n + j] = sum;
    }
  }
}

template <class T>
void softmax_rows(std::span<T> m, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    T* row = m.data() + static_cast<std::size_t>(r) * cols;
    const T peak = *std::max_element(row, row + cols);
    T sum = 0;
    for (int c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - peak);
      sum += row[c];
    }
    for (int c = 0; c < cols; ++c) row[c] /= sum;
  }
}

template <class T>
void gelu(std::span<const T> in, std::span<T> out) {
  for (std::size_t i = 0; i < in.size(); ++i) {
    out[i] = T(0.5) * in[i] * (T(1) + std::erf(in[i] * T(kInvSqrt2)));
  }
}

template <class T>
void gelu_backward(std::span<const T> pre, std::span<T> grad) {
  for (std::size_t i = 0; i < pre.size(); ++i) {
    const T x = pre[i];
    grad[i] *= T(0.5) * (T(1) + std::erf(x * T(kInvSqrt2))) + x * std::exp(T(-0.5) * x * x) * T(kInvSqrt2Pi);
  }
}

}  // namespace reference

#define SAR_INSTANTIATE(T)                                                                      \
  template void gemm_nn<T>(std::span<const T>, std::span<const T>, std::span<T>, int, int, int, \
                           bool);                                                               \
  template void gemm_nt<T>(std::span<const T>, std::span<const T>, std::span<T>, int, int, int, \
                           bool);                                                               \
  template void gemm_tn<T>(std::span<const T>, std::span<const T>, std::span<T>, int, int, int, \
                           bool);                                                               \
  template void reference::gemm_nn<T>(std::span<const T>, std::span<const T>, std::span<T>,     \
                                      int, int, int, bool);                                     \
  template void reference::gemm_nt<T>(std::span<const T>, std::span<const T>, std::span<T>,     \
                                      int, int, int, bool);                                     \
  template void reference::gemm_tn<T>(std::span<const T>, std::span<const T>, std::span<T>,     \
                                      int, int, int, bool);                                     \
  template void softmax_rows<T>(std::span<T>, int, int);                                        \
  template void gelu<T>(std::span<const T>, std::span<T>);                                      \
  template void gelu_backward<T>(std::span<const T>, std::span<T>);                             \
  template void reference::softmax_rows<T>(std::span<T>, int, int);                             \
  template void reference::gelu<T>(std::span<const T>, std::span<T>);                           \
  template void reference::gelu_backward<T>(std::span<const T>, std::span<T>);

SAR_INSTANTIATE(float)
SAR_INSTANTIATE(double)

#undef SAR_INSTANTIATE

}  // namespace sar::kernels
