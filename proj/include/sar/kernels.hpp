#pragma once

// Dense row-major matrix products used by the transformer.
//
// Single-precision activations use vectorisable polynomial approximations
// of exp and erf (about 1e-7 relative error); double precision calls the
// C library so that gradient checks see the true functions.
//
// Every kernel has two implementations: the OpenMP one in sar::kernels and a
// plain triple loop in sar::kernels::reference. The reference versions exist
// for the test suite and the benchmark; nothing on the training path calls
// them.
//
// Shapes are passed explicitly. `accumulate` selects C += ... over C = ...

#include <span>

namespace sar::kernels {

/// C[m x n] (+)= A[m x k] * B[k x n]
template <class T>
void gemm_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n,
             bool accumulate = false);

/// C[m x n] (+)= A[m x k] * B[n x k]^T
template <class T>
void gemm_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n,
             bool accumulate = false);

/// C[k x n] (+)= A[m x k]^T * B[m x n]
template <class T>
void gemm_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n,
             bool accumulate = true);

/// Row-wise softmax in place over a rows x cols matrix.
template <class T>
void softmax_rows(std::span<T> m, int rows, int cols);

/// Exact (erf-based) GELU.
template <class T>
void gelu(std::span<const T> in, std::span<T> out);

/// grad[i] *= GELU'(pre[i]).
template <class T>
void gelu_backward(std::span<const T> pre, std::span<T> grad);

/// Number of threads the kernels will use outside of an enclosing parallel region.
int max_threads();
void set_threads(int n);

namespace reference {

template <class T>
void gemm_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n,
             bool accumulate = false);
template <class T>
void gemm_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n,
             bool accumulate = false);
template <class T>
void gemm_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n,
             bool accumulate = true);
template <class T>
void softmax_rows(std::span<T> m, int rows, int cols);
template <class T>
void gelu(std::span<const T> in, std::span<T> out);
template <class T>
void gelu_backward(std::span<const T> pre, std::span<T> grad);

}  // namespace reference

}  // namespace sar::kernels
