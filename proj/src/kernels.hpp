#pragma once

// Internal compute kernels shared by the op implementations. All helpers
// partition independent output cells across workers; the accumulation
// order for any single cell never depends on the thread count, so runs
// are bit-reproducible for every MAN_THREADS setting.

#include <Eigen/Core>

#include "man/common.hpp"
#include "man/threads.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace man::detail {

template <class F>
void parallel_for(i64 begin, i64 end, F&& fn) {
    const i64 count = end - begin;
    if (count <= 0) return;
    int nt = num_threads();
    if (nt > count) nt = static_cast<int>(count);
#ifdef _OPENMP
    if (nt > 1) {
#pragma omp parallel for num_threads(nt) schedule(static)
        for (i64 i = begin; i < end; ++i) fn(i);
        return;
    }
#endif
    for (i64 i = begin; i < end; ++i) fn(i);
}

// Splits [0, count) into roughly equal contiguous ranges, one per worker.
template <class F>
void parallel_ranges(i64 count, F&& fn) {
    if (count <= 0) return;
    i64 nt = num_threads();
    if (nt > count) nt = count;
    parallel_for(0, nt, [&](i64 t) {
        const i64 lo = count * t / nt;
        const i64 hi = count * (t + 1) / nt;
        fn(lo, hi);
    });
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

// C (m x n) = or += A (m x k) * B (k x n), all row-major contiguous.
// Columns of C are partitioned across workers.
template <class T>
void mm_cols(const T* A, i64 m, i64 k, const T* B, i64 n, T* C, bool accumulate) {
    CMapMat<T> a(A, m, k);
    parallel_ranges(n, [&](i64 lo, i64 hi) {
        CMapMat<T> b(B, k, n);
        MapMat<T> c(C, m, n);
        if (accumulate)
            c.middleCols(lo, hi - lo).noalias() += a * b.middleCols(lo, hi - lo);
        else
            c.middleCols(lo, hi - lo).noalias() = a * b.middleCols(lo, hi - lo);
    });
}

// C (m x n) = or += A^T (m x k) * B (k x n) where A is stored row-major
// as (k x m). Columns of C are partitioned across workers.
template <class T>
void mm_at_cols(const T* A, i64 k, i64 m, const T* B, i64 n, T* C, bool accumulate) {
    CMapMat<T> a(A, k, m);
    parallel_ranges(n, [&](i64 lo, i64 hi) {
        CMapMat<T> b(B, k, n);
        MapMat<T> c(C, m, n);
        if (accumulate)
            c.middleCols(lo, hi - lo).noalias() += a.transpose() * b.middleCols(lo, hi - lo);
        else
            c.middleCols(lo, hi - lo).noalias() = a.transpose() * b.middleCols(lo, hi - lo);
    });
}

// C (m x p) += sum_s A_s (m x k) * B_s (p x k)^T over a batch of operand
// pairs. Rows of C are partitioned across workers; each worker walks the
// batch in order, so per-cell accumulation order is fixed.
template <class T>
void mm_abt_batched(const std::vector<const T*>& As, const std::vector<const T*>& Bs, i64 m,
                    i64 k, i64 p, T* C) {
    parallel_ranges(m, [&](i64 lo, i64 hi) {
        MapMat<T> c(C, m, p);
        for (size_t s = 0; s < As.size(); ++s) {
            CMapMat<T> a(As[s], m, k);
            CMapMat<T> b(Bs[s], p, k);
            c.middleRows(lo, hi - lo).noalias() +=
                a.middleRows(lo, hi - lo) * b.transpose();
        }
    });
}

}  // namespace man::detail
