#include "pep/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pep::kernels {
namespace {

// Below this many output elements the omp:: kernels stay on one thread.
constexpr std::size_t kParallelThreshold = 4096;

inline void matmul_row(const double* a, const double* b, double* c, std::size_t k, std::size_t n,
                       bool trans_b) {
  if (trans_b) {
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[p] * bj[p];
      c[j] = s;
    }
  } else {
    for (std::size_t j = 0; j < n; ++j) c[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double ap = a[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += ap * bp[j];
    }
  }
}

// One row i of batch element bi.
inline void matmul_task(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                        std::size_t n, bool trans_b, const BatchShape& s, std::size_t task) {
  const std::size_t bi = task / m;
  const std::size_t i = task % m;
  matmul_row(a + bi * s.a_stride + i * k, b + bi * s.b_stride, c + bi * s.c_stride + i * n, k, n,
             trans_b);
}

// One output element (i, j) of C; when C is shared, batch index is part of
// the reduction instead of the task.
inline void tn_task(const double* a, const double* b, double* c, std::size_t r, std::size_t m,
                    std::size_t n, const BatchShape& s, std::size_t task) {
  const bool reduce_batch = s.c_stride == 0;
  const std::size_t per = m * n;
  const std::size_t bi = reduce_batch ? 0 : task / per;
  const std::size_t e = task % per;
  const std::size_t i = e / n;
  const std::size_t j = e % n;
  double acc = 0.0;
  const std::size_t b_lo = reduce_batch ? 0 : bi;
  const std::size_t b_hi = reduce_batch ? s.batch : bi + 1;
  for (std::size_t bb = b_lo; bb < b_hi; ++bb) {
    const double* ab = a + bb * s.a_stride;
    const double* bbp = b + bb * s.b_stride;
    for (std::size_t row = 0; row < r; ++row) acc += ab[row * m + i] * bbp[row * n + j];
  }
  c[bi * s.c_stride + i * n + j] += acc;
}

inline std::size_t tn_tasks(std::size_t m, std::size_t n, const BatchShape& s) {
  return (s.c_stride == 0 ? 1 : s.batch) * m * n;
}

inline void softmax_row(const double* in, double* out, std::size_t cols) {
  double mx = in[0];
  for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    out[j] = std::exp(in[j] - mx);
    sum += out[j];
  }
  const double inv = 1.0 / sum;
  for (std::size_t j = 0; j < cols; ++j) out[j] *= inv;
}

inline Projected project_one(const double* m, const double* p, double w, double h) {
  const double x = p[0], y = p[1], z = p[2];
  const double hx = m[0] * x + m[1] * y + m[2] * z + m[3];
  const double hy = m[4] * x + m[5] * y + m[6] * z + m[7];
  const double hz = m[8] * x + m[9] * y + m[10] * z + m[11];
  Projected r;
  r.depth = hz;
  if (std::abs(hz) < 1e-12) return r;
  r.u = hx / hz;
  r.v = hy / hz;
  r.visible = hz > 0.0 && r.u >= 0.0 && r.u < w && r.v >= 0.0 && r.v < h;
  return r;
}

inline void knn_one(const double* xyz, std::size_t stride, std::size_t n, std::size_t k,
                    std::size_t i, std::vector<std::pair<double, std::uint32_t>>& scratch,
                    std::uint32_t* out) {
  scratch.clear();
  const double* pi = xyz + i * stride;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == i) continue;
    const double* pj = xyz + j * stride;
    const double dx = pi[0] - pj[0], dy = pi[1] - pj[1], dz = pi[2] - pj[2];
    scratch.emplace_back(dx * dx + dy * dy + dz * dz, static_cast<std::uint32_t>(j));
  }
  std::partial_sort(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k), scratch.end());
  for (std::size_t q = 0; q < k; ++q) out[i * k + q] = scratch[q].second;
}

}  // namespace

namespace serial {

void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
            bool trans_b, const BatchShape& shape) {
  const std::size_t tasks = shape.batch * m;
  for (std::size_t t = 0; t < tasks; ++t) matmul_task(a, b, c, m, k, n, trans_b, shape, t);
}

void matmul_tn_acc(const double* a, const double* b, double* c, std::size_t r, std::size_t m,
                   std::size_t n, const BatchShape& shape) {
  const std::size_t tasks = tn_tasks(m, n, shape);
  for (std::size_t t = 0; t < tasks; ++t) tn_task(a, b, c, r, m, n, shape, t);
}

void row_softmax(const double* in, double* out, std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) softmax_row(in + i * cols, out + i * cols, cols);
}

void project(const double* chain, const double* xyz, std::size_t stride, std::size_t n,
             double image_w, double image_h, Projected* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = project_one(chain, xyz + i * stride, image_w, image_h);
}

void knn(const double* xyz, std::size_t stride, std::size_t n, std::size_t k, std::uint32_t* out) {
  std::vector<std::pair<double, std::uint32_t>> scratch;
  scratch.reserve(n);
  for (std::size_t i = 0; i < n; ++i) knn_one(xyz, stride, n, k, i, scratch, out);
}

}  // namespace serial

namespace omp {

void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
            bool trans_b, const BatchShape& shape) {
  const auto tasks = static_cast<std::ptrdiff_t>(shape.batch * m);
#pragma omp parallel for schedule(static) if (shape.batch * m * n * k > kParallelThreshold)
  for (std::ptrdiff_t t = 0; t < tasks; ++t) {
    matmul_task(a, b, c, m, k, n, trans_b, shape, static_cast<std::size_t>(t));
  }
}

void matmul_tn_acc(const double* a, const double* b, double* c, std::size_t r, std::size_t m,
                   std::size_t n, const BatchShape& shape) {
  const auto tasks = static_cast<std::ptrdiff_t>(tn_tasks(m, n, shape));
#pragma omp parallel for schedule(static) if (shape.batch * r * m * n > kParallelThreshold)
  for (std::ptrdiff_t t = 0; t < tasks; ++t) {
    tn_task(a, b, c, r, m, n, shape, static_cast<std::size_t>(t));
  }
}

void row_softmax(const double* in, double* out, std::size_t rows, std::size_t cols) {
  const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * cols > kParallelThreshold)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    softmax_row(in + static_cast<std::size_t>(i) * cols, out + static_cast<std::size_t>(i) * cols, cols);
  }
}

void project(const double* chain, const double* xyz, std::size_t stride, std::size_t n,
             double image_w, double image_h, Projected* out) {
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (n > kParallelThreshold)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    const auto u = static_cast<std::size_t>(i);
    out[u] = project_one(chain, xyz + u * stride, image_w, image_h);
  }
}

void knn(const double* xyz, std::size_t stride, std::size_t n, std::size_t k, std::uint32_t* out) {
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel if (n * n > kParallelThreshold)
  {
    std::vector<std::pair<double, std::uint32_t>> scratch;
    scratch.reserve(n);
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < count; ++i) knn_one(xyz, stride, n, k, static_cast<std::size_t>(i), scratch, out);
  }
}

}  // namespace omp

void set_num_threads(int threads) {
#ifdef _OPENMP
  omp_set_num_threads(threads < 1 ? omp_get_num_procs() : threads);
#else
  (void)threads;
#endif
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace pep::kernels
