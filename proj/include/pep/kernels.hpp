#pragma once

// Dense numeric kernels behind the gradient engine, projection and neighbor
// search. Every kernel exists twice: `serial::` is the reference loop and
// `omp::` distributes independent output elements over OpenMP threads. Each
// output element is computed by the same sequential inner loop in both, so
// the two agree bit for bit regardless of thread count.

#include <cstddef>
#include <cstdint>

namespace pep::kernels {

// Strided batch of row-major matrices. A stride of 0 broadcasts one matrix
// over the whole batch.
struct BatchShape {
  std::size_t batch = 1;
  std::size_t a_stride = 0;
  std::size_t b_stride = 0;
  std::size_t c_stride = 0;
};

struct Projected {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
  bool visible = false;
};

namespace serial {

// C[b] = A[b] (m x k) * op(B[b]); op(B) is B (k x n) or, with trans_b, the
// transpose of an n x k B.
void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
            bool trans_b, const BatchShape& shape);

// C[b] (m x n) += A[b]^T * B[b] with A[b] r x m and B[b] r x n. With
// c_stride == 0 the whole batch reduces into one C, batch-major then row-major.
void matmul_tn_acc(const double* a, const double* b, double* c, std::size_t r, std::size_t m,
                   std::size_t n, const BatchShape& shape);

// Max-subtracted softmax over each row.
void row_softmax(const double* in, double* out, std::size_t rows, std::size_t cols);

// Pinhole projection through a row-major 3x4 chain. Point i has x,y,z at
// xyz[i*stride + 0..2].
void project(const double* chain, const double* xyz, std::size_t stride, std::size_t n,
             double image_w, double image_h, Projected* out);

// k nearest neighbors excluding self by squared Euclidean distance, ties to
// the lower index. out is n x k.
void knn(const double* xyz, std::size_t stride, std::size_t n, std::size_t k, std::uint32_t* out);

}  // namespace serial

namespace omp {

void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
            bool trans_b, const BatchShape& shape);
void matmul_tn_acc(const double* a, const double* b, double* c, std::size_t r, std::size_t m,
                   std::size_t n, const BatchShape& shape);
void row_softmax(const double* in, double* out, std::size_t rows, std::size_t cols);
void project(const double* chain, const double* xyz, std::size_t stride, std::size_t n,
             double image_w, double image_h, Projected* out);
void knn(const double* xyz, std::size_t stride, std::size_t n, std::size_t k, std::uint32_t* out);

}  // namespace omp

// Thread count for the omp:: kernels; values < 1 restore the OpenMP default.
void set_num_threads(int threads);
int max_threads();

}  // namespace pep::kernels
