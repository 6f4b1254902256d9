#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace ctxmt {

// Dense row-major double matrix. All model math runs in double so gradient
// checks against central differences are meaningful.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const {
    return data.data() + static_cast<std::size_t>(r) * cols;
  }
  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const {
    return data[static_cast<std::size_t>(r) * cols + c];
  }
  std::size_t size() const { return data.size(); }

  // Reshapes and zero-fills.
  void resize(int r, int c) {
    rows = r;
    cols = c;
    data.assign(static_cast<std::size_t>(r) * c, 0.0);
  }
  void zero() { std::fill(data.begin(), data.end(), 0.0); }

  bool same_shape(const Matrix& other) const {
    return rows == other.rows && cols == other.cols;
  }
};

// C = A * B (or C += with accumulate). A: m x k, B: k x n.
void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
// C = A * B^T. A: m x k, B: n x k.
void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
// C = A^T * B. A: k x m, B: k x n.
void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);

void add_inplace(Matrix& dst, const Matrix& src);            // dst += src
void axpy_inplace(Matrix& dst, double alpha, const Matrix& src);  // dst += alpha*src
void scale_inplace(Matrix& m, double alpha);

// dst[r] += v for every row r. v: 1 x cols.
void add_row_vector(Matrix& dst, const Matrix& v);

bool all_finite(const Matrix& m);

}  // namespace ctxmt
