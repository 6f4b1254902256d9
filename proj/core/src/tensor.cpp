#include "ctxmt/tensor.hpp"

#include <cmath>
#include <cstring>

#include "ctxmt/error.hpp"

namespace ctxmt {

namespace {

void check(bool ok, const char* what) {
  if (!ok) throw ValidationError(std::string("shape mismatch in ") + what);
}

}  // namespace

void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  check(a.cols == b.rows, "gemm_nn");
  if (!accumulate || c.rows != a.rows || c.cols != b.cols) c.resize(a.rows, b.cols);
  const int m = a.rows, k = a.cols, n = b.cols;
  for (int i = 0; i < m; ++i) {
    const double* arow = a.row(i);
    double* crow = c.row(i);
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b.row(p);
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  check(a.cols == b.cols, "gemm_nt");
  if (c.rows != a.rows || c.cols != b.rows) {
    c.resize(a.rows, b.rows);
  } else if (!accumulate) {
    c.zero();
  }
  const int m = a.rows, k = a.cols, n = b.rows;
  for (int i = 0; i < m; ++i) {
    const double* arow = a.row(i);
    double* crow = c.row(i);
    for (int j = 0; j < n; ++j) {
      const double* brow = b.row(j);
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  check(a.rows == b.rows, "gemm_tn");
  if (!accumulate || c.rows != a.cols || c.cols != b.cols) c.resize(a.cols, b.cols);
  const int k = a.rows, m = a.cols, n = b.cols;
  for (int i = 0; i < k; ++i) {
    const double* arow = a.row(i);
    const double* brow = b.row(i);
    for (int p = 0; p < m; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c.row(p);
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void add_inplace(Matrix& dst, const Matrix& src) {
  check(dst.same_shape(src), "add_inplace");
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
}

void axpy_inplace(Matrix& dst, double alpha, const Matrix& src) {
  check(dst.same_shape(src), "axpy_inplace");
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += alpha * src.data[i];
}

void scale_inplace(Matrix& m, double alpha) {
  for (double& v : m.data) v *= alpha;
}

void add_row_vector(Matrix& dst, const Matrix& v) {
  check(v.rows == 1 && v.cols == dst.cols, "add_row_vector");
  for (int r = 0; r < dst.rows; ++r) {
    double* row = dst.row(r);
    const double* vrow = v.row(0);
    for (int c = 0; c < dst.cols; ++c) row[c] += vrow[c];
  }
}

bool all_finite(const Matrix& m) {
  for (double v : m.data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace ctxmt
