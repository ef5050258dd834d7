#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "radet/core/dual.hpp"
#include "radet/core/errors.hpp"

namespace radet {

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  double frobenius_sq() const {
    double s = 0.0;
    for (double x : data) s += x * x;
    return s;
  }

  bool operator==(const Matrix&) const = default;
};

/// y = A x
inline std::vector<double> matvec(const Matrix& a, std::span<const double> x) {
  if (x.size() != a.cols) throw ConfigError("matvec: dimension mismatch");
  std::vector<double> y(a.rows, 0.0);
  for (std::size_t r = 0; r < a.rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < a.cols; ++c) s += a(r, c) * x[c];
    y[r] = s;
  }
  return y;
}

/// In-place Cholesky solve of the SPD system S z = b (S is k x k, row-major
/// in a flat vector). Templated so it can run on dual numbers.
template <class T>
void cholesky_solve(std::vector<T>& s, std::vector<T>& b, std::size_t k) {
  using std::sqrt;
  for (std::size_t j = 0; j < k; ++j) {
    T diag = s[j * k + j];
    for (std::size_t p = 0; p < j; ++p) diag -= s[j * k + p] * s[j * k + p];
    if (!(value_of(diag) > 0.0)) throw NumericError("cholesky_solve: matrix not positive definite");
    const T l = sqrt(diag);
    s[j * k + j] = l;
    for (std::size_t i = j + 1; i < k; ++i) {
      T acc = s[i * k + j];
      for (std::size_t p = 0; p < j; ++p) acc -= s[i * k + p] * s[j * k + p];
      s[i * k + j] = acc / l;
    }
  }
  for (std::size_t i = 0; i < k; ++i) {
    T acc = b[i];
    for (std::size_t p = 0; p < i; ++p) acc -= s[i * k + p] * b[p];
    b[i] = acc / s[i * k + i];
  }
  for (std::size_t ii = k; ii-- > 0;) {
    T acc = b[ii];
    for (std::size_t p = ii + 1; p < k; ++p) acc -= s[p * k + ii] * b[p];
    b[ii] = acc / s[ii * k + ii];
  }
}

}  // namespace radet
