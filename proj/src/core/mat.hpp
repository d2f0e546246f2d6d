// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "core/common.hpp"

namespace linkedout {

// Row-major dense matrix. Vectors are 1 x n.
template <class T>
struct Mat {
  size_t rows = 0, cols = 0;
  std::vector<T> v;

  Mat() = default;
  Mat(size_t r, size_t c) : rows(r), cols(c), v(r * c, T(0)) {}
  Mat(size_t r, size_t c, T fill) : rows(r), cols(c), v(r * c, fill) {}

  T& operator()(size_t r, size_t c) { return v[r * cols + c]; }
  const T& operator()(size_t r, size_t c) const { return v[r * cols + c]; }
  T* row(size_t r) { return v.data() + r * cols; }
  const T* row(size_t r) const { return v.data() + r * cols; }
  size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }

  bool all_finite() const {
    for (T x : v)
      if (!std::isfinite(double(x))) return false;
    return true;
  }
};

using MatF = Mat<float>;
using MatD = Mat<double>;

inline MatD to_double(const MatF& a) {
  MatD out(a.rows, a.cols);
  for (size_t i = 0; i < a.v.size(); ++i) out.v[i] = double(a.v[i]);
  return out;
}

inline MatF to_float(const MatD& a) {
  MatF out(a.rows, a.cols);
  for (size_t i = 0; i < a.v.size(); ++i) out.v[i] = float(a.v[i]);
  return out;
}

// out = a * b
template <class T>
void matmul(const Mat<T>& a, const Mat<T>& b, Mat<T>& out) {
  require(a.cols == b.rows, ErrorCode::shape, "matmul: inner dimensions differ");
  out = Mat<T>(a.rows, b.cols);
  for (size_t i = 0; i < a.rows; ++i) {
    const T* arow = a.row(i);
    T* orow = out.row(i);
    for (size_t k = 0; k < a.cols; ++k) {
      T aik = arow[k];
      const T* brow = b.row(k);
      for (size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
}

}  // namespace linkedout
