#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "sgde/errors.hpp"

namespace sgde {

// Dense row-major matrix of doubles. Deliberately minimal; the math in this
// library is all explicit loops over rows.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const {
    return {data.data() + i * cols, cols};
  }

  bool empty() const { return rows == 0 || cols == 0; }

  bool all_finite() const {
    for (double v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  // New matrix holding the selected rows, in the given order.
  Matrix select_rows(std::span<const std::size_t> idx) const {
    Matrix out(idx.size(), cols);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= rows) throw ShapeError("row index out of range");
      std::copy(row(idx[i]).begin(), row(idx[i]).end(), out.row(i).begin());
    }
    return out;
  }

  void append_row(std::span<const double> r) {
    if (rows == 0 && cols == 0) cols = r.size();
    if (r.size() != cols) throw ShapeError("appended row has wrong width");
    data.insert(data.end(), r.begin(), r.end());
    ++rows;
  }
};

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace sgde
