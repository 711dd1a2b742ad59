#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace blockattn {

// Row-major dense matrix of doubles. All model math at desk scale runs in
// 64-bit so equivalence oracles can use tight tolerances.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

  double& operator()(int r, int c) {
    assert(r >= 0 && r < rows && c >= 0 && c < cols);
    return a[static_cast<std::size_t>(r) * cols + c];
  }
  double operator()(int r, int c) const {
    assert(r >= 0 && r < rows && c >= 0 && c < cols);
    return a[static_cast<std::size_t>(r) * cols + c];
  }

  double* row(int r) { return a.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return a.data() + static_cast<std::size_t>(r) * cols; }

  void zero() { a.assign(a.size(), 0.0); }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

using Vec = std::vector<double>;

}  // namespace blockattn
