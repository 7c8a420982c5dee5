#pragma once

#include <cstddef>
#include <vector>

namespace cxr {

// Dense NCHW activation tensor, double precision throughout so gradient
// checks are meaningful.
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<double> data;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_),
        data(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.0) {}

  std::size_t size() const { return data.size(); }

  std::size_t index(int b, int ch, int y, int x) const {
    return ((static_cast<std::size_t>(b) * c + ch) * h + y) * w + x;
  }
  double& at(int b, int ch, int y, int x) { return data[index(b, ch, y, x)]; }
  double at(int b, int ch, int y, int x) const { return data[index(b, ch, y, x)]; }

  double* plane(int b, int ch) { return data.data() + index(b, ch, 0, 0); }
  const double* plane(int b, int ch) const { return data.data() + index(b, ch, 0, 0); }

  bool same_shape(const Tensor4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

// Row-major 2-D buffer for head outputs and per-sample rows.
struct Matrix {
  int rows = 0, cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
};

}  // namespace cxr
