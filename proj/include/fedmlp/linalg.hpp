#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace fedmlp {

using Vec = std::vector<double>;

// Dense row-major matrix. All model tensors are small, so a flat
// vector<double> is enough; no external linear algebra needed.
struct Matrix {
  int rows = 0;
  int cols = 0;
  Vec data;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {}

  double& operator()(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }
  size_t size() const { return data.size(); }
};

inline void matvec(const Matrix& a, const Vec& x, Vec& out) {
  if (static_cast<int>(x.size()) != a.cols)
    throw std::invalid_argument("matvec: dimension mismatch");
  out.assign(a.rows, 0.0);
  for (int i = 0; i < a.rows; ++i) {
    double acc = 0.0;
    const double* row = a.data.data() + static_cast<size_t>(i) * a.cols;
    for (int j = 0; j < a.cols; ++j) acc += row[j] * x[j];
    out[i] = acc;
  }
}

inline Vec matvec(const Matrix& a, const Vec& x) {
  Vec out;
  matvec(a, x, out);
  return out;
}

// out += A^T * y
inline void matvec_transposed_add(const Matrix& a, const Vec& y, Vec& out) {
  for (int i = 0; i < a.rows; ++i) {
    const double yi = y[i];
    if (yi == 0.0) continue;
    const double* row = a.data.data() + static_cast<size_t>(i) * a.cols;
    for (int j = 0; j < a.cols; ++j) out[j] += row[j] * yi;
  }
}

inline double squared_distance(const Vec& a, const Vec& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("squared_distance: dimension mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

inline double distance(const Vec& a, const Vec& b) { return std::sqrt(squared_distance(a, b)); }

// Max-shifted softmax; entries are strictly positive and sum to 1.
inline Vec softmax(const Vec& v) {
  Vec out(v.size());
  double mx = v[0];
  for (double x : v) mx = std::max(mx, x);
  double sum = 0.0;
  for (size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return out;
}

inline Vec log_softmax(const Vec& v) {
  double mx = v[0];
  for (double x : v) mx = std::max(mx, x);
  double sum = 0.0;
  for (double x : v) sum += std::exp(x - mx);
  const double lse = mx + std::log(sum);
  Vec out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = v[i] - lse;
  return out;
}

inline Vec scaled(const Vec& v, double s) {
  Vec out(v);
  for (double& x : out) x *= s;
  return out;
}

}  // namespace fedmlp
