#include "seqground/grounder/tensor.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

namespace seqground::grounder {

void Matrix::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void matmul(const Matrix& a, const Matrix& b, Matrix& out) {
  assert(a.cols() == b.rows());
  if (out.rows() != a.rows() || out.cols() != b.cols()) out = Matrix(a.rows(), b.cols());
  out.fill(0.0);
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* dst = out.data().data() + i * n;
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const double* src = b.data().data() + k * n;
      for (std::size_t j = 0; j < n; ++j) dst[j] += aik * src[j];
    }
  }
}

void matmul_at_b_acc(const Matrix& a, const Matrix& grad_out, Matrix& grad_b) {
  assert(a.rows() == grad_out.rows());
  const std::size_t n = grad_out.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* g = grad_out.data().data() + i * n;
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      double* dst = grad_b.data().data() + k * n;
      for (std::size_t j = 0; j < n; ++j) dst[j] += aik * g[j];
    }
  }
}

void matmul_a_bt_acc(const Matrix& grad_out, const Matrix& b, Matrix& grad_a) {
  assert(grad_out.cols() == b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < grad_out.rows(); ++i) {
    const double* g = grad_out.data().data() + i * n;
    for (std::size_t k = 0; k < b.rows(); ++k) {
      const double* brow = b.data().data() + k * n;
      double sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) sum += g[j] * brow[j];
      grad_a(i, k) += sum;
    }
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
  return sum;
}

void softmax_inplace(std::span<double> values) {
  if (values.empty()) return;
  const double peak = *std::max_element(values.begin(), values.end());
  double total = 0.0;
  for (auto& v : values) {
    v = std::exp(v - peak);
    total += v;
  }
  for (auto& v : values) v /= total;
}

}  // namespace seqground::grounder
