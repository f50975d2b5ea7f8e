#pragma once

// Row-major dense kernels shared by the tape primitives.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>

namespace dvn::kernels {

// c(m x n) = a(m x k) * b(k x n)
inline void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c(m x k) += a(m x n) * b(k x n)^T
inline void gemm_a_bt(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += arow[j] * brow[j];
      c[i * k + p] += s;
    }
  }
}

// c(k x n) += a(m x k)^T * b(m x n)
inline void gemm_at_b(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Writes softmax(z / temperature) into p and returns log(sum(exp(z / temperature))).
inline double softmax_row(std::span<const double> z, double temperature, std::span<double> p) {
  double mx = z[0] / temperature;
  for (double v : z) mx = std::max(mx, v / temperature);
  double s = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    p[k] = std::exp(z[k] / temperature - mx);
    s += p[k];
  }
  for (double& v : p) v /= s;
  return mx + std::log(s);
}

}  // namespace dvn::kernels
