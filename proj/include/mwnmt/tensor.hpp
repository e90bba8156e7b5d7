#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace mwnmt {

// exp as 2^k * p(r) with r in [-ln2/2, ln2/2]; relative error < 1e-14.
// Straight-line arithmetic (magic-number rounding, exponent splice, ternary
// saturation) so elementwise loops vectorize. Saturates to exactly 0 below the
// normal range and to +inf above it, which keeps sigmoid/tanh saturation exact.
inline double fast_exp(double x) {
  constexpr double kLog2e = 1.4426950408889634074;
  constexpr double kLn2Hi = 6.93147180369123816490e-01;
  constexpr double kLn2Lo = 1.90821492927058770002e-10;
  constexpr double kShift = 6755399441055744.0;  // 1.5 * 2^52
  const double xc = x > 709.0 ? 709.0 : (x < -708.0 ? -708.0 : x);
  const double kd = xc * kLog2e + kShift;
  const std::int64_t ki = std::bit_cast<std::int64_t>(kd);
  const double kf = kd - kShift;
  const double r = (xc - kf * kLn2Hi) - kf * kLn2Lo;
  double p = 1.0 / 39916800;
  p = p * r + 1.0 / 3628800;
  p = p * r + 1.0 / 362880;
  p = p * r + 1.0 / 40320;
  p = p * r + 1.0 / 5040;
  p = p * r + 1.0 / 720;
  p = p * r + 1.0 / 120;
  p = p * r + 1.0 / 24;
  p = p * r + 1.0 / 6;
  p = p * r + 0.5;
  p = p * r + 1.0;
  p = p * r + 1.0;
  const double scaled = std::bit_cast<double>(std::bit_cast<std::int64_t>(p) + (ki << 52));
  const double hi = x > 709.0 ? std::numeric_limits<double>::infinity() : scaled;
  return x < -708.0 ? 0.0 : hi;
}

inline double fast_sigmoid(double x) { return 1.0 / (1.0 + fast_exp(-x)); }

inline double fast_tanh(double x) {
  const double a = std::fabs(x);
  const double t = fast_exp(-2.0 * a);
  const double v = (1.0 - t) / (1.0 + t);
  return x < 0.0 ? -v : v;
}

inline void vexp(double* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) p[i] = fast_exp(p[i]);
}

inline void vtanh(double* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) p[i] = fast_tanh(p[i]);
}

inline void vsigmoid(double* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) p[i] = fast_sigmoid(p[i]);
}

/// Dense row-major matrix of 64-bit reals. Scalars are 1x1, row vectors 1xN.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {
    if (rows == 0 || cols == 0) {
      throw std::invalid_argument("Tensor: extents must be positive");
    }
  }

  static Tensor scalar(double v) {
    Tensor t(1, 1);
    t.data_[0] = v;
    return t;
  }

  static Tensor row(std::vector<double> values) {
    Tensor t;
    t.rows_ = 1;
    t.cols_ = values.size();
    if (t.cols_ == 0) throw std::invalid_argument("Tensor: extents must be positive");
    t.data_ = std::move(values);
    return t;
  }

  static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> values) {
    Tensor t(rows, cols);
    if (values.size() != rows * cols) {
      throw std::invalid_argument("Tensor: data length does not match shape");
    }
    t.data_ = std::move(values);
    return t;
  }

  static Tensor full(std::size_t rows, std::size_t cols, double v) {
    Tensor t(rows, cols);
    t.fill(v);
    return t;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::vector<std::size_t> shape() const { return {rows_, cols_}; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double* row_ptr(std::size_t r) { return data_.data() + r * cols_; }
  const double* row_ptr(std::size_t r) const { return data_.data() + r * cols_; }

  const std::vector<double>& vec() const { return data_; }
  std::vector<double>& vec() { return data_; }

  void fill(double v) {
    for (double& x : data_) x = v;
  }

  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool all_finite() const {
    for (double x : data_) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  }

  std::string shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline std::string shape_mismatch(const std::string& op, const Tensor& a, const Tensor& b) {
  return op + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str();
}

inline void matvec_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k);

// C(m x n) += A(m x k) * B(k x n). Rows of A are processed four at a time so
// each row of B is loaded once per group; per-element accumulation order is
// unchanged, so results are bit-identical to the plain triple loop.
inline void gemm_nn_acc(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t k, std::size_t n) {
  if (n == 1) {
    matvec_acc(a, b, c, m, k);
    return;
  }
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = a + i * k;
    const double* a1 = a0 + k;
    const double* a2 = a1 + k;
    const double* a3 = a2 + k;
    double* c0 = c + i * n;
    double* c1 = c0 + n;
    double* c2 = c1 + n;
    double* c3 = c2 + n;
    for (std::size_t l = 0; l < k; ++l) {
      const double* brow = b + l * n;
      const double v0 = a0[l], v1 = a1[l], v2 = a2[l], v3 = a3[l];
      for (std::size_t j = 0; j < n; ++j) {
        const double bj = brow[j];
        c0[j] += v0 * bj;
        c1[j] += v1 * bj;
        c2[j] += v2 * bj;
        c3[j] += v3 * bj;
      }
    }
  }
  for (; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t l = 0; l < k; ++l) {
      const double av = arow[l];
      const double* brow = b + l * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C(m x 1) += A(m x k) * b(k); split accumulators so the reduction vectorizes.
inline void matvec_acc(const double* a, const double* b, double* c,
                       std::size_t m, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t l = 0;
    for (; l + 4 <= k; l += 4) {
      s0 += arow[l] * b[l];
      s1 += arow[l + 1] * b[l + 1];
      s2 += arow[l + 2] * b[l + 2];
      s3 += arow[l + 3] * b[l + 3];
    }
    double s = (s0 + s1) + (s2 + s3);
    for (; l < k; ++l) s += arow[l] * b[l];
    c[i] += s;
  }
}

// C(m x n) += A(m x k) * B^T, with B stored n x k. Goes through a transposed
// copy of B so the inner loops stay stride-1.
inline void gemm_nt_acc(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t k, std::size_t n) {
  if (n == 1) {
    matvec_acc(a, b, c, m, k);
    return;
  }
  thread_local std::vector<double> scratch;
  scratch.resize(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t l = 0; l < k; ++l) scratch[l * n + j] = b[j * k + l];
  }
  gemm_nn_acc(a, scratch.data(), c, m, k, n);
}

// C(k x n) += A^T * G, with A stored m x k and G stored m x n
inline void gemm_tn_acc(const double* a, const double* g, double* c,
                        std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t l = 0; l < m; ++l) {
    const double* arow = a + l * k;
    const double* grow = g + l * n;
    for (std::size_t i = 0; i < k; ++i) {
      const double av = arow[i];
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

inline Tensor matmul_plain(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument(shape_mismatch("matmul", a, b));
  Tensor c(a.rows(), b.cols());
  gemm_nn_acc(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols());
  return c;
}

inline std::uint64_t fnv1a64(const void* bytes, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t digest_tensor(const Tensor& t, std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(t.data(), t.size() * sizeof(double), h);
}

}  // namespace mwnmt
