#pragma once
// Reverse-mode autodiff over dense row-major matrices.
//
// DualTensor is a shared handle to values plus a lazily allocated gradient
// buffer. Operations run eagerly; when a Tape is supplied and any operand
// wants gradients, the op pushes a closure that replays its backward rule.
// Tape::backward walks the closures once in reverse, accumulating into
// operand gradients, so shared subexpressions add their contributions.
//
// The same templates serve float64 (property tests, gradient checks) and
// float32 (training); the element type is the only switch.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "avey/common.hpp"

#ifdef AVEY_USE_CBLAS
#include <cblas.h>
#endif

namespace avey {

// ---------------------------------------------------------------------------
// GEMM backend. C = alpha * op(A) * op(B) + beta * C, row-major.

namespace detail {

#ifdef AVEY_USE_CBLAS
inline void blas_gemm(bool ta, bool tb, std::size_t m, std::size_t n,
                      std::size_t kk, float alpha, const float* A,
                      std::size_t lda, const float* B, std::size_t ldb,
                      float beta, float* C, std::size_t ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
              tb ? CblasTrans : CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(kk), alpha, A,
              static_cast<int>(lda), B, static_cast<int>(ldb), beta, C,
              static_cast<int>(ldc));
}
inline void blas_gemm(bool ta, bool tb, std::size_t m, std::size_t n,
                      std::size_t kk, double alpha, const double* A,
                      std::size_t lda, const double* B, std::size_t ldb,
                      double beta, double* C, std::size_t ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
              tb ? CblasTrans : CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(kk), alpha, A,
              static_cast<int>(lda), B, static_cast<int>(ldb), beta, C,
              static_cast<int>(ldc));
}
#endif

template <typename Real>
void loop_gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t kk,
               Real alpha, const Real* A, std::size_t lda, const Real* B,
               std::size_t ldb, Real beta, Real* C, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    Real* crow = C + i * ldc;
    if (beta == Real(0)) std::fill(crow, crow + n, Real(0));
    else if (beta != Real(1))
      for (std::size_t j = 0; j < n; ++j) crow[j] *= beta;
    for (std::size_t p = 0; p < kk; ++p) {
      Real a = ta ? A[p * lda + i] : A[i * lda + p];
      a *= alpha;
      if (a == Real(0)) continue;
      if (!tb) {
        const Real* brow = B + p * ldb;
        for (std::size_t j = 0; j < n; ++j) crow[j] += a * brow[j];
      } else {
        for (std::size_t j = 0; j < n; ++j) crow[j] += a * B[j * ldb + p];
      }
    }
  }
}

template <typename Real>
void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t kk,
          Real alpha, const Real* A, std::size_t lda, const Real* B,
          std::size_t ldb, Real beta, Real* C, std::size_t ldc) {
#ifdef AVEY_USE_CBLAS
  blas_gemm(ta, tb, m, n, kk, alpha, A, lda, B, ldb, beta, C, ldc);
#else
  loop_gemm(ta, tb, m, n, kk, alpha, A, lda, B, ldb, beta, C, ldc);
#endif
}

}  // namespace detail

// ---------------------------------------------------------------------------

template <typename Real>
struct TensorNode {
  std::size_t rows = 0, cols = 0;
  std::vector<Real> v;  // row-major values
  std::vector<Real> g;  // gradient, allocated on first touch
  bool requires_grad = false;
};

template <typename Real>
class DualTensor {
 public:
  DualTensor() = default;
  DualTensor(std::size_t rows, std::size_t cols, bool requires_grad = false)
      : n_(std::make_shared<TensorNode<Real>>()) {
    n_->rows = rows;
    n_->cols = cols;
    n_->v.assign(rows * cols, Real(0));
    n_->requires_grad = requires_grad;
  }

  static DualTensor from(std::size_t rows, std::size_t cols,
                         std::vector<Real> vals, bool requires_grad = false) {
    require(vals.size() == rows * cols, "DualTensor::from: value count " +
                                            std::to_string(vals.size()) +
                                            " does not fill " +
                                            std::to_string(rows) + "x" +
                                            std::to_string(cols));
    DualTensor t(rows, cols, requires_grad);
    t.n_->v = std::move(vals);
    return t;
  }

  bool defined() const { return static_cast<bool>(n_); }
  std::size_t rows() const { return n_->rows; }
  std::size_t cols() const { return n_->cols; }
  std::size_t size() const { return n_->v.size(); }

  Real* data() { return n_->v.data(); }
  const Real* data() const { return n_->v.data(); }
  std::vector<Real>& values() { return n_->v; }
  const std::vector<Real>& values() const { return n_->v; }

  Real& at(std::size_t i, std::size_t j) { return n_->v[i * n_->cols + j]; }
  Real at(std::size_t i, std::size_t j) const {
    return n_->v[i * n_->cols + j];
  }

  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool rg) { n_->requires_grad = rg; }

  bool grad_allocated() const { return !n_->g.empty(); }
  // Gradient buffer, zero-filled on first access.
  Real* grad() {
    if (n_->g.empty()) n_->g.assign(n_->v.size(), Real(0));
    return n_->g.data();
  }
  std::vector<Real>& grad_values() {
    grad();
    return n_->g;
  }
  void zero_grad() {
    if (!n_->g.empty()) std::fill(n_->g.begin(), n_->g.end(), Real(0));
  }

  bool same_node(const DualTensor& o) const { return n_ == o.n_; }

 private:
  std::shared_ptr<TensorNode<Real>> n_;
};

// ---------------------------------------------------------------------------

template <typename Real>
class Tape {
 public:
  void record(std::function<void()> back) { ops_.push_back(std::move(back)); }

  std::size_t size() const { return ops_.size(); }

  // Seeds d(loss)/d(loss) = 1 and replays every recorded op in reverse.
  // The tape may be consumed exactly once between clears.
  void backward(DualTensor<Real> loss) {
    require(loss.rows() == 1 && loss.cols() == 1,
            "Tape::backward: loss must be 1x1, got " +
                std::to_string(loss.rows()) + "x" +
                std::to_string(loss.cols()));
    require(!consumed_, "Tape::backward: tape already consumed; clear first");
    consumed_ = true;
    loss.grad()[0] += Real(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  void clear() {
    ops_.clear();
    consumed_ = false;
  }

 private:
  std::vector<std::function<void()>> ops_;
  bool consumed_ = false;
};

// True when the op should push a backward closure.
template <typename Real>
inline bool tracing(Tape<Real>* tape, bool any_rg) {
  return tape != nullptr && any_rg;
}

// ---------------------------------------------------------------------------
// Operations. Each returns a fresh tensor; backward rules accumulate with +=.

// C = A * B, with A (r x n) and B (n x c).
template <typename Real>
DualTensor<Real> matmul(Tape<Real>* tape, DualTensor<Real> A,
                        DualTensor<Real> B) {
  require(A.cols() == B.rows(),
          "matmul: inner dims differ, " + std::to_string(A.rows()) + "x" +
              std::to_string(A.cols()) + " * " + std::to_string(B.rows()) +
              "x" + std::to_string(B.cols()));
  DualTensor<Real> C(A.rows(), B.cols());
  if (A.rows() && B.cols() && A.cols())
    detail::gemm(false, false, A.rows(), B.cols(), A.cols(), Real(1), A.data(),
                 A.cols(), B.data(), B.cols(), Real(0), C.data(), C.cols());
  bool rg = A.requires_grad() || B.requires_grad();
  if (tracing(tape, rg)) {
    C.set_requires_grad(true);
    tape->record([A, B, C]() mutable {
      if (A.requires_grad() && A.size())
        detail::gemm(false, true, A.rows(), A.cols(), B.cols(), Real(1),
                     C.grad(), C.cols(), B.data(), B.cols(), Real(1), A.grad(),
                     A.cols());
      if (B.requires_grad() && B.size())
        detail::gemm(true, false, B.rows(), B.cols(), A.rows(), Real(1),
                     A.data(), A.cols(), C.grad(), C.cols(), Real(1), B.grad(),
                     B.cols());
    });
  }
  return C;
}

// C = A * B^T, with A (r x n) and B (c x n).
template <typename Real>
DualTensor<Real> matmul_nt(Tape<Real>* tape, DualTensor<Real> A,
                           DualTensor<Real> B) {
  require(A.cols() == B.cols(),
          "matmul_nt: inner dims differ, " + std::to_string(A.rows()) + "x" +
              std::to_string(A.cols()) + " * (" + std::to_string(B.rows()) +
              "x" + std::to_string(B.cols()) + ")^T");
  DualTensor<Real> C(A.rows(), B.rows());
  if (A.rows() && B.rows() && A.cols())
    detail::gemm(false, true, A.rows(), B.rows(), A.cols(), Real(1), A.data(),
                 A.cols(), B.data(), B.cols(), Real(0), C.data(), C.cols());
  bool rg = A.requires_grad() || B.requires_grad();
  if (tracing(tape, rg)) {
    C.set_requires_grad(true);
    tape->record([A, B, C]() mutable {
      if (A.requires_grad() && A.size())
        detail::gemm(false, false, A.rows(), A.cols(), B.rows(), Real(1),
                     C.grad(), C.cols(), B.data(), B.cols(), Real(1), A.grad(),
                     A.cols());
      if (B.requires_grad() && B.size())
        detail::gemm(true, false, B.rows(), B.cols(), A.rows(), Real(1),
                     C.grad(), C.cols(), A.data(), A.cols(), Real(1), B.grad(),
                     B.cols());
    });
  }
  return C;
}

template <typename Real>
DualTensor<Real> add(Tape<Real>* tape, DualTensor<Real> A, DualTensor<Real> B) {
  require(A.rows() == B.rows() && A.cols() == B.cols(),
          "add: shape mismatch " + std::to_string(A.rows()) + "x" +
              std::to_string(A.cols()) + " vs " + std::to_string(B.rows()) +
              "x" + std::to_string(B.cols()));
  DualTensor<Real> C(A.rows(), A.cols());
  for (std::size_t i = 0; i < C.size(); ++i)
    C.data()[i] = A.data()[i] + B.data()[i];
  bool rg = A.requires_grad() || B.requires_grad();
  if (tracing(tape, rg)) {
    C.set_requires_grad(true);
    tape->record([A, B, C]() mutable {
      if (A.requires_grad()) {
        Real* ga = A.grad();
        for (std::size_t i = 0; i < C.size(); ++i) ga[i] += C.grad()[i];
      }
      if (B.requires_grad()) {
        Real* gb = B.grad();
        for (std::size_t i = 0; i < C.size(); ++i) gb[i] += C.grad()[i];
      }
    });
  }
  return C;
}

// Adds a 1 x c row vector to every row.
template <typename Real>
DualTensor<Real> add_rowvec(Tape<Real>* tape, DualTensor<Real> A,
                            DualTensor<Real> b) {
  require(b.rows() == 1 && b.cols() == A.cols(),
          "add_rowvec: bias must be 1x" + std::to_string(A.cols()) + ", got " +
              std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  DualTensor<Real> C(A.rows(), A.cols());
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j)
      C.at(i, j) = A.at(i, j) + b.at(0, j);
  bool rg = A.requires_grad() || b.requires_grad();
  if (tracing(tape, rg)) {
    C.set_requires_grad(true);
    tape->record([A, b, C]() mutable {
      if (A.requires_grad()) {
        Real* ga = A.grad();
        for (std::size_t i = 0; i < C.size(); ++i) ga[i] += C.grad()[i];
      }
      if (b.requires_grad()) {
        Real* gb = b.grad();
        for (std::size_t i = 0; i < C.rows(); ++i)
          for (std::size_t j = 0; j < C.cols(); ++j)
            gb[j] += C.grad()[i * C.cols() + j];
      }
    });
  }
  return C;
}

template <typename Real>
DualTensor<Real> hadamard(Tape<Real>* tape, DualTensor<Real> A,
                          DualTensor<Real> B) {
  require(A.rows() == B.rows() && A.cols() == B.cols(),
          "hadamard: shape mismatch " + std::to_string(A.rows()) + "x" +
              std::to_string(A.cols()) + " vs " + std::to_string(B.rows()) +
              "x" + std::to_string(B.cols()));
  DualTensor<Real> C(A.rows(), A.cols());
  for (std::size_t i = 0; i < C.size(); ++i)
    C.data()[i] = A.data()[i] * B.data()[i];
  bool rg = A.requires_grad() || B.requires_grad();
  if (tracing(tape, rg)) {
    C.set_requires_grad(true);
    tape->record([A, B, C]() mutable {
      if (A.requires_grad()) {
        Real* ga = A.grad();
        for (std::size_t i = 0; i < C.size(); ++i)
          ga[i] += C.grad()[i] * B.data()[i];
      }
      if (B.requires_grad()) {
        Real* gb = B.grad();
        for (std::size_t i = 0; i < C.size(); ++i)
          gb[i] += C.grad()[i] * A.data()[i];
      }
    });
  }
  return C;
}

// Elementwise product with a constant 0/1 (or arbitrary) mask.
template <typename Real>
DualTensor<Real> hadamard_mask(Tape<Real>* tape, DualTensor<Real> A,
                               const std::vector<Real>& mask) {
  require(mask.size() == A.size(), "hadamard_mask: mask size " +
                                       std::to_string(mask.size()) +
                                       " vs tensor " +
                                       std::to_string(A.size()));
  DualTensor<Real> C(A.rows(), A.cols());
  for (std::size_t i = 0; i < C.size(); ++i)
    C.data()[i] = A.data()[i] * mask[i];
  if (tracing(tape, A.requires_grad())) {
    C.set_requires_grad(true);
    tape->record([A, C, mask]() mutable {
      Real* ga = A.grad();
      for (std::size_t i = 0; i < C.size(); ++i) ga[i] += C.grad()[i] * mask[i];
    });
  }
  return C;
}

template <typename Real>
DualTensor<Real> scale(Tape<Real>* tape, DualTensor<Real> A, Real c) {
  DualTensor<Real> C(A.rows(), A.cols());
  for (std::size_t i = 0; i < C.size(); ++i) C.data()[i] = A.data()[i] * c;
  if (tracing(tape, A.requires_grad())) {
    C.set_requires_grad(true);
    tape->record([A, C, c]() mutable {
      Real* ga = A.grad();
      for (std::size_t i = 0; i < C.size(); ++i) ga[i] += C.grad()[i] * c;
    });
  }
  return C;
}

// Squared ReLU: y = max(0, x)^2, dy/dx = 2 * max(0, x).
template <typename Real>
DualTensor<Real> relu2(Tape<Real>* tape, DualTensor<Real> A) {
  DualTensor<Real> C(A.rows(), A.cols());
  for (std::size_t i = 0; i < C.size(); ++i) {
    Real r = std::max(Real(0), A.data()[i]);
    C.data()[i] = r * r;
  }
  if (tracing(tape, A.requires_grad())) {
    C.set_requires_grad(true);
    tape->record([A, C]() mutable {
      Real* ga = A.grad();
      for (std::size_t i = 0; i < C.size(); ++i)
        ga[i] += C.grad()[i] * Real(2) * std::max(Real(0), A.data()[i]);
    });
  }
  return C;
}

// Row-wise RMS normalization with a learned per-column gain:
// y_ij = gain_j * x_ij / sqrt(mean_j(x_ij^2) + eps).
inline constexpr double kRmsNormEps = 1e-6;

template <typename Real>
DualTensor<Real> rmsnorm(Tape<Real>* tape, DualTensor<Real> X,
                         DualTensor<Real> gain) {
  require(gain.rows() == 1 && gain.cols() == X.cols(),
          "rmsnorm: gain must be 1x" + std::to_string(X.cols()) + ", got " +
              std::to_string(gain.rows()) + "x" +
              std::to_string(gain.cols()));
  std::size_t R = X.rows(), Cc = X.cols();
  DualTensor<Real> Y(R, Cc);
  std::vector<Real> inv(R);
  for (std::size_t i = 0; i < R; ++i) {
    Real ss = 0;
    for (std::size_t j = 0; j < Cc; ++j) ss += X.at(i, j) * X.at(i, j);
    inv[i] = Real(1) / std::sqrt(ss / Real(Cc) + Real(kRmsNormEps));
    for (std::size_t j = 0; j < Cc; ++j)
      Y.at(i, j) = gain.at(0, j) * X.at(i, j) * inv[i];
  }
  bool rg = X.requires_grad() || gain.requires_grad();
  if (tracing(tape, rg)) {
    Y.set_requires_grad(true);
    tape->record([X, gain, Y, inv]() mutable {
      std::size_t R = X.rows(), Cc = X.cols();
      for (std::size_t i = 0; i < R; ++i) {
        const Real* x = X.data() + i * Cc;
        const Real* dy = Y.grad() + i * Cc;
        if (gain.requires_grad()) {
          Real* gg = gain.grad();
          for (std::size_t j = 0; j < Cc; ++j)
            gg[j] += dy[j] * x[j] * inv[i];
        }
        if (X.requires_grad()) {
          Real dot = 0;  // sum_j dy_j * gain_j * x_j
          for (std::size_t j = 0; j < Cc; ++j)
            dot += dy[j] * gain.at(0, j) * x[j];
          Real k = dot * inv[i] * inv[i] * inv[i] / Real(Cc);
          Real* gx = X.grad() + i * Cc;
          for (std::size_t j = 0; j < Cc; ++j)
            gx[j] += dy[j] * gain.at(0, j) * inv[i] - k * x[j];
        }
      }
    });
  }
  return Y;
}

// Rows scaled to unit Euclidean norm; all-zero rows stay zero (and carry
// zero gradient).
template <typename Real>
DualTensor<Real> row_l2_normalize(Tape<Real>* tape, DualTensor<Real> X) {
  std::size_t R = X.rows(), Cc = X.cols();
  DualTensor<Real> Y(R, Cc);
  std::vector<Real> inv(R, Real(0));
  for (std::size_t i = 0; i < R; ++i) {
    Real ss = 0;
    for (std::size_t j = 0; j < Cc; ++j) ss += X.at(i, j) * X.at(i, j);
    if (ss > Real(0)) {
      inv[i] = Real(1) / std::sqrt(ss);
      for (std::size_t j = 0; j < Cc; ++j) Y.at(i, j) = X.at(i, j) * inv[i];
    }
  }
  if (tracing(tape, X.requires_grad())) {
    Y.set_requires_grad(true);
    tape->record([X, Y, inv]() mutable {
      std::size_t R = X.rows(), Cc = X.cols();
      for (std::size_t i = 0; i < R; ++i) {
        if (inv[i] == Real(0)) continue;
        const Real* x = X.data() + i * Cc;
        const Real* dy = Y.grad() + i * Cc;
        Real dot = 0;
        for (std::size_t j = 0; j < Cc; ++j) dot += dy[j] * x[j];
        Real k = dot * inv[i] * inv[i] * inv[i];
        Real* gx = X.grad() + i * Cc;
        for (std::size_t j = 0; j < Cc; ++j)
          gx[j] += dy[j] * inv[i] - k * x[j];
      }
    });
  }
  return Y;
}

template <typename Real>
DualTensor<Real> concat_cols(Tape<Real>* tape, DualTensor<Real> A,
                             DualTensor<Real> B) {
  require(A.rows() == B.rows(),
          "concat_cols: row counts differ, " + std::to_string(A.rows()) +
              " vs " + std::to_string(B.rows()));
  DualTensor<Real> C(A.rows(), A.cols() + B.cols());
  for (std::size_t i = 0; i < A.rows(); ++i) {
    std::copy(A.data() + i * A.cols(), A.data() + (i + 1) * A.cols(),
              C.data() + i * C.cols());
    std::copy(B.data() + i * B.cols(), B.data() + (i + 1) * B.cols(),
              C.data() + i * C.cols() + A.cols());
  }
  bool rg = A.requires_grad() || B.requires_grad();
  if (tracing(tape, rg)) {
    C.set_requires_grad(true);
    tape->record([A, B, C]() mutable {
      for (std::size_t i = 0; i < A.rows(); ++i) {
        const Real* gc = C.grad() + i * C.cols();
        if (A.requires_grad()) {
          Real* ga = A.grad() + i * A.cols();
          for (std::size_t j = 0; j < A.cols(); ++j) ga[j] += gc[j];
        }
        if (B.requires_grad()) {
          Real* gb = B.grad() + i * B.cols();
          for (std::size_t j = 0; j < B.cols(); ++j) gb[j] += gc[A.cols() + j];
        }
      }
    });
  }
  return C;
}

// Columns [c0, c1) of A.
template <typename Real>
DualTensor<Real> slice_cols(Tape<Real>* tape, DualTensor<Real> A,
                            std::size_t c0, std::size_t c1) {
  require(c0 <= c1 && c1 <= A.cols(),
          "slice_cols: range [" + std::to_string(c0) + ", " +
              std::to_string(c1) + ") outside width " +
              std::to_string(A.cols()));
  DualTensor<Real> C(A.rows(), c1 - c0);
  for (std::size_t i = 0; i < A.rows(); ++i)
    std::copy(A.data() + i * A.cols() + c0, A.data() + i * A.cols() + c1,
              C.data() + i * C.cols());
  if (tracing(tape, A.requires_grad())) {
    C.set_requires_grad(true);
    tape->record([A, C, c0]() mutable {
      for (std::size_t i = 0; i < A.rows(); ++i) {
        Real* ga = A.grad() + i * A.cols() + c0;
        const Real* gc = C.grad() + i * C.cols();
        for (std::size_t j = 0; j < C.cols(); ++j) ga[j] += gc[j];
      }
    });
  }
  return C;
}

// Rows [r0, r1) of A as a contiguous block.
template <typename Real>
DualTensor<Real> slice_rows(Tape<Real>* tape, DualTensor<Real> A,
                            std::size_t r0, std::size_t r1) {
  require(r0 <= r1 && r1 <= A.rows(),
          "slice_rows: range [" + std::to_string(r0) + ", " +
              std::to_string(r1) + ") outside " + std::to_string(A.rows()) +
              " rows");
  std::size_t Cc = A.cols();
  DualTensor<Real> C(r1 - r0, Cc);
  std::copy(A.data() + r0 * Cc, A.data() + r1 * Cc, C.data());
  if (tracing(tape, A.requires_grad())) {
    C.set_requires_grad(true);
    tape->record([A, C, r0]() mutable {
      std::size_t Cc = A.cols();
      Real* ga = A.grad() + r0 * Cc;
      const Real* gc = C.grad();
      for (std::size_t i = 0; i < C.size(); ++i) ga[i] += gc[i];
    });
  }
  return C;
}

// Vertical stack of equally wide pieces.
template <typename Real>
DualTensor<Real> concat_rows(Tape<Real>* tape,
                             const std::vector<DualTensor<Real>>& pieces) {
  require(!pieces.empty(), "concat_rows: no pieces");
  std::size_t Cc = pieces[0].cols(), R = 0;
  bool rg = false;
  for (const auto& p : pieces) {
    require(p.cols() == Cc, "concat_rows: width mismatch, " +
                                std::to_string(p.cols()) + " vs " +
                                std::to_string(Cc));
    R += p.rows();
    rg = rg || p.requires_grad();
  }
  DualTensor<Real> C(R, Cc);
  std::size_t r = 0;
  for (const auto& p : pieces) {
    std::copy(p.data(), p.data() + p.size(), C.data() + r * Cc);
    r += p.rows();
  }
  if (tracing(tape, rg)) {
    C.set_requires_grad(true);
    tape->record([pieces, C]() mutable {
      std::size_t r = 0;
      for (auto& p : pieces) {
        if (p.requires_grad()) {
          const Real* gc = C.grad() + r * C.cols();
          Real* gp = const_cast<DualTensor<Real>&>(p).grad();
          for (std::size_t i = 0; i < p.size(); ++i) gp[i] += gc[i];
        }
        r += p.rows();
      }
    });
  }
  return C;
}

// Row gather: out row r is X[idx[r]], or all zeros where idx[r] < 0.
// Backward scatters gradients back, accumulating across duplicate indices.
template <typename Real>
DualTensor<Real> gather_rows(Tape<Real>* tape, DualTensor<Real> X,
                             const std::vector<long>& idx) {
  std::size_t Cc = X.cols();
  DualTensor<Real> Y(idx.size(), Cc);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    long i = idx[r];
    if (i < 0) continue;
    require(static_cast<std::size_t>(i) < X.rows(),
            "gather_rows: index " + std::to_string(i) + " outside " +
                std::to_string(X.rows()) + " rows");
    std::copy(X.data() + i * Cc, X.data() + (i + 1) * Cc, Y.data() + r * Cc);
  }
  if (tracing(tape, X.requires_grad())) {
    Y.set_requires_grad(true);
    tape->record([X, Y, idx]() mutable {
      std::size_t Cc = X.cols();
      for (std::size_t r = 0; r < idx.size(); ++r) {
        long i = idx[r];
        if (i < 0) continue;
        Real* gx = X.grad() + i * Cc;
        const Real* gy = Y.grad() + r * Cc;
        for (std::size_t j = 0; j < Cc; ++j) gx[j] += gy[j];
      }
    });
  }
  return Y;
}

// Scales row ranges by per-segment weights: rows [segs[s].first,
// segs[s].second) are multiplied by w[s]. Rows outside every segment pass
// through unchanged. w is (num_segments x 1) and receives gradients.
template <typename Real>
DualTensor<Real> scale_segments(
    Tape<Real>* tape, DualTensor<Real> X, DualTensor<Real> w,
    const std::vector<std::pair<std::size_t, std::size_t>>& segs) {
  require(w.cols() == 1 && w.rows() == segs.size(),
          "scale_segments: weights must be " + std::to_string(segs.size()) +
              "x1, got " + std::to_string(w.rows()) + "x" +
              std::to_string(w.cols()));
  std::size_t Cc = X.cols();
  DualTensor<Real> Y(X.rows(), Cc);
  Y.values() = X.values();
  for (std::size_t s = 0; s < segs.size(); ++s) {
    require(segs[s].first <= segs[s].second && segs[s].second <= X.rows(),
            "scale_segments: segment outside matrix");
    for (std::size_t r = segs[s].first; r < segs[s].second; ++r)
      for (std::size_t j = 0; j < Cc; ++j) Y.at(r, j) = X.at(r, j) * w.at(s, 0);
  }
  bool rg = X.requires_grad() || w.requires_grad();
  if (tracing(tape, rg)) {
    Y.set_requires_grad(true);
    tape->record([X, w, Y, segs]() mutable {
      std::size_t Cc = X.cols();
      std::vector<bool> in_seg(X.rows(), false);
      for (std::size_t s = 0; s < segs.size(); ++s) {
        Real acc = 0;
        for (std::size_t r = segs[s].first; r < segs[s].second; ++r) {
          in_seg[r] = true;
          const Real* gy = Y.grad() + r * Cc;
          const Real* x = X.data() + r * Cc;
          if (X.requires_grad()) {
            Real* gx = X.grad() + r * Cc;
            for (std::size_t j = 0; j < Cc; ++j) gx[j] += gy[j] * w.at(s, 0);
          }
          for (std::size_t j = 0; j < Cc; ++j) acc += gy[j] * x[j];
        }
        if (w.requires_grad()) w.grad()[s] += acc;
      }
      if (X.requires_grad()) {
        for (std::size_t r = 0; r < X.rows(); ++r) {
          if (in_seg[r]) continue;
          Real* gx = X.grad() + r * Cc;
          const Real* gy = Y.grad() + r * Cc;
          for (std::size_t j = 0; j < Cc; ++j) gx[j] += gy[j];
        }
      }
    });
  }
  return Y;
}

// Cosine similarity of paired rows: out_r = cos(A_r, B_r), zero when either
// row is all zeros.
template <typename Real>
DualTensor<Real> rowwise_cosine(Tape<Real>* tape, DualTensor<Real> A,
                                DualTensor<Real> B) {
  require(A.rows() == B.rows() && A.cols() == B.cols(),
          "rowwise_cosine: shape mismatch " + std::to_string(A.rows()) + "x" +
              std::to_string(A.cols()) + " vs " + std::to_string(B.rows()) +
              "x" + std::to_string(B.cols()));
  std::size_t R = A.rows(), Cc = A.cols();
  DualTensor<Real> Y(R, 1);
  std::vector<Real> na(R), nb(R);
  for (std::size_t i = 0; i < R; ++i) {
    Real sa = 0, sb = 0, dot = 0;
    for (std::size_t j = 0; j < Cc; ++j) {
      sa += A.at(i, j) * A.at(i, j);
      sb += B.at(i, j) * B.at(i, j);
      dot += A.at(i, j) * B.at(i, j);
    }
    na[i] = std::sqrt(sa);
    nb[i] = std::sqrt(sb);
    if (na[i] > Real(0) && nb[i] > Real(0))
      Y.at(i, 0) = dot / (na[i] * nb[i]);
  }
  bool rg = A.requires_grad() || B.requires_grad();
  if (tracing(tape, rg)) {
    Y.set_requires_grad(true);
    tape->record([A, B, Y, na, nb]() mutable {
      std::size_t R = A.rows(), Cc = A.cols();
      for (std::size_t i = 0; i < R; ++i) {
        if (na[i] == Real(0) || nb[i] == Real(0)) continue;
        Real gy = Y.grad()[i];
        if (gy == Real(0)) continue;
        Real c = Y.at(i, 0);
        const Real* a = A.data() + i * Cc;
        const Real* b = B.data() + i * Cc;
        if (A.requires_grad()) {
          Real* ga = A.grad() + i * Cc;
          for (std::size_t j = 0; j < Cc; ++j)
            ga[j] += gy * (b[j] / (na[i] * nb[i]) - c * a[j] / (na[i] * na[i]));
        }
        if (B.requires_grad()) {
          Real* gb = B.grad() + i * Cc;
          for (std::size_t j = 0; j < Cc; ++j)
            gb[j] += gy * (a[j] / (na[i] * nb[i]) - c * b[j] / (nb[i] * nb[i]));
        }
      }
    });
  }
  return Y;
}

// Sum of all entries as a 1x1 tensor.
template <typename Real>
DualTensor<Real> sum_all(Tape<Real>* tape, DualTensor<Real> A) {
  DualTensor<Real> Y(1, 1);
  Real s = 0;
  for (std::size_t i = 0; i < A.size(); ++i) s += A.data()[i];
  Y.at(0, 0) = s;
  if (tracing(tape, A.requires_grad())) {
    Y.set_requires_grad(true);
    tape->record([A, Y]() mutable {
      Real g = Y.grad()[0];
      Real* ga = A.grad();
      for (std::size_t i = 0; i < A.size(); ++i) ga[i] += g;
    });
  }
  return Y;
}

// Y = A / s with a 1x1 tensor divisor. The entry equal to s itself
// naturally gets zero gradient through s (quotient rule).
template <typename Real>
DualTensor<Real> div_by_scalar(Tape<Real>* tape, DualTensor<Real> A,
                               DualTensor<Real> s) {
  require(s.rows() == 1 && s.cols() == 1, "div_by_scalar: divisor must be 1x1");
  Real sv = s.at(0, 0);
  require(sv != Real(0), "div_by_scalar: division by zero");
  DualTensor<Real> Y(A.rows(), A.cols());
  for (std::size_t i = 0; i < A.size(); ++i) Y.data()[i] = A.data()[i] / sv;
  bool rg = A.requires_grad() || s.requires_grad();
  if (tracing(tape, rg)) {
    Y.set_requires_grad(true);
    tape->record([A, s, Y, sv]() mutable {
      if (A.requires_grad()) {
        Real* ga = A.grad();
        for (std::size_t i = 0; i < A.size(); ++i)
          ga[i] += Y.grad()[i] / sv;
      }
      if (s.requires_grad()) {
        Real acc = 0;
        for (std::size_t i = 0; i < A.size(); ++i)
          acc -= Y.grad()[i] * A.data()[i] / (sv * sv);
        s.grad()[0] += acc;
      }
    });
  }
  return Y;
}

// Mean negative log-likelihood of per-row targets under row-wise softmax,
// computed via the max-shifted log-sum-exp for stability. Returns 1x1.
template <typename Real>
DualTensor<Real> softmax_cross_entropy(Tape<Real>* tape,
                                       DualTensor<Real> logits,
                                       const std::vector<int>& targets) {
  std::size_t R = logits.rows(), V = logits.cols();
  require(targets.size() == R, "softmax_cross_entropy: " +
                                   std::to_string(targets.size()) +
                                   " targets for " + std::to_string(R) +
                                   " rows");
  DualTensor<Real> Y(1, 1);
  // Probabilities are kept for the backward rule.
  auto probs = std::make_shared<std::vector<Real>>(R * V);
  Real total = 0;
  for (std::size_t i = 0; i < R; ++i) {
    int t = targets[i];
    require(t >= 0 && static_cast<std::size_t>(t) < V,
            "softmax_cross_entropy: target " + std::to_string(t) +
                " outside vocab " + std::to_string(V));
    const Real* x = logits.data() + i * V;
    Real mx = x[0];
    for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, x[j]);
    Real z = 0;
    for (std::size_t j = 0; j < V; ++j) z += std::exp(x[j] - mx);
    Real logz = std::log(z) + mx;
    total += logz - x[t];
    Real* p = probs->data() + i * V;
    for (std::size_t j = 0; j < V; ++j) p[j] = std::exp(x[j] - logz);
  }
  Y.at(0, 0) = total / Real(R);
  if (tracing(tape, logits.requires_grad())) {
    Y.set_requires_grad(true);
    tape->record([logits, Y, probs, targets]() mutable {
      std::size_t R = logits.rows(), V = logits.cols();
      Real g = Y.grad()[0] / Real(R);
      Real* gl = logits.grad();
      for (std::size_t i = 0; i < R; ++i) {
        const Real* p = probs->data() + i * V;
        Real* gi = gl + i * V;
        for (std::size_t j = 0; j < V; ++j) gi[j] += g * p[j];
        gi[targets[i]] -= g;
      }
    });
  }
  return Y;
}

// Value-only row softmax with temperature, for sampling.
template <typename Real>
std::vector<Real> softmax_row(const Real* x, std::size_t n, Real temperature) {
  std::vector<Real> p(n);
  Real mx = x[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
  Real z = 0;
  for (std::size_t j = 0; j < n; ++j) {
    p[j] = std::exp((x[j] - mx) / temperature);
    z += p[j];
  }
  for (std::size_t j = 0; j < n; ++j) p[j] /= z;
  return p;
}

}  // namespace avey
