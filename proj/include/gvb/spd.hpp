#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <utility>

#include "gvb/rng.hpp"
#include "gvb/types.hpp"

// Dense SPD kernels: Cholesky, triangular inversion, matrix square roots,
// the second-order retraction on the SPD manifold, the associated vector
// transport, and Gaussian sampling from a precision factor.
//
// All functions are pure; safe to call concurrently (each RngStream is owned
// by a single caller).

namespace gvb {

inline Mat symmetrize(const Mat& m) {
  require_square(m, "symmetrize");
  return 0.5 * (m + m.transpose());
}

inline bool is_symmetric(const Mat& m, double rel_tol = 1e-12) {
  if (m.rows() != m.cols()) return false;
  double scale = m.cwiseAbs().maxCoeff();
  if (scale == 0.0) return true;
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

// Lower Cholesky factor of an SPD matrix. Reads the lower triangle only.
// A pivot below 1e-12 times the largest diagonal entry raises
// NotPositiveDefiniteError carrying the failing pivot index.
inline Mat cholesky(const Mat& a) {
  require_square(a, "cholesky");
  const int d = static_cast<int>(a.rows());
  double scale = 0.0;
  for (int j = 0; j < d; ++j) scale = std::max(scale, std::abs(a(j, j)));
  const double tol = 1e-12 * (scale > 0.0 ? scale : 1.0);

  Mat l = Mat::Zero(d, d);
  for (int j = 0; j < d; ++j) {
    double pivot = a(j, j);
    for (int k = 0; k < j; ++k) pivot -= l(j, k) * l(j, k);
    if (!(pivot > tol)) throw NotPositiveDefiniteError(j);
    l(j, j) = std::sqrt(pivot);
    for (int i = j + 1; i < d; ++i) {
      double s = a(i, j);
      for (int k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  return l;
}

// Inverse of a lower-triangular matrix by forward substitution.
inline Mat tri_inverse(const Mat& l) {
  require_square(l, "tri_inverse");
  const int d = static_cast<int>(l.rows());
  Mat x = Mat::Zero(d, d);
  for (int j = 0; j < d; ++j) {
    if (l(j, j) == 0.0) throw SingularTriangularError(j);
    x(j, j) = 1.0 / l(j, j);
    for (int i = j + 1; i < d; ++i) {
      double s = 0.0;
      for (int k = j; k < i; ++k) s += l(i, k) * x(k, j);
      if (l(i, i) == 0.0) throw SingularTriangularError(i);
      x(i, j) = -s / l(i, i);
    }
  }
  return x;
}

// Inverts an SPD matrix through its Cholesky factor: A = L Lᵀ gives
// A⁻¹ = (L⁻¹)ᵀ L⁻¹, which costs one triangular inversion instead of a
// general solve. Returns the inverse together with the factor L.
struct SpdInverse {
  Mat inverse;
  Mat chol_lower;
};

inline SpdInverse spd_inverse(const Mat& a) {
  Mat l = cholesky(a);
  Mat linv = tri_inverse(l);
  return {linv.transpose() * linv, std::move(l)};
}

namespace detail {

struct SpdEigen {
  Mat vectors;
  Vec values;
};

inline SpdEigen spd_eigen(const Mat& a, const char* what) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(a));
  if (es.info() != Eigen::Success)
    throw ComplexRootError(std::string(what) + ": eigendecomposition failed");
  Vec values = es.eigenvalues();
  for (int i = 0; i < values.size(); ++i) {
    if (!(values(i) > 0.0))
      throw ComplexRootError(std::string(what) +
                             ": non-positive eigenvalue, root would be complex");
  }
  return {es.eigenvectors(), std::move(values)};
}

}  // namespace detail

// Principal square root of an SPD matrix via symmetric eigendecomposition.
inline Mat spd_sqrt(const Mat& a) {
  require_square(a, "spd_sqrt");
  if (a.rows() == 1) {
    if (!(a(0, 0) > 0.0)) throw ComplexRootError("spd_sqrt: non-positive scalar");
    return Mat::Constant(1, 1, std::sqrt(a(0, 0)));
  }
  auto eig = detail::spd_eigen(a, "spd_sqrt");
  return eig.vectors * eig.values.cwiseSqrt().asDiagonal() *
         eig.vectors.transpose();
}

// E with E·E = B·A for SPD B, A. The product B·A is not symmetric, so the
// root is taken through the similar SPD matrix A^{1/2} B A^{1/2}:
//   E = A^{-1/2} (A^{1/2} B A^{1/2})^{1/2} A^{1/2}.
// Only SPD square roots appear; a non-positive eigenvalue of the inner
// matrix raises ComplexRootError.
inline Mat spd_sqrt_product(const Mat& b, const Mat& a) {
  require_square(b, "spd_sqrt_product");
  require_same_dim(b.rows(), a.rows(), "spd_sqrt_product");
  const int d = static_cast<int>(a.rows());
  if (d == 1) {
    double prod = b(0, 0) * a(0, 0);
    if (!(prod > 0.0))
      throw ComplexRootError("spd_sqrt_product: non-positive scalar product");
    return Mat::Constant(1, 1, std::sqrt(prod));
  }
  auto eig = detail::spd_eigen(a, "spd_sqrt_product");
  Mat a_half = eig.vectors * eig.values.cwiseSqrt().asDiagonal() *
               eig.vectors.transpose();
  Mat a_half_inv = eig.vectors * eig.values.cwiseSqrt().cwiseInverse().asDiagonal() *
                   eig.vectors.transpose();
  Mat inner = symmetrize(a_half * b * a_half);
  auto inner_eig = detail::spd_eigen(inner, "spd_sqrt_product");
  Mat inner_half = inner_eig.vectors * inner_eig.values.cwiseSqrt().asDiagonal() *
                   inner_eig.vectors.transpose();
  return a_half_inv * inner_half * a_half;
}

// Second-order retraction on the SPD manifold at `prec` along the symmetric
// tangent `xi`:  R(xi) = prec + xi + 1/2 xi cov xi, symmetrized. `cov` is
// the caller-cached inverse of `prec` (verified only when `check` is set).
// The result is validated by Cholesky; failure raises RetractionFailedError
// so the caller can shrink the step.
inline Mat retract(const Mat& prec, const Mat& cov, const Mat& xi,
                   bool check = false) {
  require_square(prec, "retract");
  require_same_dim(prec.rows(), cov.rows(), "retract");
  require_same_dim(prec.rows(), xi.rows(), "retract");
  if (check) {
    Mat resid = prec * cov - Mat::Identity(prec.rows(), prec.cols());
    if (resid.cwiseAbs().maxCoeff() > 1e-6)
      throw std::invalid_argument("retract: cov is not the inverse of prec");
  }
  Mat candidate = symmetrize(prec + xi + 0.5 * ((xi * cov) * xi));
  try {
    cholesky(candidate);
  } catch (const NotPositiveDefiniteError&) {
    throw RetractionFailedError("retract: step left the SPD cone");
  }
  return candidate;
}

// Vector transport matching the retraction: xi is carried from the tangent
// space at prec_old to the one at prec_new by E xi Eᵀ with
// E = (prec_new · cov_old)^{1/2}.
inline Mat transport(const Mat& prec_old, const Mat& cov_old,
                     const Mat& prec_new, const Mat& xi) {
  require_same_dim(prec_old.rows(), cov_old.rows(), "transport");
  require_same_dim(prec_old.rows(), prec_new.rows(), "transport");
  require_same_dim(prec_old.rows(), xi.rows(), "transport");
  (void)prec_old;
  Mat e = spd_sqrt_product(prec_new, cov_old);
  return symmetrize((e * xi) * e.transpose());
}

// Draws theta_s = mu + L^{-T} eps_s where L is the lower Cholesky factor of
// the precision, so the draws have covariance (L Lᵀ)⁻¹. Rows of the result
// are the draws; normals are consumed draw-major, coordinate order.
inline Mat sample_gaussian(const Vec& mu, const Mat& chol_prec_lower, int count,
                           RngStream& rng) {
  require_same_dim(mu.size(), chol_prec_lower.rows(), "sample_gaussian");
  if (count < 1) throw DimensionError("sample_gaussian: count must be >= 1");
  const int d = static_cast<int>(mu.size());
  Mat draws(count, d);
  Vec eps(d);
  for (int s = 0; s < count; ++s) {
    for (int i = 0; i < d; ++i) eps(i) = rng.normal();
    chol_prec_lower.transpose().triangularView<Eigen::Upper>().solveInPlace(eps);
    draws.row(s) = (mu + eps).transpose();
  }
  return draws;
}

}  // namespace gvb
