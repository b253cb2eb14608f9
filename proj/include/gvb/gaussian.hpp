#pragma once

#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "gvb/rng.hpp"
#include "gvb/spd.hpp"
#include "gvb/types.hpp"

// The Gaussian variational family over full, diagonal and block-diagonal
// precision structures, with the score gradients and the natural-gradient
// identities the optimizer builds on.

namespace gvb {

struct PosteriorStructure {
  enum class Kind { Full, Diagonal, Block };
  Kind kind = Kind::Full;
  std::vector<int> block_sizes;  // Block only; sizes sum to the dimension

  static PosteriorStructure full() { return {Kind::Full, {}}; }
  static PosteriorStructure diagonal() { return {Kind::Diagonal, {}}; }
  static PosteriorStructure block(std::vector<int> sizes) {
    return {Kind::Block, std::move(sizes)};
  }
};

// One SPD block of the posterior precision with its eagerly-kept caches.
// Caches are rebuilt on every precision update; states are immutable once
// constructed.
struct SpdBlock {
  int offset = 0;
  Mat prec;
  Mat cov;        // prec⁻¹
  Mat chol_prec;  // lower L with L Lᵀ = prec
  double log_det_prec = 0.0;

  int dim() const { return static_cast<int>(prec.rows()); }
};

struct VariationalState {
  PosteriorStructure structure;
  Vec mu;
  // Diagonal structure: sigma^{-2} and its elementwise Cholesky sqrt(sigma^{-2}).
  Vec prec_diag;
  Vec chol_diag;
  // Full / block structure (full is the single-block case).
  std::vector<SpdBlock> blocks;

  int dim() const { return static_cast<int>(mu.size()); }
  bool is_diagonal() const {
    return structure.kind == PosteriorStructure::Kind::Diagonal;
  }

  Mat dense_prec() const {
    Mat p = Mat::Zero(dim(), dim());
    if (is_diagonal()) {
      p.diagonal() = prec_diag;
    } else {
      for (const auto& b : blocks)
        p.block(b.offset, b.offset, b.dim(), b.dim()) = b.prec;
    }
    return p;
  }

  Mat dense_cov() const {
    Mat c = Mat::Zero(dim(), dim());
    if (is_diagonal()) {
      c.diagonal() = prec_diag.cwiseInverse();
    } else {
      for (const auto& b : blocks)
        c.block(b.offset, b.offset, b.dim(), b.dim()) = b.cov;
    }
    return c;
  }

  double log_det_prec() const {
    if (is_diagonal()) return prec_diag.array().log().sum();
    double s = 0.0;
    for (const auto& b : blocks) s += b.log_det_prec;
    return s;
  }

  // Draws are generated block by block with theta = mu + L^{-T} eps; one
  // normal per coordinate, draw-major order, so structures sharing a seed
  // consume the stream identically.
  Mat sample(int count, RngStream& rng) const {
    const int d = dim();
    Mat draws(count, d);
    if (is_diagonal()) {
      for (int s = 0; s < count; ++s)
        for (int i = 0; i < d; ++i)
          draws(s, i) = mu(i) + rng.normal() / chol_diag(i);
      return draws;
    }
    Vec eps;
    for (int s = 0; s < count; ++s) {
      for (const auto& b : blocks) {
        eps.resize(b.dim());
        for (int i = 0; i < b.dim(); ++i) eps(i) = rng.normal();
        b.chol_prec.transpose().triangularView<Eigen::Upper>().solveInPlace(eps);
        draws.row(s).segment(b.offset, b.dim()) =
            (mu.segment(b.offset, b.dim()) + eps).transpose();
      }
    }
    return draws;
  }
};

namespace detail {

inline SpdBlock make_block(int offset, const Mat& prec) {
  if (!is_symmetric(prec))
    throw DimensionError("precision block is not symmetric");
  SpdBlock b;
  b.offset = offset;
  b.prec = symmetrize(prec);
  auto inv = spd_inverse(b.prec);
  b.cov = std::move(inv.inverse);
  b.chol_prec = std::move(inv.chol_lower);
  b.log_det_prec = 2.0 * b.chol_prec.diagonal().array().log().sum();
  return b;
}

}  // namespace detail

inline VariationalState make_full_state(Vec mu, const Mat& prec) {
  require_same_dim(mu.size(), prec.rows(), "make_full_state");
  VariationalState st;
  st.structure = PosteriorStructure::full();
  st.mu = std::move(mu);
  st.blocks.push_back(detail::make_block(0, prec));
  return st;
}

inline VariationalState make_full_state_from_cov(Vec mu, const Mat& cov) {
  require_same_dim(mu.size(), cov.rows(), "make_full_state_from_cov");
  auto inv = spd_inverse(symmetrize(cov));
  return make_full_state(std::move(mu), inv.inverse);
}

inline VariationalState make_diagonal_state(Vec mu, Vec prec_diag) {
  require_same_dim(mu.size(), prec_diag.size(), "make_diagonal_state");
  for (int i = 0; i < prec_diag.size(); ++i)
    if (!(prec_diag(i) > 0.0)) throw NotPositiveDefiniteError(i);
  VariationalState st;
  st.structure = PosteriorStructure::diagonal();
  st.mu = std::move(mu);
  st.chol_diag = prec_diag.cwiseSqrt();
  st.prec_diag = std::move(prec_diag);
  return st;
}

inline VariationalState make_block_state(Vec mu, std::vector<int> sizes,
                                         const std::vector<Mat>& precs) {
  if (sizes.size() != precs.size())
    throw DimensionError("make_block_state: one precision per block expected");
  int total = 0;
  for (int s : sizes) {
    if (s <= 0) throw DimensionError("make_block_state: block sizes must be positive");
    total += s;
  }
  require_same_dim(mu.size(), total, "make_block_state");
  VariationalState st;
  st.structure = PosteriorStructure::block(sizes);
  st.mu = std::move(mu);
  int offset = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    require_same_dim(precs[i].rows(), sizes[i], "make_block_state");
    st.blocks.push_back(detail::make_block(offset, precs[i]));
    offset += sizes[i];
  }
  return st;
}

// Exact multivariate normal log density using the cached Cholesky
// log-determinants.
inline double log_pdf(const VariationalState& state, const Vec& theta) {
  require_same_dim(theta.size(), state.dim(), "log_pdf");
  constexpr double log2pi = 1.8378770664093454836;  // log(2*pi)
  const int d = state.dim();
  if (state.is_diagonal()) {
    double quad = 0.0;
    for (int i = 0; i < d; ++i) {
      double u = state.chol_diag(i) * (theta(i) - state.mu(i));
      quad += u * u;
    }
    return -0.5 * d * log2pi + 0.5 * state.log_det_prec() - 0.5 * quad;
  }
  double out = 0.0;
  for (const auto& b : state.blocks) {
    Vec dev = theta.segment(b.offset, b.dim()) - state.mu.segment(b.offset, b.dim());
    Vec u = b.chol_prec.transpose() * dev;
    out += -0.5 * b.dim() * log2pi + 0.5 * b.log_det_prec - 0.5 * u.squaredNorm();
  }
  return out;
}

// Score of log q in the mean: Sigma^{-1} (theta - mu).
inline Vec score_mu(const VariationalState& state, const Vec& theta) {
  require_same_dim(theta.size(), state.dim(), "score_mu");
  if (state.is_diagonal())
    return state.prec_diag.cwiseProduct(theta - state.mu);
  Vec out(state.dim());
  for (const auto& b : state.blocks) {
    Vec dev = theta.segment(b.offset, b.dim()) - state.mu.segment(b.offset, b.dim());
    out.segment(b.offset, b.dim()) = b.prec * dev;
  }
  return out;
}

// Score of log q in the covariance:
//   -1/2 (Sigma^{-1} - Sigma^{-1}(theta-mu)(theta-mu)^T Sigma^{-1}),
// returned dense and symmetric (block-diagonal outside the structure).
inline Mat score_sigma(const VariationalState& state, const Vec& theta) {
  require_same_dim(theta.size(), state.dim(), "score_sigma");
  Mat out = Mat::Zero(state.dim(), state.dim());
  if (state.is_diagonal()) {
    Vec u = state.prec_diag.cwiseProduct(theta - state.mu);
    out.diagonal() = -0.5 * (state.prec_diag - u.cwiseProduct(u));
    return out;
  }
  for (const auto& b : state.blocks) {
    Vec dev = theta.segment(b.offset, b.dim()) - state.mu.segment(b.offset, b.dim());
    Vec u = b.prec * dev;
    Mat block = -0.5 * (b.prec - u * u.transpose());
    out.block(b.offset, b.offset, b.dim(), b.dim()) = symmetrize(block);
  }
  return out;
}

// Natural gradient in the mean: Sigma times the euclidean gradient.
inline Vec nat_grad_mu(const Mat& cov, const Vec& grad_mu) {
  require_same_dim(cov.rows(), grad_mu.size(), "nat_grad_mu");
  return cov * grad_mu;
}

// Natural gradient in the precision: -2 times the euclidean gradient in the
// covariance.
inline Mat nat_grad_prec(const Mat& grad_sigma) {
  return -2.0 * grad_sigma;
}

inline Vec nat_grad_prec(const Vec& grad_sigma_diag) {
  return -2.0 * grad_sigma_diag;
}

// Closed-form KL divergence between two Gaussians, both expanded to their
// dense covariance view.
inline double kl_gaussian(const VariationalState& qa, const VariationalState& qb) {
  require_same_dim(qa.dim(), qb.dim(), "kl_gaussian");
  const int d = qa.dim();
  Mat cov_a = qa.dense_cov();
  Mat prec_b = qb.dense_prec();
  Vec dev = qb.mu - qa.mu;
  double trace = (prec_b * cov_a).trace();
  double quad = dev.dot(prec_b * dev);
  double log_ratio = qa.log_det_prec() - qb.log_det_prec();
  return 0.5 * (log_ratio - d + trace + quad);
}

}  // namespace gvb
