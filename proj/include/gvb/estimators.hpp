#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "gvb/gaussian.hpp"
#include "gvb/prior.hpp"
#include "gvb/types.hpp"

// Score-function Monte-Carlo estimators of the lower bound and of its
// natural gradients, with optional per-coordinate control variates and
// norm clipping. Two payload kinds are supported: the h-function (any
// prior) and the reduced-variance log-likelihood form (Gaussian prior,
// where the prior and entropy contributions enter analytically).
//
// Per-draw payload evaluations may run concurrently upstream; reductions
// here run in fixed draw order, so a given seed reproduces bit-identical
// gradients.

namespace gvb {

enum class EstimatorKind { HFunction, GaussianPriorLogLik };

struct UnsupportedEstimatorError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DrawBatch {
  Mat thetas;  // S x d, rows sampled from the current state
  Vec logf;    // per-draw scalars: h-values or log-likelihoods

  int draws() const { return static_cast<int>(thetas.rows()); }
};

struct EstimatorOptions {
  bool control_variates = false;
  std::optional<double> clip_norm;  // l_max on the euclidean gradients
};

// Natural-gradient estimates for (mu, precision-side tangent). The tangent
// half mirrors the posterior structure: `prec_diag` for diagonal states,
// one symmetric matrix per block otherwise. For the covariance-geometry
// (MGVB) assembly the same container holds the Sigma-side tangent.
struct NatGradPair {
  Vec mu;
  Vec prec_diag;
  std::vector<Mat> prec;
  bool clipped = false;
};

// h(theta) = log p(theta) + log p(y|theta) - log q(theta): the per-draw
// integrand of the lower bound.
template <class Model>
double h_function(const Model& model, const PriorSpec& prior,
                  const VariationalState& state, const Vec& theta) {
  return prior.log_pdf(theta) + model.loglik(theta) - log_pdf(state, theta);
}

// Naive MC estimate of the lower bound: the mean of h over the batch.
inline double estimate_lb(const DrawBatch& batch) {
  if (batch.logf.size() == 0)
    throw std::invalid_argument("estimate_lb: empty batch");
  return batch.logf.mean();
}

// Optimal control-variate coefficients, per coordinate:
//   c* = Cov(g · logf, g) / Var(g)
// from sample moments of the same batch; coordinates with zero sample
// variance get c* = 0.
inline Vec control_variate_coeff(const Mat& per_draw_grads,
                                 const Mat& per_draw_weighted) {
  const int s = static_cast<int>(per_draw_grads.rows());
  if (s < 2)
    throw std::invalid_argument("control_variate_coeff: needs at least 2 draws");
  require_same_dim(per_draw_grads.rows(), per_draw_weighted.rows(),
                   "control_variate_coeff");
  Vec mean_g = per_draw_grads.colwise().mean();
  Vec mean_x = per_draw_weighted.colwise().mean();
  Vec out(per_draw_grads.cols());
  for (int j = 0; j < per_draw_grads.cols(); ++j) {
    double cov = 0.0, var = 0.0;
    for (int i = 0; i < s; ++i) {
      double gd = per_draw_grads(i, j) - mean_g(j);
      cov += (per_draw_weighted(i, j) - mean_x(j)) * gd;
      var += gd * gd;
    }
    out(j) = var > 0.0 ? cov / var : 0.0;
  }
  return out;
}

// Rescales g onto the l2 ball of radius l_max, keeping its direction.
template <class Derived>
auto clip_gradient(const Eigen::MatrixBase<Derived>& g, double l_max) {
  if (!(l_max > 0.0))
    throw std::invalid_argument("clip_gradient: l_max must be positive");
  double n = g.norm();
  using Plain = typename Derived::PlainObject;
  if (n <= l_max) return Plain(g);
  return Plain(g * (l_max / n));
}

namespace detail {

// One-pass accumulators for mean(T·w) with the optional control-variate
// correction mean(T·w) - c* ∘ mean(T).
struct CvAccumulator {
  Eigen::ArrayXXd sum_t, sum_t2, sum_tw, sum_t2w;
  int draws = 0;

  void init(int rows, int cols) {
    sum_t = Eigen::ArrayXXd::Zero(rows, cols);
    sum_t2 = sum_t;
    sum_tw = sum_t;
    sum_t2w = sum_t;
    draws = 0;
  }

  template <class A>
  void add(const Eigen::ArrayBase<A>& t, double w) {
    sum_t += t;
    sum_t2 += t * t;
    sum_tw += t * w;
    sum_t2w += t * t * w;
    ++draws;
  }

  Eigen::ArrayXXd mean(bool control_variates) const {
    const double s = static_cast<double>(draws);
    Eigen::ArrayXXd mc = sum_tw / s;
    if (!control_variates || draws < 2) return mc;
    Eigen::ArrayXXd var = (sum_t2 - sum_t * sum_t / s) / (s - 1.0);
    Eigen::ArrayXXd cov = (sum_t2w - sum_tw * sum_t / s) / (s - 1.0);
    Eigen::ArrayXXd cstar =
        (var > 0.0).select(cov / var.max(1e-300), Eigen::ArrayXXd::Zero(var.rows(), var.cols()));
    return mc - cstar * (sum_t / s);
  }
};

struct BlockMc {
  Vec mu;   // mean of dev·w
  Mat tan;  // mean of W·w, W per geometry
};

enum class Geometry { Precision, Covariance };

inline BlockMc block_mc(const SpdBlock& b, const Vec& mu_block, const Mat& thetas,
                        const Vec& w, Geometry geom, bool cv) {
  const int s = static_cast<int>(thetas.rows());
  const int db = b.dim();
  CvAccumulator acc_mu, acc_tan;
  acc_mu.init(db, 1);
  acc_tan.init(db, db);
  Vec dev(db), u(db);
  Mat wmat(db, db);
  for (int i = 0; i < s; ++i) {
    dev = thetas.row(i).segment(b.offset, db).transpose() - mu_block;
    if (geom == Geometry::Precision) {
      u = b.prec * dev;
      wmat = b.prec - u * u.transpose();
    } else {
      wmat = -0.5 * (b.cov - dev * dev.transpose());
    }
    acc_mu.add(dev.array(), w(i));
    acc_tan.add(wmat.array(), w(i));
  }
  BlockMc out;
  out.mu = acc_mu.mean(cv).matrix();
  out.tan = acc_tan.mean(cv).matrix();
  return out;
}

struct DiagMc {
  Vec mu;
  Vec tan;
};

inline DiagMc diag_mc(const VariationalState& state, const Mat& thetas,
                      const Vec& w, Geometry geom, bool cv) {
  const int s = static_cast<int>(thetas.rows());
  const int d = state.dim();
  CvAccumulator acc_mu, acc_tan;
  acc_mu.init(d, 1);
  acc_tan.init(d, 1);
  Vec cov_diag = state.prec_diag.cwiseInverse();
  Vec dev(d), u(d), t(d);
  for (int i = 0; i < s; ++i) {
    dev = thetas.row(i).transpose() - state.mu;
    if (geom == Geometry::Precision) {
      u = state.prec_diag.cwiseProduct(dev);
      t = state.prec_diag - u.cwiseProduct(u);
    } else {
      t = -0.5 * (cov_diag - dev.cwiseProduct(dev));
    }
    acc_mu.add(dev.array(), w(i));
    acc_tan.add(t.array(), w(i));
  }
  DiagMc out;
  out.mu = acc_mu.mean(cv).matrix();
  out.tan = acc_tan.mean(cv).matrix();
  return out;
}

// Clip factors are measured on the euclidean gradients (the paper applies
// clipping there, ahead of momentum): grad_mu = P g_mu per block, and
// grad_Sigma = -1/2 g_prec (precision geometry) or P g_cov P (covariance
// geometry). Natural gradients are linear in the euclidean ones, so the
// rescale factor carries over unchanged.
inline void apply_clip(const VariationalState& state, Geometry geom,
                       double l_max, NatGradPair& g) {
  double mu_sq = 0.0, tan_sq = 0.0;
  if (state.is_diagonal()) {
    mu_sq = state.prec_diag.cwiseProduct(g.mu).squaredNorm();
    if (geom == Geometry::Precision) {
      tan_sq = 0.25 * g.prec_diag.squaredNorm();
    } else {
      tan_sq = state.prec_diag.cwiseProduct(state.prec_diag)
                   .cwiseProduct(g.prec_diag)
                   .squaredNorm();
    }
  } else {
    for (std::size_t i = 0; i < state.blocks.size(); ++i) {
      const auto& b = state.blocks[i];
      mu_sq += (b.prec * g.mu.segment(b.offset, b.dim())).squaredNorm();
      if (geom == Geometry::Precision)
        tan_sq += 0.25 * g.prec[i].squaredNorm();
      else
        tan_sq += (b.prec * g.prec[i] * b.prec).squaredNorm();
    }
  }
  double mu_norm = std::sqrt(mu_sq);
  double tan_norm = std::sqrt(tan_sq);
  if (mu_norm > l_max) {
    g.mu *= l_max / mu_norm;
    g.clipped = true;
  }
  if (tan_norm > l_max) {
    double f = l_max / tan_norm;
    if (state.is_diagonal())
      g.prec_diag *= f;
    else
      for (auto& m : g.prec) m *= f;
    g.clipped = true;
  }
}

// Shared assembly: analytic prior terms (when the Gaussian-prior payload is
// used) plus the MC means, then clipping.
inline NatGradPair assemble(const VariationalState& state, const DrawBatch& batch,
                            const PriorSpec* prior, Geometry geom,
                            const EstimatorOptions& opts) {
  require_same_dim(batch.thetas.cols(), state.dim(), "estimate_natgrads");
  require_same_dim(batch.thetas.rows(), batch.logf.size(), "estimate_natgrads");
  if (batch.draws() < 1)
    throw std::invalid_argument("estimate_natgrads: empty batch");
  if (prior && !prior->gaussian())
    throw UnsupportedEstimatorError(
        "log-likelihood estimator requires a Gaussian prior");

  NatGradPair g;
  g.mu = Vec::Zero(state.dim());

  if (state.is_diagonal()) {
    if (prior && !prior->isotropic())
      throw UnsupportedEstimatorError(
          "diagonal posterior requires an isotropic prior");
    auto mc = diag_mc(state, batch.thetas, batch.logf, geom, opts.control_variates);
    g.mu = mc.mu;
    g.prec_diag = mc.tan;
    if (prior) {
      double tau = *prior->tau;
      Vec dev0 = state.mu - prior->mu0;
      Vec cov = state.prec_diag.cwiseInverse();
      g.mu -= cov.cwiseProduct(tau * dev0);
      if (geom == Geometry::Precision) {
        g.prec_diag += Vec::Constant(state.dim(), tau) - state.prec_diag;
      } else {
        g.prec_diag += 0.5 * cov - 0.5 * tau * cov.cwiseProduct(cov);
      }
    }
  } else {
    const bool isotropic = prior && prior->isotropic();
    if (prior && !isotropic && state.blocks.size() > 1)
      throw UnsupportedEstimatorError(
          "block posterior requires an isotropic prior");
    for (std::size_t i = 0; i < state.blocks.size(); ++i) {
      const auto& b = state.blocks[i];
      Vec mu_block = state.mu.segment(b.offset, b.dim());
      auto mc = block_mc(b, mu_block, batch.thetas, batch.logf, geom,
                         opts.control_variates);
      Vec g_mu = mc.mu;
      Mat g_tan = mc.tan;
      if (prior) {
        Vec dev0 = mu_block - prior->mu0.segment(b.offset, b.dim());
        if (isotropic) {
          double tau = *prior->tau;
          g_mu -= b.cov * (tau * dev0);
          if (geom == Geometry::Precision)
            g_tan += tau * Mat::Identity(b.dim(), b.dim()) - b.prec;
          else
            g_tan += 0.5 * b.cov - 0.5 * tau * b.cov * b.cov;
        } else {
          const Mat& prec0 = *prior->prec0;
          g_mu -= b.cov * (prec0 * dev0);
          if (geom == Geometry::Precision)
            g_tan += prec0 - b.prec;
          else
            g_tan += 0.5 * b.cov - 0.5 * b.cov * prec0 * b.cov;
        }
      }
      g.mu.segment(b.offset, b.dim()) = g_mu;
      g.prec.push_back(symmetrize(g_tan));
    }
  }

  if (opts.clip_norm) apply_clip(state, geom, *opts.clip_norm, g);
  return g;
}

}  // namespace detail

// h-function estimator (payload: h-values). Valid for any prior; the prior
// enters only through h, so the analytic correction terms are zero.
inline NatGradPair estimate_natgrads_h(const VariationalState& state,
                                       const DrawBatch& batch,
                                       const EstimatorOptions& opts = {}) {
  return detail::assemble(state, batch, nullptr, detail::Geometry::Precision, opts);
}

// Reduced-variance estimator under a Gaussian prior (payload: per-draw
// log-likelihoods). The prior and entropy contributions are analytic:
//   c_mu = -Sigma Sigma0^{-1} (mu - mu0),   C = -Sigma^{-1} + Sigma0^{-1}.
inline NatGradPair estimate_natgrads_gaussprior(const VariationalState& state,
                                                const PriorSpec& prior,
                                                const DrawBatch& batch,
                                                const EstimatorOptions& opts = {}) {
  return detail::assemble(state, batch, &prior, detail::Geometry::Precision, opts);
}

// Diagonal specialization: elementwise gradients for sigma^{-2} under an
// isotropic prior.
inline NatGradPair estimate_natgrads_diag(const VariationalState& state,
                                          const PriorSpec& prior,
                                          const DrawBatch& batch,
                                          const EstimatorOptions& opts = {}) {
  if (!state.is_diagonal())
    throw UnsupportedEstimatorError("estimate_natgrads_diag: diagonal state required");
  if (!prior.isotropic())
    throw UnsupportedEstimatorError("estimate_natgrads_diag: isotropic prior required");
  return detail::assemble(state, batch, &prior, detail::Geometry::Precision, opts);
}

// Covariance-geometry assembly for the MGVB baseline: the Sigma-side
// natural gradient is taken as Sigma grad_Sigma Sigma. Pass a prior for
// the log-likelihood payload, nullptr for the h-function payload.
inline NatGradPair estimate_natgrads_mgvb(const VariationalState& state,
                                          const PriorSpec* prior,
                                          const DrawBatch& batch,
                                          const EstimatorOptions& opts = {}) {
  return detail::assemble(state, batch, prior, detail::Geometry::Covariance, opts);
}

}  // namespace gvb
