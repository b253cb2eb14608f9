#pragma once

#include <cmath>
#include <memory>

#include "gvb/gaussian.hpp"
#include "gvb/models.hpp"
#include "gvb/prior.hpp"
#include "gvb/rng.hpp"
#include "gvb/types.hpp"

// Shared test fixtures: random SPD matrices and the conjugate
// Gaussian-Gaussian problem whose lower bound, posterior and natural
// gradients are available in closed form. Everything here is an
// independent oracle path; none of it calls the estimator code it checks.

namespace testsupport {

using gvb::Mat;
using gvb::Vec;

inline Mat random_spd(int d, gvb::RngStream& rng, double jitter = 0.5) {
  Mat a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = rng.normal();
  Mat s = a * a.transpose() / d + jitter * Mat::Identity(d, d);
  return 0.5 * (s + s.transpose());
}

inline Vec random_vec(int d, gvb::RngStream& rng) {
  Vec v(d);
  for (int i = 0; i < d; ++i) v(i) = rng.normal();
  return v;
}

inline Mat random_symmetric(int d, gvb::RngStream& rng) {
  Mat a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = rng.normal();
  return 0.5 * (a + a.transpose());
}

// Conjugate problem: y ~ N(X theta, sigma^2 I), theta ~ N(mu0, Sigma0).
struct ConjugateProblem {
  Mat x;
  Vec y;
  double sigma = 1.0;
  gvb::PriorSpec prior;
  gvb::ModelSpec model;
  Vec exact_mu;
  Mat exact_prec;
  double log_evidence = 0.0;

  int dim() const { return static_cast<int>(x.cols()); }
};

inline ConjugateProblem make_conjugate(int n, int d, double sigma,
                                       std::uint64_t seed,
                                       double prior_var = 4.0) {
  gvb::RngStream rng(seed);
  ConjugateProblem p;
  p.sigma = sigma;
  p.x.resize(n, d);
  Vec truth = random_vec(d, rng);
  p.y.resize(n);
  for (int i = 0; i < n; ++i) {
    p.x(i, 0) = 1.0;
    for (int j = 1; j < d; ++j) p.x(i, j) = rng.normal();
    p.y(i) = p.x.row(i).dot(truth) + sigma * rng.normal();
  }
  p.prior = gvb::make_isotropic_prior(Vec::Zero(d), 1.0 / prior_var);
  auto xs = std::make_shared<const Mat>(p.x);
  auto ys = std::make_shared<const Vec>(p.y);
  p.model = gvb::make_known_noise_gaussian_model(xs, ys, sigma);
  auto exact = gvb::conjugate_exact_posterior(p.x, p.y, sigma, p.prior);
  p.exact_mu = exact.mu;
  p.exact_prec = exact.prec;
  p.log_evidence = exact.log_evidence;
  return p;
}

// Closed-form lower bound of the conjugate problem at q = N(mu, Sigma):
//   E_q[log p(y|theta)] - KL(q || prior).
inline double conjugate_lb(const ConjugateProblem& p, const Vec& mu, const Mat& cov) {
  const int n = static_cast<int>(p.x.rows());
  const int d = static_cast<int>(p.x.cols());
  const double s2 = p.sigma * p.sigma;
  Vec resid = p.y - p.x * mu;
  Mat xtx = p.x.transpose() * p.x;
  double e_loglik = -0.5 * n * (gvb::kLog2Pi + std::log(s2)) -
                    0.5 * (resid.squaredNorm() + (xtx * cov).trace()) / s2;
  double tau = *p.prior.tau;
  Eigen::SelfAdjointEigenSolver<Mat> es(cov);
  double log_det_cov = es.eigenvalues().array().log().sum();
  double kl = 0.5 * (-d * std::log(tau) - log_det_cov - d + tau * cov.trace() +
                     tau * (mu - p.prior.mu0).squaredNorm());
  return e_loglik - kl;
}

// Analytic euclidean gradients of the conjugate lower bound.
inline Vec conjugate_grad_mu(const ConjugateProblem& p, const Vec& mu) {
  double tau = *p.prior.tau;
  return p.x.transpose() * (p.y - p.x * mu) / (p.sigma * p.sigma) -
         tau * (mu - p.prior.mu0);
}

inline Mat conjugate_grad_sigma(const ConjugateProblem& p, const Mat& cov) {
  const int d = static_cast<int>(p.x.cols());
  double tau = *p.prior.tau;
  Mat prec = cov.inverse();
  return 0.5 * prec - 0.5 * tau * Mat::Identity(d, d) -
         0.5 * p.x.transpose() * p.x / (p.sigma * p.sigma);
}

// Exact natural gradients: Sigma grad_mu and -2 grad_Sigma.
inline Vec conjugate_nat_grad_mu(const ConjugateProblem& p, const Vec& mu,
                                 const Mat& cov) {
  return cov * conjugate_grad_mu(p, mu);
}

inline Mat conjugate_nat_grad_prec(const ConjugateProblem& p, const Mat& cov) {
  return -2.0 * conjugate_grad_sigma(p, cov);
}

}  // namespace testsupport
