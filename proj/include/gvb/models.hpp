#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gvb/gaussian.hpp"
#include "gvb/prior.hpp"
#include "gvb/rng.hpp"
#include "gvb/transforms.hpp"
#include "gvb/types.hpp"

// Likelihood evaluators for the bundled experiments: logistic regression,
// Gaussian linear regression with unknown noise scale (HAR is this model on
// lagged realized-volatility regressors), the GARCH family, and a
// known-noise Gaussian model whose posterior is available in closed form.

namespace gvb {

constexpr double kLog2Pi = 1.8378770664093454836;

struct ModelSpec {
  std::string name;
  int dim = 0;
  ParamTransform transform;
  std::function<double(const Vec&)> loglik;  // log p(y | T(psi))
};

// ---------------------------------------------------------------------------
// Logistic regression (identity transform; coefficients unconstrained).

inline double logistic_loglik(const Vec& psi, const Mat& x, const Vec& y) {
  require_same_dim(psi.size(), x.cols(), "logistic_loglik");
  require_same_dim(y.size(), x.rows(), "logistic_loglik");
  Vec eta = x * psi;
  double out = 0.0;
  for (int i = 0; i < y.size(); ++i) {
    if (y(i) != 0.0 && y(i) != 1.0)
      throw std::invalid_argument("logistic_loglik: labels must be 0 or 1");
    // softplus(eta) = log(1 + e^eta), overflow-safe
    double softplus = std::max(eta(i), 0.0) + std::log1p(std::exp(-std::abs(eta(i))));
    out += y(i) * eta(i) - softplus;
  }
  return out;
}

inline ModelSpec make_logistic_model(std::shared_ptr<const Mat> x,
                                     std::shared_ptr<const Vec> y) {
  ModelSpec m;
  m.name = "logistic";
  m.dim = static_cast<int>(x->cols());
  m.transform = make_identity_transform(m.dim);
  m.loglik = [x, y](const Vec& psi) { return logistic_loglik(psi, *x, *y); };
  return m;
}

// ---------------------------------------------------------------------------
// Linear regression with unknown noise scale, psi_sigma = log(sigma).

inline double linreg_loglik(const Vec& psi, const Mat& x, const Vec& y) {
  require_same_dim(psi.size(), x.cols() + 1, "linreg_loglik");
  const int k = static_cast<int>(x.cols());
  double psi_sigma = psi(k);
  double sigma2 = std::exp(2.0 * psi_sigma);
  Vec resid = y - x * psi.head(k);
  return -0.5 * y.size() * kLog2Pi - y.size() * psi_sigma -
         0.5 * resid.squaredNorm() / sigma2;
}

inline ModelSpec make_linreg_model(std::shared_ptr<const Mat> x,
                                   std::shared_ptr<const Vec> y) {
  ModelSpec m;
  m.name = "linreg";
  m.dim = static_cast<int>(x->cols()) + 1;
  std::vector<ScalarMap> maps(m.dim, ScalarMap{ScalarMap::Kind::Identity});
  maps.back() = ScalarMap{ScalarMap::Kind::Exp};
  m.transform = make_coordinatewise_transform(std::move(maps));
  m.loglik = [x, y](const Vec& psi) { return linreg_loglik(psi, *x, *y); };
  return m;
}

// ---------------------------------------------------------------------------
// Gaussian likelihood with known noise scale; with a Gaussian prior the
// posterior is conjugate. Used as the offline oracle model.

inline double known_noise_gaussian_loglik(const Vec& theta, const Mat& x,
                                          const Vec& y, double sigma) {
  Vec resid = y - x * theta;
  return -0.5 * y.size() * (kLog2Pi + 2.0 * std::log(sigma)) -
         0.5 * resid.squaredNorm() / (sigma * sigma);
}

inline ModelSpec make_known_noise_gaussian_model(std::shared_ptr<const Mat> x,
                                                 std::shared_ptr<const Vec> y,
                                                 double sigma) {
  ModelSpec m;
  m.name = "conjugate_gaussian";
  m.dim = static_cast<int>(x->cols());
  m.transform = make_identity_transform(m.dim);
  m.loglik = [x, y, sigma](const Vec& psi) {
    return known_noise_gaussian_loglik(psi, *x, *y, sigma);
  };
  return m;
}

struct ExactPosterior {
  Vec mu;
  Mat prec;
  double log_evidence = 0.0;
};

inline ExactPosterior conjugate_exact_posterior(const Mat& x, const Vec& y,
                                                double sigma,
                                                const PriorSpec& prior) {
  const int k = static_cast<int>(x.cols());
  Mat prec0 = prior.isotropic()
                  ? Mat(prior.tau_or_throw() * Mat::Identity(k, k))
                  : *prior.prec0;
  Mat post_prec = prec0 + x.transpose() * x / (sigma * sigma);
  Vec rhs = prec0 * prior.mu0 + x.transpose() * y / (sigma * sigma);
  auto inv = spd_inverse(symmetrize(post_prec));
  Vec post_mu = inv.inverse * rhs;
  // log p(y) = log N(y; X mu0, sigma^2 I + X Sigma0 X^T)
  Mat cov0 = spd_inverse(prec0).inverse;
  Mat marg_cov = sigma * sigma * Mat::Identity(y.size(), y.size()) +
                 x * cov0 * x.transpose();
  auto marg = spd_inverse(symmetrize(marg_cov));
  Vec dev = y - x * prior.mu0;
  double log_det_marg = 2.0 * marg.chol_lower.diagonal().array().log().sum();
  double log_evidence = -0.5 * y.size() * kLog2Pi - 0.5 * log_det_marg -
                        0.5 * dev.dot(marg.inverse * dev);
  return {std::move(post_mu), symmetrize(post_prec), log_evidence};
}

// ---------------------------------------------------------------------------
// GARCH family.

enum class GarchFamily { Arch, Garch, Gjr, Egarch, Figarch };

struct GarchSpec {
  GarchFamily family = GarchFamily::Garch;
  int leverage = 0;  // GJR/EGARCH leverage term present; FIGARCH: phi present
  int var_lags = 1;  // variance lags q (GJR/EGARCH); 1 elsewhere
  int trunc = 1000;  // FIGARCH ARCH(inf) truncation length

  int param_count() const {
    switch (family) {
      case GarchFamily::Arch: return 2;
      case GarchFamily::Garch: return 3;
      case GarchFamily::Gjr: return 2 + 1 + var_lags;
      case GarchFamily::Egarch: return 2 + leverage + var_lags;
      case GarchFamily::Figarch: return 2 + leverage + 1;
    }
    return 0;
  }
};

struct VarianceRecursionError : std::runtime_error {
  int index;
  explicit VarianceRecursionError(int t)
      : std::runtime_error("conditional variance is not finite at index " +
                           std::to_string(t)),
        index(t) {}
};

namespace detail {

inline double sample_variance(const Vec& r) {
  double mean = r.mean();
  return (r.array() - mean).square().sum() / static_cast<double>(r.size());
}

// Fractionally-integrated ARCH(inf) weights lambda_j for FIGARCH:
//   lambda(L) = 1 - (1 - beta L)^{-1} (1 - phi L)(1 - L)^d,
// computed with the recursive fractional-difference coefficients.
inline Vec figarch_weights(double phi, double d, double beta, int trunc) {
  Vec pi(trunc + 1);
  pi(0) = 1.0;
  for (int j = 1; j <= trunc; ++j)
    pi(j) = pi(j - 1) * ((j - 1 - d) / j);
  Vec lambda(trunc + 1);
  lambda(0) = 0.0;
  double b_prev = 1.0;  // b_0
  for (int k = 1; k <= trunc; ++k) {
    double c_k = pi(k) - phi * pi(k - 1);
    double b_k = c_k + beta * b_prev;
    lambda(k) = -b_k;
    b_prev = b_k;
  }
  return lambda;
}

}  // namespace detail

// Conditional variance path on the constrained parameter space. sigma^2 at
// the first observation (and any pre-sample value) is the sample variance
// of the series. EGARCH works on log sigma^2 throughout; overflow of the
// implied variance raises VarianceRecursionError.
inline Vec garch_variance_path(const GarchSpec& spec, const Vec& params,
                               const Vec& returns,
                               double presample_var = -1.0) {
  require_same_dim(params.size(), spec.param_count(), "garch_variance_path");
  const int n = static_cast<int>(returns.size());
  if (n < 2) throw std::invalid_argument("garch_variance_path: series too short");
  const double s2 = presample_var > 0.0 ? presample_var
                                        : detail::sample_variance(returns);
  Vec sig2(n);

  auto check = [](double v, int t) {
    if (!std::isfinite(v) || !(v > 0.0)) throw VarianceRecursionError(t);
    return v;
  };

  switch (spec.family) {
    case GarchFamily::Arch: {
      double omega = params(0), alpha = params(1);
      sig2(0) = s2;
      for (int t = 1; t < n; ++t)
        sig2(t) = check(omega + alpha * returns(t - 1) * returns(t - 1), t);
      break;
    }
    case GarchFamily::Garch: {
      double omega = params(0), alpha = params(1), beta = params(2);
      sig2(0) = s2;
      for (int t = 1; t < n; ++t)
        sig2(t) = check(
            omega + alpha * returns(t - 1) * returns(t - 1) + beta * sig2(t - 1), t);
      break;
    }
    case GarchFamily::Gjr: {
      double omega = params(0), alpha = params(1), gamma = params(2);
      const int q = spec.var_lags;
      sig2(0) = s2;
      for (int t = 1; t < n; ++t) {
        double r2 = returns(t - 1) * returns(t - 1);
        double arch = (alpha + (returns(t - 1) < 0.0 ? gamma : 0.0)) * r2;
        double ma = 0.0;
        for (int j = 1; j <= q; ++j)
          ma += params(2 + j) * (t - j >= 0 ? sig2(t - j) : s2);
        sig2(t) = check(omega + arch + ma, t);
      }
      break;
    }
    case GarchFamily::Egarch: {
      double omega = params(0), alpha = params(1);
      double gamma = spec.leverage ? params(2) : 0.0;
      const int q = spec.var_lags;
      const int beta_at = 2 + spec.leverage;
      const double mean_abs_z = std::sqrt(2.0 / std::numbers::pi);
      Vec logsig2(n);
      logsig2(0) = std::log(s2);
      sig2(0) = s2;
      for (int t = 1; t < n; ++t) {
        double z = returns(t - 1) / std::sqrt(sig2(t - 1));
        double v = omega + alpha * (std::abs(z) - mean_abs_z) + gamma * z;
        for (int j = 1; j <= q; ++j)
          v += params(beta_at - 1 + j) * (t - j >= 0 ? logsig2(t - j) : std::log(s2));
        if (!std::isfinite(v) || v > 700.0) throw VarianceRecursionError(t);
        logsig2(t) = v;
        sig2(t) = check(std::exp(v), t);
      }
      break;
    }
    case GarchFamily::Figarch: {
      double omega = params(0);
      double phi = spec.leverage ? params(1) : 0.0;
      double d = params(1 + spec.leverage);
      double beta = params(2 + spec.leverage);
      Vec lambda = detail::figarch_weights(phi, d, beta, spec.trunc);
      double intercept = omega / (1.0 - beta);
      for (int t = 0; t < n; ++t) {
        double acc = intercept;
        for (int j = 1; j <= spec.trunc; ++j) {
          double r2 = (t - j >= 0) ? returns(t - j) * returns(t - j) : s2;
          acc += lambda(j) * r2;
        }
        sig2(t) = check(acc, t);
      }
      break;
    }
  }
  return sig2;
}

inline double garch_loglik_constrained(const GarchSpec& spec, const Vec& params,
                                       const Vec& returns,
                                       double presample_var = -1.0) {
  Vec sig2 = garch_variance_path(spec, params, returns, presample_var);
  double out = 0.0;
  for (int t = 0; t < returns.size(); ++t)
    out += -0.5 * (kLog2Pi + std::log(sig2(t)) + returns(t) * returns(t) / sig2(t));
  return out;
}

// Constraint transforms. Nested logistic budgets keep every image inside
// the model's stationarity region:
//   GARCH  (paper map): omega = T, alpha = s(1-b), beta = s b with s,b in (0,1)
//   GJR    : alpha + gamma/2 + sum(beta_j) = s < 1, shares via logistic splits
//   EGARCH : omega, alpha, gamma free; beta total in (-1,1), split by share
//   FIGARCH: d in (0,1), phi in (0, (1-d)/2), beta in (0, phi+d) — sufficient
//            for nonnegative ARCH(inf) weights.
inline ParamTransform make_garch_transform(const GarchSpec& spec) {
  const int k = spec.param_count();
  ParamTransform t;
  t.dim = k;
  t.coord_maps.assign(k, std::nullopt);

  switch (spec.family) {
    case GarchFamily::Arch:
      return make_coordinatewise_transform(
          {ScalarMap{ScalarMap::Kind::Logistic}, ScalarMap{ScalarMap::Kind::Logistic}});
    case GarchFamily::Garch:
      t.coord_maps[0] = ScalarMap{ScalarMap::Kind::Logistic};
      t.fwd = [](const Vec& psi) { return garch_constraint_map(psi); };
      t.inv = [](const Vec& theta) { return garch_constraint_map_inverse(theta); };
      return t;
    case GarchFamily::Gjr: {
      const int q = spec.var_lags;
      t.coord_maps[0] = ScalarMap{ScalarMap::Kind::Logistic};
      t.fwd = [q](const Vec& psi) {
        Vec theta(psi.size());
        theta(0) = sigmoid(psi(0));
        double s = sigmoid(psi(1));
        double btot = s * sigmoid(psi(3));
        double rem = s - btot;
        theta(2) = 2.0 * rem * sigmoid(psi(2));  // gamma
        theta(1) = rem * (1.0 - sigmoid(psi(2)));
        if (q == 1) {
          theta(3) = btot;
        } else {
          theta(3) = btot * sigmoid(psi(4));
          theta(4) = btot * (1.0 - sigmoid(psi(4)));
        }
        return theta;
      };
      t.inv = [q](const Vec& theta) {
        Vec psi(theta.size());
        double btot = theta(3) + (q == 2 ? theta(4) : 0.0);
        double s = theta(1) + 0.5 * theta(2) + btot;
        double rem = s - btot;
        psi(0) = logit(theta(0));
        psi(1) = logit(s);
        psi(2) = logit(0.5 * theta(2) / rem);
        psi(3) = logit(btot / s);
        if (q == 2) psi(4) = logit(theta(3) / btot);
        return psi;
      };
      return t;
    }
    case GarchFamily::Egarch: {
      const int q = spec.var_lags;
      const int head = 2 + spec.leverage;
      if (q == 1) {
        std::vector<ScalarMap> maps(head, ScalarMap{ScalarMap::Kind::Identity});
        maps.push_back(ScalarMap{ScalarMap::Kind::TanhUnit});
        return make_coordinatewise_transform(std::move(maps));
      }
      for (int i = 0; i < head; ++i)
        t.coord_maps[i] = ScalarMap{ScalarMap::Kind::Identity};
      t.fwd = [head](const Vec& psi) {
        Vec theta = psi;
        double s = 2.0 * sigmoid(psi(head)) - 1.0;
        double share = sigmoid(psi(head + 1));
        theta(head) = s * share;
        theta(head + 1) = s * (1.0 - share);
        return theta;
      };
      t.inv = [head](const Vec& theta) {
        Vec psi = theta;
        double s = theta(head) + theta(head + 1);
        psi(head) = logit(0.5 * (s + 1.0));
        psi(head + 1) = logit(theta(head) / s);
        return psi;
      };
      return t;
    }
    case GarchFamily::Figarch: {
      const int p = spec.leverage;
      t.coord_maps[0] = ScalarMap{ScalarMap::Kind::Logistic};
      t.fwd = [p](const Vec& psi) {
        Vec theta(psi.size());
        theta(0) = sigmoid(psi(0));
        double d = sigmoid(psi(1 + p));
        double phi = p ? sigmoid(psi(1)) * 0.5 * (1.0 - d) : 0.0;
        double beta = sigmoid(psi(2 + p)) * (phi + d);
        if (p) theta(1) = phi;
        theta(1 + p) = d;
        theta(2 + p) = beta;
        return theta;
      };
      t.inv = [p](const Vec& theta) {
        Vec psi(theta.size());
        double phi = p ? theta(1) : 0.0;
        double d = theta(1 + p);
        psi(0) = logit(theta(0));
        if (p) psi(1) = logit(phi / (0.5 * (1.0 - d)));
        psi(1 + p) = logit(d);
        psi(2 + p) = logit(theta(2 + p) / (phi + d));
        return psi;
      };
      return t;
    }
  }
  return t;
}

inline ModelSpec make_garch_model(const GarchSpec& spec,
                                  std::shared_ptr<const Vec> returns) {
  ModelSpec m;
  switch (spec.family) {
    case GarchFamily::Arch: m.name = "arch"; break;
    case GarchFamily::Garch: m.name = "garch"; break;
    case GarchFamily::Gjr: m.name = "gjr"; break;
    case GarchFamily::Egarch: m.name = "egarch"; break;
    case GarchFamily::Figarch: m.name = "figarch"; break;
  }
  m.dim = spec.param_count();
  m.transform = make_garch_transform(spec);
  ParamTransform transform = m.transform;
  m.loglik = [spec, transform, returns](const Vec& psi) {
    return garch_loglik_constrained(spec, transform.to_constrained(psi), *returns);
  };
  return m;
}

inline double garch_family_loglik(const GarchSpec& spec, const Vec& psi,
                                  const Vec& returns) {
  ParamTransform t = make_garch_transform(spec);
  return garch_loglik_constrained(spec, t.to_constrained(psi), returns);
}

// Simulates a return series from constrained parameters (used by the
// synthetic data generators). A burn-in prefix is discarded.
inline Vec simulate_garch(const GarchSpec& spec, const Vec& params, int n,
                          RngStream& rng, int burn_in = 500) {
  const int total = n + burn_in;
  Vec r(total);
  switch (spec.family) {
    case GarchFamily::Arch:
    case GarchFamily::Garch:
    case GarchFamily::Gjr: {
      double omega = params(0), alpha = params(1);
      double gamma = spec.family == GarchFamily::Gjr ? params(2) : 0.0;
      double persist = alpha + 0.5 * gamma;
      const int beta_at = spec.family == GarchFamily::Gjr ? 3 : 2;
      double beta_sum = 0.0;
      if (spec.family != GarchFamily::Arch)
        for (int j = 0; j < spec.var_lags; ++j) beta_sum += params(beta_at + j);
      double uncond = omega / std::max(1e-12, 1.0 - persist - beta_sum);
      std::vector<double> sig2(total, uncond);
      for (int t = 0; t < total; ++t) {
        if (t > 0) {
          double r2 = r(t - 1) * r(t - 1);
          double arch = (alpha + (r(t - 1) < 0.0 ? gamma : 0.0)) * r2;
          double ma = 0.0;
          if (spec.family != GarchFamily::Arch)
            for (int j = 1; j <= spec.var_lags; ++j)
              ma += params(beta_at - 1 + j) * (t - j >= 0 ? sig2[t - j] : uncond);
          sig2[t] = omega + arch + ma;
        }
        r(t) = std::sqrt(sig2[t]) * rng.normal();
      }
      break;
    }
    case GarchFamily::Egarch: {
      double omega = params(0), alpha = params(1);
      double gamma = spec.leverage ? params(2) : 0.0;
      const int beta_at = 2 + spec.leverage;
      const double mean_abs_z = std::sqrt(2.0 / std::numbers::pi);
      double beta_sum = 0.0;
      for (int j = 0; j < spec.var_lags; ++j) beta_sum += params(beta_at + j);
      double uncond_log = omega / std::max(1e-12, 1.0 - beta_sum);
      std::vector<double> ls2(total, uncond_log);
      double z_prev = 0.0;
      for (int t = 0; t < total; ++t) {
        if (t > 0) {
          double v = omega + alpha * (std::abs(z_prev) - mean_abs_z) + gamma * z_prev;
          for (int j = 1; j <= spec.var_lags; ++j)
            v += params(beta_at - 1 + j) * (t - j >= 0 ? ls2[t - j] : uncond_log);
          ls2[t] = v;
        }
        double sig = std::exp(0.5 * ls2[t]);
        double z = rng.normal();
        r(t) = sig * z;
        z_prev = z;
      }
      break;
    }
    case GarchFamily::Figarch: {
      double omega = params(0);
      double phi = spec.leverage ? params(1) : 0.0;
      double d = params(1 + spec.leverage);
      double beta = params(2 + spec.leverage);
      Vec lambda = detail::figarch_weights(phi, d, beta, spec.trunc);
      double intercept = omega / (1.0 - beta);
      double base = intercept / std::max(1e-12, 1.0 - lambda.sum());
      for (int t = 0; t < total; ++t) {
        double acc = intercept;
        for (int j = 1; j <= std::min(spec.trunc, t); ++j)
          acc += lambda(j) * r(t - j) * r(t - j);
        for (int j = t + 1; j <= spec.trunc; ++j) acc += lambda(j) * base;
        r(t) = std::sqrt(acc) * rng.normal();
      }
      break;
    }
  }
  return r.tail(n);
}

// ---------------------------------------------------------------------------
// Back-transformed densities: the density of theta = T(psi) under a
// Gaussian q on psi is N(T^{-1}(theta); mu, Sigma) |det J_{T^{-1}}(theta)|.

// Exact joint density at constrained points; coordinatewise transforms only.
inline Vec back_transform_density(const VariationalState& state,
                                  const ParamTransform& transform,
                                  const Mat& thetas) {
  if (!transform.coordinatewise())
    throw std::invalid_argument(
        "back_transform_density: joint transform needs the sampling variant");
  Vec out(thetas.rows());
  for (int r = 0; r < thetas.rows(); ++r) {
    Vec theta = thetas.row(r).transpose();
    Vec psi = transform.to_unconstrained(theta);
    double log_jac = 0.0;
    for (int i = 0; i < theta.size(); ++i)
      log_jac += std::log(transform.coord_maps[i]->jacobian_inv_abs(theta(i)));
    out(r) = std::exp(log_pdf(state, psi) + log_jac);
  }
  return out;
}

// Exact marginal density of one constrained coordinate when that coordinate
// transforms independently; the psi marginal is then univariate Gaussian.
inline Vec marginal_density_exact(const VariationalState& state,
                                  const ScalarMap& map, int coord,
                                  const Vec& grid) {
  double mu = state.mu(coord);
  double var = state.is_diagonal() ? 1.0 / state.prec_diag(coord)
                                   : state.dense_cov()(coord, coord);
  double sd = std::sqrt(var);
  Vec out(grid.size());
  for (int i = 0; i < grid.size(); ++i) {
    double psi = map.to_unconstrained(grid(i));
    double z = (psi - mu) / sd;
    double normal = std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
    out(i) = normal * map.jacobian_inv_abs(grid(i));
  }
  return out;
}

// Sampling-based marginal density (Gaussian kernel, Silverman bandwidth)
// for coordinates tied into a joint transform.
inline Vec marginal_density_kde(const VariationalState& state,
                                const ParamTransform& transform, int coord,
                                const Vec& grid, int draws, RngStream& rng) {
  Mat psis = state.sample(draws, rng);
  Vec values(draws);
  for (int s = 0; s < draws; ++s)
    values(s) = transform.to_constrained(psis.row(s).transpose())(coord);
  double mean = values.mean();
  double sd = std::sqrt((values.array() - mean).square().sum() /
                        std::max(1, draws - 1));
  double bw = 1.06 * sd * std::pow(static_cast<double>(draws), -0.2);
  if (!(bw > 0.0)) bw = 1e-6;
  Vec out = Vec::Zero(grid.size());
  const double norm = 1.0 / (draws * bw * std::sqrt(2.0 * std::numbers::pi));
  for (int i = 0; i < grid.size(); ++i) {
    double acc = 0.0;
    for (int s = 0; s < draws; ++s) {
      double z = (grid(i) - values(s)) / bw;
      acc += std::exp(-0.5 * z * z);
    }
    out(i) = acc * norm;
  }
  return out;
}

inline double prior_logpdf(const PriorSpec& prior, const Vec& psi) {
  return prior.log_pdf(psi);
}

}  // namespace gvb
