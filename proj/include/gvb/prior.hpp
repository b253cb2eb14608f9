#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <utility>

#include "gvb/spd.hpp"
#include "gvb/types.hpp"

namespace gvb {

// Gaussian prior over the unconstrained parameters, either isotropic
// (scalar precision tau, the common large-problem choice) or with a full
// SPD precision. A custom log density can be plugged in for non-Gaussian
// priors; those work with the h-function estimator only.
struct PriorSpec {
  Vec mu0;
  std::optional<double> tau;  // isotropic precision
  std::optional<Mat> prec0;   // general SPD precision
  std::function<double(const Vec&)> custom_log_pdf;

  // Caches for the general case.
  double log_det_prec0 = 0.0;

  bool gaussian() const { return !custom_log_pdf; }
  bool isotropic() const { return gaussian() && tau.has_value(); }

  double log_pdf(const Vec& psi) const {
    if (custom_log_pdf) return custom_log_pdf(psi);
    require_same_dim(psi.size(), mu0.size(), "prior log_pdf");
    constexpr double log2pi = 1.8378770664093454836;
    const double d = static_cast<double>(psi.size());
    Vec dev = psi - mu0;
    if (tau) {
      return -0.5 * d * log2pi + 0.5 * d * std::log(*tau) -
             0.5 * (*tau) * dev.squaredNorm();
    }
    return -0.5 * d * log2pi + 0.5 * log_det_prec0 -
           0.5 * dev.dot((*prec0) * dev);
  }

  // Precision restricted to a block of coordinates. Only the isotropic
  // form is meaningful across arbitrary blocks; the general form is used
  // with single-block (full) posteriors.
  double tau_or_throw() const {
    if (!tau) throw std::invalid_argument("prior: isotropic precision required");
    return *tau;
  }
};

inline PriorSpec make_isotropic_prior(Vec mu0, double tau) {
  if (!(tau > 0.0))
    throw std::invalid_argument("make_isotropic_prior: tau must be positive");
  PriorSpec p;
  p.mu0 = std::move(mu0);
  p.tau = tau;
  return p;
}

inline PriorSpec make_gaussian_prior(Vec mu0, const Mat& prec0) {
  require_same_dim(mu0.size(), prec0.rows(), "make_gaussian_prior");
  PriorSpec p;
  p.mu0 = std::move(mu0);
  Mat l = cholesky(symmetrize(prec0));
  p.prec0 = symmetrize(prec0);
  p.log_det_prec0 = 2.0 * l.diagonal().array().log().sum();
  return p;
}

inline PriorSpec make_custom_prior(std::function<double(const Vec&)> log_pdf) {
  PriorSpec p;
  p.custom_log_pdf = std::move(log_pdf);
  return p;
}

}  // namespace gvb
