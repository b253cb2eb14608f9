#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "gvb/types.hpp"

// The transform layer between unconstrained variational parameters psi and
// constrained model parameters theta. Coordinatewise maps expose exact
// Jacobians for back-transformed densities; joint maps (the stationarity
// budgets of the volatility models) fall back to sampling.

namespace gvb {

// Numerically stable logistic map onto (0, 1).
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw std::domain_error("logit: argument outside (0,1)");
  return std::log(p) - std::log1p(-p);
}

struct ScalarMap {
  enum class Kind { Identity, Logistic, Exp, TanhUnit };
  Kind kind = Kind::Identity;

  double to_constrained(double psi) const {
    switch (kind) {
      case Kind::Identity: return psi;
      case Kind::Logistic: return sigmoid(psi);
      case Kind::Exp: return std::exp(psi);
      case Kind::TanhUnit: return 2.0 * sigmoid(psi) - 1.0;
    }
    return psi;
  }

  double to_unconstrained(double theta) const {
    switch (kind) {
      case Kind::Identity: return theta;
      case Kind::Logistic: return logit(theta);
      case Kind::Exp:
        if (!(theta > 0.0)) throw std::domain_error("exp map: theta must be positive");
        return std::log(theta);
      case Kind::TanhUnit: return logit(0.5 * (theta + 1.0));
    }
    return theta;
  }

  // |d psi / d theta|, the Jacobian factor of the inverse map.
  double jacobian_inv_abs(double theta) const {
    switch (kind) {
      case Kind::Identity: return 1.0;
      case Kind::Logistic:
        if (!(theta > 0.0 && theta < 1.0))
          throw std::domain_error("logistic map: theta outside (0,1)");
        return 1.0 / (theta * (1.0 - theta));
      case Kind::Exp:
        if (!(theta > 0.0)) throw std::domain_error("exp map: theta must be positive");
        return 1.0 / theta;
      case Kind::TanhUnit:
        if (!(theta > -1.0 && theta < 1.0))
          throw std::domain_error("tanh map: theta outside (-1,1)");
        return 2.0 / ((1.0 + theta) * (1.0 - theta));
    }
    return 1.0;
  }
};

struct ParamTransform {
  int dim = 0;
  std::function<Vec(const Vec&)> fwd;  // psi -> theta
  std::function<Vec(const Vec&)> inv;  // theta -> psi
  // Per coordinate: the scalar map when that coordinate transforms
  // independently of the others (exact marginal densities available).
  std::vector<std::optional<ScalarMap>> coord_maps;

  Vec to_constrained(const Vec& psi) const {
    require_same_dim(psi.size(), dim, "transform");
    return fwd(psi);
  }
  Vec to_unconstrained(const Vec& theta) const {
    require_same_dim(theta.size(), dim, "transform");
    return inv(theta);
  }
  bool coordinatewise() const {
    for (const auto& m : coord_maps)
      if (!m) return false;
    return true;
  }
};

inline ParamTransform make_coordinatewise_transform(std::vector<ScalarMap> maps) {
  ParamTransform t;
  t.dim = static_cast<int>(maps.size());
  t.coord_maps.assign(maps.begin(), maps.end());
  auto shared = std::make_shared<std::vector<ScalarMap>>(std::move(maps));
  t.fwd = [shared](const Vec& psi) {
    Vec theta(psi.size());
    for (int i = 0; i < psi.size(); ++i)
      theta(i) = (*shared)[i].to_constrained(psi(i));
    return theta;
  };
  t.inv = [shared](const Vec& theta) {
    Vec psi(theta.size());
    for (int i = 0; i < theta.size(); ++i)
      psi(i) = (*shared)[i].to_unconstrained(theta(i));
    return psi;
  };
  return t;
}

inline ParamTransform make_identity_transform(int dim) {
  return make_coordinatewise_transform(
      std::vector<ScalarMap>(dim, ScalarMap{ScalarMap::Kind::Identity}));
}

// Maps (psi_omega, psi_alpha, psi_beta) to GARCH(1,1) parameters satisfying
// the stationarity conditions by construction:
//   omega = T(psi_omega), alpha = T(psi_alpha)(1 - T(psi_beta)),
//   beta = T(psi_alpha) T(psi_beta),  so alpha + beta = T(psi_alpha) < 1.
inline Vec garch_constraint_map(const Vec& psi) {
  require_same_dim(psi.size(), 3, "garch_constraint_map");
  double a = sigmoid(psi(1));
  double b = sigmoid(psi(2));
  Vec theta(3);
  theta(0) = sigmoid(psi(0));
  theta(1) = a * (1.0 - b);
  theta(2) = a * b;
  return theta;
}

inline Vec garch_constraint_map_inverse(const Vec& theta) {
  require_same_dim(theta.size(), 3, "garch_constraint_map_inverse");
  double s = theta(1) + theta(2);
  Vec psi(3);
  psi(0) = logit(theta(0));
  psi(1) = logit(s);
  psi(2) = logit(theta(2) / s);
  return psi;
}

}  // namespace gvb
