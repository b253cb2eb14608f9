#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "gvb/prior.hpp"
#include "gvb/rng.hpp"
#include "gvb/types.hpp"

// Random-walk Metropolis sampler over the unconstrained parameters. This is
// the test oracle the optimizer results are cross-checked against, not a
// production sampler.

namespace gvb {

struct McmcResult {
  Mat chain;  // post burn-in draws, one per row
  double acceptance_rate = 0.0;
};

template <class Model>
McmcResult metropolis_sample(const Model& model, const PriorSpec& prior,
                             const Vec& init, int n_samples, double step_scale,
                             std::uint64_t seed,
                             const Vec* precond_sd = nullptr) {
  if (!(step_scale > 0.0))
    throw std::invalid_argument("metropolis_sample: step_scale must be positive");
  if (n_samples < 10)
    throw std::invalid_argument("metropolis_sample: too few samples");
  const int k = static_cast<int>(init.size());
  RngStream rng(seed);
  Vec scale = precond_sd ? *precond_sd : Vec::Ones(k);

  auto log_target = [&](const Vec& psi) {
    return prior.log_pdf(psi) + model.loglik(psi);
  };

  Mat chain(n_samples, k);
  Vec current = init;
  double current_lp = log_target(current);
  int accepted = 0;
  Vec proposal(k);
  for (int s = 0; s < n_samples; ++s) {
    for (int i = 0; i < k; ++i)
      proposal(i) = current(i) + step_scale * scale(i) * rng.normal();
    double lp = log_target(proposal);
    if (std::log(1.0 - rng.uniform() + 1e-300) < lp - current_lp) {
      current = proposal;
      current_lp = lp;
      ++accepted;
    }
    chain.row(s) = current.transpose();
  }
  const int burn = n_samples / 5;
  McmcResult out;
  out.chain = chain.bottomRows(n_samples - burn);
  out.acceptance_rate = static_cast<double>(accepted) / n_samples;
  return out;
}

// Two-stage run: a short pilot with isotropic steps estimates per-coordinate
// scales, then the main chain proposes with 2.38/sqrt(k) times those scales.
template <class Model>
McmcResult metropolis_with_pilot(const Model& model, const PriorSpec& prior,
                                 const Vec& init, int n_samples,
                                 std::uint64_t seed) {
  const int k = static_cast<int>(init.size());
  const double base = 2.38 / std::sqrt(static_cast<double>(k));
  auto pilot = metropolis_sample(model, prior, init, std::max(2000, n_samples / 10),
                                 0.5 * base, seed ^ 0x9e3779b97f4a7c15ull);
  Vec sd(k);
  for (int j = 0; j < k; ++j) {
    Vec col = pilot.chain.col(j);
    double mean = col.mean();
    double var = (col.array() - mean).square().sum() /
                 std::max<Eigen::Index>(1, col.size() - 1);
    sd(j) = std::sqrt(std::max(var, 1e-12));
  }
  Vec start = pilot.chain.row(pilot.chain.rows() - 1).transpose();
  return metropolis_sample(model, prior, start, n_samples, base, seed, &sd);
}

}  // namespace gvb
