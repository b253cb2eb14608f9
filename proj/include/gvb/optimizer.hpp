#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gvb/estimators.hpp"
#include "gvb/gaussian.hpp"
#include "gvb/prior.hpp"
#include "gvb/rng.hpp"
#include "gvb/spd.hpp"
#include "gvb/types.hpp"

// The training loops: natural-gradient steps with retraction on the
// precision (the exact-manifold update) or on the covariance (the
// approximate baseline), momentum carried by vector transport, adaptive
// learning rate, moving-average smoothing of the lower bound and
// patience-based stopping.
//
// One run is a sequential state machine; concurrent runs need independent
// seeds. The returned solution is the state at the best smoothed lower
// bound, not the last iterate.

namespace gvb {

enum class OptimizerKind { Emgvb, Mgvb };

struct TrainerConfig {
  double beta = 0.01;   // learning rate, in (0,1)
  double omega = 0.4;   // momentum weight, in (0,1)
  int draws = 75;       // S, posterior draws per iteration
  int window = 30;      // w, moving-average window for the lower bound
  int patience = 500;   // P
  int max_iters = 1200;
  int schedule_knee = 1000;  // t'
  std::optional<double> clip;       // l_max
  std::optional<double> clip_init;  // l_max for the first `window` iterations
  EstimatorKind estimator = EstimatorKind::GaussianPriorLogLik;
  bool control_variates = true;
  std::uint64_t seed = 1;
  bool store_precision = true;

  void validate() const {
    if (!(beta > 0.0 && beta < 1.0))
      throw std::invalid_argument("config: beta must lie in (0,1)");
    if (!(omega > 0.0 && omega < 1.0))
      throw std::invalid_argument("config: omega must lie in (0,1)");
    if (draws < 1) throw std::invalid_argument("config: draws must be >= 1");
    if (window < 1) throw std::invalid_argument("config: window must be >= 1");
    if (patience < 1) throw std::invalid_argument("config: patience must be >= 1");
    if (max_iters < 0) throw std::invalid_argument("config: max_iters must be >= 0");
    if (max_iters > 0 && window > max_iters)
      throw std::invalid_argument("config: window must not exceed max_iters");
    if (max_iters > 0 && schedule_knee > max_iters)
      throw std::invalid_argument("config: schedule knee must not exceed max_iters");
    if (clip && !(*clip > 0.0))
      throw std::invalid_argument("config: clip threshold must be positive");
    if (clip_init && !(*clip_init > 0.0))
      throw std::invalid_argument("config: initial clip threshold must be positive");
  }
};

// beta for t <= t', then beta t'/t.
inline double lr_schedule(double beta, int t, int t_prime) {
  if (t < 1) throw std::invalid_argument("lr_schedule: t must be >= 1");
  if (t <= t_prime) return beta;
  return beta * static_cast<double>(t_prime) / static_cast<double>(t);
}

struct TraceRow {
  int iter = 0;  // 1-based
  double lb_raw = 0.0;
  double lb_smooth = 0.0;
  double lb_best = 0.0;  // best smoothed value so far
  double beta_t = 0.0;
  bool clipped = false;
  Vec mu;
  Vec prec_flat;  // concatenated precision entries (diag or per-block), optional
};

struct RunTrace {
  std::vector<TraceRow> rows;
  int window = 1;
  int best_iter = 0;
  double best_smooth = -std::numeric_limits<double>::infinity();

  int iterations() const { return static_cast<int>(rows.size()); }

  // Appends a row, computing the moving average over the last min(t, w)
  // raw values. Returns true when the best smoothed value improved.
  bool push(TraceRow row) {
    rows.push_back(std::move(row));
    auto& r = rows.back();
    r.iter = iterations();
    const int span = std::min(r.iter, window);
    double acc = 0.0;
    for (int i = 0; i < span; ++i) acc += rows[rows.size() - 1 - i].lb_raw;
    r.lb_smooth = acc / span;
    bool improved = r.lb_smooth > best_smooth;
    if (improved) {
      best_smooth = r.lb_smooth;
      best_iter = r.iter;
    }
    r.lb_best = best_smooth;
    return improved;
  }
};

// True once t_max is reached or the best smoothed lower bound has not
// improved for P consecutive iterations.
inline bool should_stop(const RunTrace& trace, int patience, int max_iters) {
  if (trace.rows.empty()) throw std::invalid_argument("should_stop: empty trace");
  const int t = trace.iterations();
  if (t >= max_iters) return true;
  return (t - trace.best_iter) >= patience;
}

namespace detail {

inline Vec flatten_precision(const VariationalState& state) {
  if (state.is_diagonal()) return state.prec_diag;
  int total = 0;
  for (const auto& b : state.blocks) total += b.dim() * b.dim();
  Vec out(total);
  int at = 0;
  for (const auto& b : state.blocks) {
    Eigen::Map<const Vec> flat(b.prec.data(), b.dim() * b.dim());
    out.segment(at, b.dim() * b.dim()) = flat;
    at += b.dim() * b.dim();
  }
  return out;
}

// Parameter update with the current momentum: mu moves along beta_t*mom_mu,
// the manifold part retracts along beta_t*mom_tan. On RetractionFailed the
// whole step retries with beta_t halved, up to five times. Also returns the
// momentum transported to the new tangent space.
struct StepOutcome {
  VariationalState state;
  NatGradPair transported;
};

inline StepOutcome step_params(const VariationalState& state, const NatGradPair& mom,
                               double beta_t, OptimizerKind kind) {
  const bool precision_geom = kind == OptimizerKind::Emgvb;
  for (int attempt = 0;; ++attempt) {
    try {
      StepOutcome out;
      Vec new_mu = state.mu + beta_t * mom.mu;
      if (state.is_diagonal()) {
        Vec xi = beta_t * mom.prec_diag;
        Vec var = precision_geom ? state.prec_diag
                                 : Vec(state.prec_diag.cwiseInverse());
        Vec inv_var = precision_geom ? Vec(state.prec_diag.cwiseInverse())
                                     : state.prec_diag;
        Vec candidate =
            var + xi + 0.5 * (xi.cwiseProduct(inv_var)).cwiseProduct(xi);
        for (int i = 0; i < candidate.size(); ++i)
          if (!(candidate(i) > 0.0))
            throw RetractionFailedError("diagonal retraction left the positive cone");
        Vec new_prec = precision_geom ? candidate : Vec(candidate.cwiseInverse());
        out.state = make_diagonal_state(std::move(new_mu), std::move(new_prec));
        // transport: E = sqrt(var_new / var_old) per coordinate
        Vec e = candidate.cwiseProduct(inv_var).cwiseSqrt();
        out.transported = mom;
        out.transported.prec_diag =
            (e.cwiseProduct(mom.prec_diag)).cwiseProduct(e);
        return out;
      }
      std::vector<Mat> new_vars(state.blocks.size());
      for (std::size_t i = 0; i < state.blocks.size(); ++i) {
        const auto& b = state.blocks[i];
        const Mat& var = precision_geom ? b.prec : b.cov;
        const Mat& inv_var = precision_geom ? b.cov : b.prec;
        new_vars[i] = retract(var, inv_var, beta_t * mom.prec[i]);
      }
      std::vector<int> sizes;
      std::vector<Mat> new_precs(new_vars.size());
      for (std::size_t i = 0; i < new_vars.size(); ++i) {
        sizes.push_back(static_cast<int>(new_vars[i].rows()));
        new_precs[i] = precision_geom ? new_vars[i]
                                      : spd_inverse(new_vars[i]).inverse;
      }
      if (state.blocks.size() == 1 &&
          state.structure.kind == PosteriorStructure::Kind::Full)
        out.state = make_full_state(std::move(new_mu), new_precs[0]);
      else
        out.state = make_block_state(std::move(new_mu), sizes, new_precs);
      out.transported = mom;
      for (std::size_t i = 0; i < state.blocks.size(); ++i) {
        const auto& b_old = state.blocks[i];
        const auto& b_new = out.state.blocks[i];
        const Mat& var_new = precision_geom ? b_new.prec : b_new.cov;
        const Mat& inv_var_old = precision_geom ? b_old.cov : b_old.prec;
        out.transported.prec[i] =
            transport(precision_geom ? b_old.prec : b_old.cov, inv_var_old,
                      var_new, mom.prec[i]);
      }
      return out;
    } catch (const RetractionFailedError&) {
      if (attempt >= 5)
        throw RetractionFailedError(
            "retraction failed after 5 step halvings (beta_t reached " +
            std::to_string(beta_t) + ")");
      beta_t *= 0.5;
    }
  }
}

inline NatGradPair mix_momentum(const NatGradPair& transported,
                                const NatGradPair& grads, double omega) {
  NatGradPair out;
  out.mu = omega * transported.mu + (1.0 - omega) * grads.mu;
  if (transported.prec_diag.size() > 0)
    out.prec_diag =
        omega * transported.prec_diag + (1.0 - omega) * grads.prec_diag;
  out.prec.resize(transported.prec.size());
  for (std::size_t i = 0; i < transported.prec.size(); ++i)
    out.prec[i] = omega * transported.prec[i] + (1.0 - omega) * grads.prec[i];
  return out;
}

}  // namespace detail

// One optimizer step in the spec's shape: parameters move along the current
// momentum, then the momentum mixes the transported old value with the
// fresh gradient estimate. The run loop below uses the two phases
// separately so the fresh gradients can be drawn at the updated state.
inline std::pair<VariationalState, NatGradPair> emgvb_step(
    const VariationalState& state, const NatGradPair& mom,
    const NatGradPair& grads, double beta_t, double omega) {
  auto out = detail::step_params(state, mom, beta_t, OptimizerKind::Emgvb);
  return {std::move(out.state),
          detail::mix_momentum(out.transported, grads, omega)};
}

inline std::pair<VariationalState, NatGradPair> mgvb_step(
    const VariationalState& state, const NatGradPair& mom,
    const NatGradPair& grads, double beta_t, double omega) {
  auto out = detail::step_params(state, mom, beta_t, OptimizerKind::Mgvb);
  return {std::move(out.state),
          detail::mix_momentum(out.transported, grads, omega)};
}

struct RunResult {
  VariationalState state;  // iterate at the best smoothed lower bound
  RunTrace trace;
  bool stopped_by_patience = false;
};

namespace detail {

template <class Model>
struct EvalBatch {
  DrawBatch batch;
  Vec h;
};

template <class Model>
EvalBatch<Model> draw_and_evaluate(const Model& model, const PriorSpec& prior,
                                   const VariationalState& state,
                                   const TrainerConfig& cfg, RngStream& rng) {
  EvalBatch<Model> out;
  out.batch.thetas = state.sample(cfg.draws, rng);
  out.batch.logf.resize(cfg.draws);
  out.h.resize(cfg.draws);
  for (int s = 0; s < cfg.draws; ++s) {
    Vec theta = out.batch.thetas.row(s).transpose();
    double ll = model.loglik(theta);
    double hval = ll + prior.log_pdf(theta) - log_pdf(state, theta);
    out.h(s) = hval;
    out.batch.logf(s) =
        cfg.estimator == EstimatorKind::GaussianPriorLogLik ? ll : hval;
  }
  return out;
}

inline NatGradPair estimate(const VariationalState& state, const PriorSpec& prior,
                            const DrawBatch& batch, const TrainerConfig& cfg,
                            OptimizerKind kind, int iter) {
  EstimatorOptions opts;
  opts.control_variates = cfg.control_variates;
  opts.clip_norm = (iter <= cfg.window && cfg.clip_init) ? cfg.clip_init : cfg.clip;
  const bool gauss = cfg.estimator == EstimatorKind::GaussianPriorLogLik;
  if (kind == OptimizerKind::Mgvb)
    return estimate_natgrads_mgvb(state, gauss ? &prior : nullptr, batch, opts);
  if (gauss) return estimate_natgrads_gaussprior(state, prior, batch, opts);
  return estimate_natgrads_h(state, batch, opts);
}

}  // namespace detail

// Algorithm: draw, estimate, initialize momentum with the first gradients,
// then loop update -> draw -> estimate -> momentum -> lower bound -> stop.
template <class Model>
RunResult run(const Model& model, const PriorSpec& prior, const TrainerConfig& cfg,
              OptimizerKind kind, const VariationalState& init) {
  if (cfg.max_iters == 0) {
    RunResult out{init, {}, false};
    out.trace.window = cfg.window;
    return out;
  }
  cfg.validate();

  RngStream rng(cfg.seed);
  VariationalState state = init;
  RunResult out{init, {}, false};
  out.trace.window = cfg.window;

  auto eval = detail::draw_and_evaluate(model, prior, state, cfg, rng);
  NatGradPair grads = detail::estimate(state, prior, eval.batch, cfg, kind, 1);
  NatGradPair mom = grads;

  for (int t = 1;; ++t) {
    double beta_t = lr_schedule(cfg.beta, t, cfg.schedule_knee);
    detail::StepOutcome stepped;
    try {
      stepped = detail::step_params(state, mom, beta_t, kind);
    } catch (const RetractionFailedError& e) {
      throw RetractionFailedError("iteration " + std::to_string(t) + ": " +
                                  e.what());
    }
    state = std::move(stepped.state);

    eval = detail::draw_and_evaluate(model, prior, state, cfg, rng);
    grads = detail::estimate(state, prior, eval.batch, cfg, kind, t);
    mom = detail::mix_momentum(stepped.transported, grads, cfg.omega);

    DrawBatch lb_batch;
    lb_batch.logf = eval.h;
    double lb_raw = estimate_lb(lb_batch);
    if (!std::isfinite(lb_raw))
      throw std::runtime_error("lower bound is not finite at iteration " +
                               std::to_string(t));

    TraceRow row;
    row.lb_raw = lb_raw;
    row.beta_t = beta_t;
    row.clipped = grads.clipped;
    row.mu = state.mu;
    if (cfg.store_precision) row.prec_flat = detail::flatten_precision(state);
    bool improved = out.trace.push(std::move(row));
    if (improved) out.state = state;

    if (should_stop(out.trace, cfg.patience, cfg.max_iters)) {
      out.stopped_by_patience = out.trace.iterations() < cfg.max_iters;
      break;
    }
  }
  return out;
}

// Block-diagonal variant: per-block means and precisions update
// independently; draws concatenate block samples and the shared per-draw
// payload feeds every block's estimator. With a single block of size d this
// is the full-covariance loop.
template <class Model>
RunResult run_block_diagonal(const Model& model, const PriorSpec& prior,
                             const TrainerConfig& cfg, OptimizerKind kind,
                             const VariationalState& init) {
  if (init.structure.kind == PosteriorStructure::Kind::Diagonal)
    throw std::invalid_argument(
        "run_block_diagonal: use the diagonal structure with run()");
  if (init.blocks.size() > 1 && !prior.isotropic())
    throw UnsupportedEstimatorError(
        "run_block_diagonal: isotropic prior required for multiple blocks");
  return run(model, prior, cfg, kind, init);
}

}  // namespace gvb
