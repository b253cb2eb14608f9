#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gvb/config.hpp"
#include "gvb/data.hpp"
#include "gvb/estimators.hpp"
#include "gvb/gaussian.hpp"
#include "gvb/mcmc.hpp"
#include "gvb/metrics.hpp"
#include "gvb/models.hpp"
#include "gvb/optimizer.hpp"
#include "gvb/prior.hpp"
#include "gvb/types.hpp"

// Experiment orchestration: configuration to dataset, model, prior and
// trainer; runs the optimizer; computes the metric report; exports the
// trace CSV, the result JSON and optional marginal-density grids. File
// writes go through temp-then-rename so failures leave no partial
// artifacts.

namespace gvb {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct ExperimentSetup {
  std::string model_kind;
  Dataset data;
  ModelSpec model;  // likelihood over the training slice
  PriorSpec prior;
  TrainerConfig trainer;
  OptimizerKind optimizer = OptimizerKind::Emgvb;
  VariationalState init;
  GarchSpec garch;
  double noise_sigma = 1.0;  // conjugate model
  bool series_model = false;
  int predictive_draws = 0;
  // output
  fs::path out_dir;
  std::string trace_name = "trace.csv";
  std::string result_name = "result.json";
  int density_points = 0;
  int density_draws = 4096;
  Config raw;
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline Vec to_vec(const std::vector<double>& v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = v[i];
  return out;
}

inline json vec_to_json(const Vec& v) {
  json out = json::array();
  for (int i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline json mat_to_json(const Mat& m) {
  json out = json::array();
  for (int r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(row);
  }
  return out;
}

inline Mat mat_from_json(const json& j) {
  Mat m(j.size(), j.empty() ? 0 : j[0].size());
  for (std::size_t r = 0; r < j.size(); ++r)
    for (std::size_t c = 0; c < j[r].size(); ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c];
  return m;
}

inline Vec vec_from_json(const json& j) {
  Vec v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i];
  return v;
}

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "emgvb") return OptimizerKind::Emgvb;
  if (s == "mgvb") return OptimizerKind::Mgvb;
  throw ConfigError("unknown optimizer '" + s + "' (expected emgvb or mgvb)");
}

inline EstimatorKind parse_estimator(const std::string& s) {
  if (s == "loglik") return EstimatorKind::GaussianPriorLogLik;
  if (s == "hfunc") return EstimatorKind::HFunction;
  throw ConfigError("unknown estimator '" + s + "' (expected loglik or hfunc)");
}

struct StructureSpec {
  PosteriorStructure::Kind kind = PosteriorStructure::Kind::Full;
  std::vector<int> sizes;
};

inline StructureSpec parse_structure(const std::string& s) {
  StructureSpec out;
  if (s == "full") return out;
  if (s == "diagonal") {
    out.kind = PosteriorStructure::Kind::Diagonal;
    return out;
  }
  if (s.rfind("block:", 0) == 0) {
    out.kind = PosteriorStructure::Kind::Block;
    std::stringstream ss(s.substr(6));
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      int v = std::atoi(cell.c_str());
      if (v <= 0) throw ConfigError("bad block size in structure '" + s + "'");
      out.sizes.push_back(v);
    }
    if (out.sizes.empty()) throw ConfigError("empty block list in structure");
    return out;
  }
  throw ConfigError("unknown structure '" + s +
                    "' (expected full, diagonal or block:s1,s2,...)");
}

inline GarchSpec parse_garch_spec(const std::string& kind, const Config& cfg) {
  GarchSpec g;
  if (kind == "arch") {
    g.family = GarchFamily::Arch;
  } else if (kind == "garch") {
    g.family = GarchFamily::Garch;
  } else if (kind == "gjr") {
    g.family = GarchFamily::Gjr;
    g.leverage = 1;
    g.var_lags = cfg.get_int_or("model", "var_lags", 1);
  } else if (kind == "egarch") {
    g.family = GarchFamily::Egarch;
    g.leverage = cfg.get_int_or("model", "leverage", 1);
    g.var_lags = cfg.get_int_or("model", "var_lags", 1);
  } else if (kind == "figarch") {
    g.family = GarchFamily::Figarch;
    g.leverage = cfg.get_int_or("model", "leverage", 1);
    g.trunc = cfg.get_int_or("model", "trunc", 1000);
  } else {
    throw ConfigError("not a volatility model: " + kind);
  }
  if (g.var_lags < 1 || g.var_lags > 2)
    throw ConfigError("var_lags must be 1 or 2");
  return g;
}

inline bool is_series_kind(const std::string& kind) {
  return kind == "arch" || kind == "garch" || kind == "gjr" || kind == "egarch" ||
         kind == "figarch";
}

// z-scores the continuous feature columns (more than two distinct training
// values) using training statistics; leaves binaries and the intercept as
// they are.
inline void standardize_features(Dataset& d) {
  for (int c = 0; c < d.x.cols(); ++c) {
    Vec col = d.x.col(c).head(d.split_index);
    double lo = col.minCoeff(), hi = col.maxCoeff();
    bool binaryish = true;
    for (int r = 0; r < col.size(); ++r)
      if (col(r) != lo && col(r) != hi) { binaryish = false; break; }
    if (binaryish) continue;
    double mean = col.mean();
    double sd = std::sqrt((col.array() - mean).square().sum() /
                          std::max<Eigen::Index>(1, col.size() - 1));
    if (!(sd > 0.0)) continue;
    d.x.col(c) = (d.x.col(c).array() - mean) / sd;
  }
}

inline Dataset build_dataset(const Config& cfg, const std::string& model_kind) {
  Dataset d;
  std::string kind = cfg.get_or("data", "kind", "csv");
  double split = cfg.get_double_or("data", "split", 0.75);
  std::uint64_t dseed =
      static_cast<std::uint64_t>(cfg.get_double_or("data", "data_seed", 7));

  if (kind == "csv") {
    CsvTable table = load_csv(cfg.get("data", "path"));
    if (is_series_kind(model_kind)) {
      std::string col = cfg.get_or("data", "series_column", table.columns.front());
      d.series = table.values.col(table.column_index(col));
      if (cfg.get_bool_or("data", "demean", true))
        d.series.array() -= d.series.mean();
      d.split_index = split_point(static_cast<int>(d.series.size()), split);
      return d;
    }
    if (model_kind == "har") {
      std::string col = cfg.get_or("data", "series_column", table.columns.front());
      Vec rv = table.values.col(table.column_index(col));
      auto har = build_har_design(rv);
      d.x = har.x;
      d.y = har.y;
      d.feature_names = {"intercept", "rv_d", "rv_w", "rv_m"};
      d.split_index = split_point(static_cast<int>(d.y.size()), split);
      return d;
    }
    std::string target = cfg.get("data", "target");
    int target_idx = table.column_index(target);
    std::vector<int> feat_idx;
    std::string features = cfg.get_or("data", "features", "*");
    if (features == "*") {
      for (std::size_t c = 0; c < table.columns.size(); ++c)
        if (static_cast<int>(c) != target_idx) feat_idx.push_back(static_cast<int>(c));
    } else {
      std::stringstream ss(features);
      std::string cell;
      while (std::getline(ss, cell, ',')) {
        auto b = cell.find_first_not_of(" \t");
        auto e = cell.find_last_not_of(" \t");
        feat_idx.push_back(table.column_index(cell.substr(b, e - b + 1)));
      }
    }
    bool intercept = cfg.get_bool_or("data", "intercept", true);
    const int n = static_cast<int>(table.values.rows());
    const int k = static_cast<int>(feat_idx.size()) + (intercept ? 1 : 0);
    d.x.resize(n, k);
    int at = 0;
    if (intercept) {
      d.x.col(0).setOnes();
      d.feature_names.push_back("intercept");
      at = 1;
    }
    for (int f : feat_idx) {
      d.x.col(at++) = table.values.col(f);
      d.feature_names.push_back(table.columns[static_cast<std::size_t>(f)]);
    }
    d.y = table.values.col(target_idx);
    d.split_index = split_point(n, split);
    if (cfg.get_bool_or("data", "standardize", false)) standardize_features(d);
    return d;
  }

  int n = cfg.get_int_or("data", "n", 500);
  int k = cfg.get_int_or("data", "k", 5);
  double sigma = cfg.get_double_or("data", "sigma", 1.0);
  if (kind == "synthetic_logistic") {
    d = synthetic_logistic(n, k, dseed);
  } else if (kind == "synthetic_linreg") {
    d = synthetic_linreg(n, k, sigma, dseed);
  } else if (kind == "synthetic_conjugate") {
    d = synthetic_conjugate(n, k, sigma, dseed);
  } else if (kind == "synthetic_har") {
    Vec rv = synthetic_rv_series(n + 22, dseed);
    auto har = build_har_design(rv);
    d.x = har.x;
    d.y = har.y;
    d.feature_names = {"intercept", "rv_d", "rv_w", "rv_m"};
  } else if (kind == "synthetic_garch") {
    GarchSpec g = parse_garch_spec(model_kind, cfg);
    Vec params = to_vec(cfg.get_list("data", "true_params"));
    require_same_dim(params.size(), g.param_count(), "synthetic_garch true_params");
    d.series = synthetic_garch_series(g, params, n, dseed);
    if (cfg.get_bool_or("data", "demean", true))
      d.series.array() -= d.series.mean();
    d.split_index = split_point(static_cast<int>(d.series.size()), split);
    return d;
  } else {
    throw ConfigError("unknown data kind '" + kind + "'");
  }
  d.split_index = split_point(static_cast<int>(d.y.size()), split);
  return d;
}

}  // namespace detail

inline ExperimentSetup build_experiment(const Config& cfg) {
  ExperimentSetup s;
  s.raw = cfg;
  s.model_kind = cfg.get("model", "kind");
  s.series_model = detail::is_series_kind(s.model_kind);
  s.data = detail::build_dataset(cfg, s.model_kind);

  if (s.series_model) {
    s.garch = detail::parse_garch_spec(s.model_kind, cfg);
    auto train = std::make_shared<const Vec>(s.data.series_train());
    s.model = make_garch_model(s.garch, train);
  } else if (s.model_kind == "logistic") {
    auto x = std::make_shared<const Mat>(s.data.x_train());
    auto y = std::make_shared<const Vec>(s.data.y_train());
    s.model = make_logistic_model(x, y);
  } else if (s.model_kind == "linreg" || s.model_kind == "har") {
    auto x = std::make_shared<const Mat>(s.data.x_train());
    auto y = std::make_shared<const Vec>(s.data.y_train());
    s.model = make_linreg_model(x, y);
  } else if (s.model_kind == "conjugate_gaussian") {
    s.noise_sigma = cfg.get_double_or("model", "noise_sigma", 1.0);
    auto x = std::make_shared<const Mat>(s.data.x_train());
    auto y = std::make_shared<const Vec>(s.data.y_train());
    s.model = make_known_noise_gaussian_model(x, y, s.noise_sigma);
  } else {
    throw ConfigError("unknown model kind '" + s.model_kind + "'");
  }

  const int dim = s.model.dim;
  double prior_mean = cfg.get_double_or("prior", "mean", 0.0);
  double prior_var = cfg.get_double_or("prior", "variance", 5.0);
  if (!(prior_var > 0.0)) throw ConfigError("prior variance must be positive");
  s.prior = make_isotropic_prior(Vec::Constant(dim, prior_mean), 1.0 / prior_var);

  s.optimizer = detail::parse_optimizer(cfg.get_or("optimizer", "kind", "emgvb"));
  s.trainer.estimator =
      detail::parse_estimator(cfg.get_or("optimizer", "estimator", "loglik"));
  s.trainer.beta = cfg.get_double_or("optimizer", "beta", 0.01);
  s.trainer.omega = cfg.get_double_or("optimizer", "omega", 0.4);
  s.trainer.draws = cfg.get_int_or("optimizer", "draws", 75);
  s.trainer.window = cfg.get_int_or("optimizer", "window", 30);
  s.trainer.patience = cfg.get_int_or("optimizer", "patience", 500);
  s.trainer.max_iters = cfg.get_int_or("optimizer", "max_iters", 1200);
  s.trainer.schedule_knee = cfg.get_int_or("optimizer", "knee", 1000);
  if (cfg.has("optimizer", "clip"))
    s.trainer.clip = cfg.get_double("optimizer", "clip");
  if (cfg.has("optimizer", "clip_init"))
    s.trainer.clip_init = cfg.get_double("optimizer", "clip_init");
  s.trainer.control_variates =
      cfg.get_bool_or("optimizer", "control_variates", true);
  s.trainer.seed =
      static_cast<std::uint64_t>(cfg.get_double_or("optimizer", "seed", 1));
  s.predictive_draws = cfg.get_int_or("optimizer", "predictive_draws", 0);

  auto structure =
      detail::parse_structure(cfg.get_or("optimizer", "structure", "full"));
  if (structure.kind == PosteriorStructure::Kind::Block) {
    int total = 0;
    for (int b : structure.sizes) total += b;
    if (total != dim)
      throw ConfigError("block sizes sum to " + std::to_string(total) +
                        " but the model has " + std::to_string(dim) +
                        " parameters");
  }

  double init_scale = cfg.get_double_or("optimizer", "init_scale", 0.05);
  if (!(init_scale > 0.0)) throw ConfigError("init_scale must be positive");
  Vec mu1 = Vec::Zero(dim);
  std::string init_mu = cfg.get_or("optimizer", "init_mu", "zeros");
  if (cfg.has("optimizer", "init_mu_constrained")) {
    Vec theta = detail::to_vec(cfg.get_list("optimizer", "init_mu_constrained"));
    require_same_dim(theta.size(), dim, "init_mu_constrained");
    mu1 = s.model.transform.to_unconstrained(theta);
  } else if (init_mu == "zeros") {
    // keep zero vector
  } else if (init_mu == "normal") {
    RngStream init_rng(s.trainer.seed ^ 0xa5a5a5a5a5a5a5a5ull);
    for (int i = 0; i < dim; ++i)
      mu1(i) = std::sqrt(init_scale) * init_rng.normal();
  } else {
    Vec given = detail::to_vec(cfg.get_list("optimizer", "init_mu"));
    require_same_dim(given.size(), dim, "init_mu");
    mu1 = given;
  }

  const double init_prec = 1.0 / init_scale;
  switch (structure.kind) {
    case PosteriorStructure::Kind::Full:
      s.init = make_full_state(mu1, init_prec * Mat::Identity(dim, dim));
      break;
    case PosteriorStructure::Kind::Diagonal:
      s.init = make_diagonal_state(mu1, Vec::Constant(dim, init_prec));
      break;
    case PosteriorStructure::Kind::Block: {
      std::vector<Mat> precs;
      for (int b : structure.sizes)
        precs.push_back(init_prec * Mat::Identity(b, b));
      s.init = make_block_state(mu1, structure.sizes, precs);
      break;
    }
  }

  s.out_dir = cfg.get_or("output", "dir", "out");
  s.trace_name = cfg.get_or("output", "trace", "trace.csv");
  s.result_name = cfg.get_or("output", "result", "result.json");
  s.density_points = cfg.get_int_or("output", "density_points", 0);
  s.density_draws = cfg.get_int_or("output", "density_draws", 4096);
  return s;
}

namespace detail {

inline json metrics_classification(const ExperimentSetup& s,
                                   const VariationalState& q) {
  json m;
  auto eval_split = [&](const Mat& x, const Vec& y, const char* tag) {
    Vec probs(x.rows());
    if (s.predictive_draws > 0) {
      RngStream rng(s.trainer.seed ^ 0xbeefcafe12345678ull);
      Mat draws = q.sample(s.predictive_draws, rng);
      probs.setZero();
      for (int r = 0; r < draws.rows(); ++r) {
        Vec eta = x * draws.row(r).transpose();
        for (int i = 0; i < probs.size(); ++i) probs(i) += sigmoid(eta(i));
      }
      probs /= static_cast<double>(s.predictive_draws);
    } else {
      Vec eta = x * q.mu;
      for (int i = 0; i < probs.size(); ++i) probs(i) = sigmoid(eta(i));
    }
    auto cm = classification_metrics(y, probs);
    m[std::string(tag) + "_accuracy"] = cm.accuracy;
    m[std::string(tag) + "_precision"] = cm.precision;
    m[std::string(tag) + "_recall"] = cm.recall;
    m[std::string(tag) + "_f1"] = cm.f1;
    m[std::string(tag) + "_loglik"] = logistic_loglik(q.mu, x, y);
  };
  eval_split(s.data.x_train(), s.data.y_train(), "train");
  if (s.data.x_test().rows() > 0)
    eval_split(s.data.x_test(), s.data.y_test(), "test");
  return m;
}

inline json metrics_regression(const ExperimentSetup& s, const VariationalState& q) {
  json m;
  const int k = static_cast<int>(s.data.x.cols());
  Vec beta = q.mu.head(k);
  double var_psi_sigma = q.is_diagonal() ? 1.0 / q.prec_diag(k)
                                         : q.dense_cov()(k, k);
  // Reported noise scale uses the second-order mean correction on exp(psi).
  m["sigma"] = std::exp(q.mu(k)) + 0.5 * var_psi_sigma;
  m["train_mse"] = regression_mse(s.data.y_train(), s.data.x_train() * beta);
  m["train_loglik"] = linreg_loglik(q.mu, s.data.x_train(), s.data.y_train());
  if (s.data.x_test().rows() > 0) {
    m["test_mse"] = regression_mse(s.data.y_test(), s.data.x_test() * beta);
    m["test_loglik"] = linreg_loglik(q.mu, s.data.x_test(), s.data.y_test());
  }
  return m;
}

inline json metrics_volatility(const ExperimentSetup& s, const VariationalState& q) {
  json m;
  Vec theta = s.model.transform.to_constrained(q.mu);
  Vec train = s.data.series_train();
  double presample = sample_variance(train);
  Vec sig2 = garch_variance_path(s.garch, theta, s.data.series, presample);
  const int split = s.data.split_index;
  const int n = static_cast<int>(s.data.series.size());
  Vec r2 = s.data.series.cwiseProduct(s.data.series);
  m["train_mse"] = regression_mse(r2.head(split), sig2.head(split));
  double ll_train = 0.0, ll_test = 0.0;
  for (int t = 0; t < n; ++t) {
    double ll = -0.5 * (kLog2Pi + std::log(sig2(t)) +
                        s.data.series(t) * s.data.series(t) / sig2(t));
    (t < split ? ll_train : ll_test) += ll;
  }
  m["train_loglik"] = ll_train;
  if (split < n) {
    m["test_mse"] = regression_mse(r2.tail(n - split), sig2.tail(n - split));
    m["test_loglik"] = ll_test;
  }
  return m;
}

inline double mc_test_lb(const ExperimentSetup& s, const VariationalState& q) {
  if (s.series_model || s.data.x_test().rows() == 0) return 0.0;
  auto x = std::make_shared<const Mat>(s.data.x_test());
  auto y = std::make_shared<const Vec>(s.data.y_test());
  ModelSpec test_model;
  if (s.model_kind == "logistic")
    test_model = make_logistic_model(x, y);
  else if (s.model_kind == "linreg" || s.model_kind == "har")
    test_model = make_linreg_model(x, y);
  else if (s.model_kind == "conjugate_gaussian")
    test_model = make_known_noise_gaussian_model(x, y, s.noise_sigma);
  else
    return 0.0;
  RngStream rng(s.trainer.seed ^ 0x1b2d3c4d5e6f7081ull);
  Mat draws = q.sample(1000, rng);
  double acc = 0.0;
  for (int r = 0; r < draws.rows(); ++r) {
    Vec theta = draws.row(r).transpose();
    acc += h_function(test_model, s.prior, q, theta);
  }
  return acc / draws.rows();
}

inline json posterior_to_json(const ExperimentSetup& s, const VariationalState& q) {
  json p;
  p["mu"] = vec_to_json(q.mu);
  if (q.is_diagonal()) {
    p["precision_diag"] = vec_to_json(q.prec_diag);
  } else if (q.blocks.size() == 1) {
    p["precision"] = mat_to_json(q.blocks[0].prec);
  } else {
    json blocks = json::array();
    for (const auto& b : q.blocks) blocks.push_back(mat_to_json(b.prec));
    p["precision_blocks"] = blocks;
  }
  p["theta_at_mu"] = vec_to_json(s.model.transform.to_constrained(q.mu));
  RngStream rng(s.trainer.seed ^ 0xd1ce5eedbeef0001ull);
  Mat draws = q.sample(4096, rng);
  Vec mean = Vec::Zero(q.dim());
  Mat thetas(draws.rows(), q.dim());
  for (int r = 0; r < draws.rows(); ++r) {
    thetas.row(r) =
        s.model.transform.to_constrained(draws.row(r).transpose()).transpose();
    mean += thetas.row(r).transpose();
  }
  mean /= static_cast<double>(draws.rows());
  Vec sd(q.dim());
  for (int c = 0; c < q.dim(); ++c) {
    double v = (thetas.col(c).array() - mean(c)).square().sum() /
               static_cast<double>(draws.rows() - 1);
    sd(c) = std::sqrt(v);
  }
  p["theta_mean"] = vec_to_json(mean);
  p["theta_sd"] = vec_to_json(sd);
  return p;
}

inline json config_to_json(const Config& cfg) {
  json out;
  for (const auto& [name, section] : cfg.sections()) {
    json sec;
    for (const auto& [k, v] : section) sec[k] = v;
    out[name] = sec;
  }
  return out;
}

}  // namespace detail

struct ExperimentOutcome {
  RunResult run;
  json result;
};

inline ExperimentOutcome execute_experiment(const ExperimentSetup& s) {
  auto t0 = std::chrono::steady_clock::now();
  RunResult run = gvb::run(s.model, s.prior, s.trainer, s.optimizer, s.init);
  auto t1 = std::chrono::steady_clock::now();

  json result;
  result["model"] = s.model_kind;
  result["optimizer"] = s.optimizer == OptimizerKind::Emgvb ? "emgvb" : "mgvb";
  result["seed"] = s.trainer.seed;
  result["iterations"] = run.trace.iterations();
  result["best_iter"] = run.trace.best_iter;
  result["lb_best_smoothed"] = run.trace.best_smooth;
  result["stopped_by_patience"] = run.stopped_by_patience;
  result["posterior"] = detail::posterior_to_json(s, run.state);
  result["config"] = detail::config_to_json(s.raw);

  json metrics;
  metrics["lb_train"] = run.trace.best_smooth;
  if (s.model_kind == "logistic") {
    json m = detail::metrics_classification(s, run.state);
    metrics.update(m);
    metrics["lb_test"] = detail::mc_test_lb(s, run.state);
  } else if (s.model_kind == "linreg" || s.model_kind == "har") {
    metrics.update(detail::metrics_regression(s, run.state));
    metrics["lb_test"] = detail::mc_test_lb(s, run.state);
  } else if (s.series_model) {
    metrics.update(detail::metrics_volatility(s, run.state));
  } else if (s.model_kind == "conjugate_gaussian") {
    auto exact = conjugate_exact_posterior(s.data.x_train(), s.data.y_train(),
                                           s.noise_sigma, s.prior);
    auto exact_state = make_full_state(exact.mu, exact.prec);
    metrics["kl_to_exact"] = kl_gaussian(run.state, exact_state);
    metrics["mu_error_inf"] = (run.state.mu - exact.mu).cwiseAbs().maxCoeff();
    metrics["log_evidence"] = exact.log_evidence;
  }
  result["metrics"] = metrics;
  result["wall_clock_seconds"] =
      std::chrono::duration<double>(t1 - t0).count();

  return {std::move(run), std::move(result)};
}

namespace detail {

// Writes through a temp file; the caller renames on success.
class PendingFile {
 public:
  explicit PendingFile(fs::path target)
      : target_(std::move(target)), tmp_(target_.string() + ".tmp") {}
  ~PendingFile() {
    if (!committed_) {
      std::error_code ec;
      fs::remove(tmp_, ec);
    }
  }
  const fs::path& tmp() const { return tmp_; }
  void commit() {
    fs::rename(tmp_, target_);
    committed_ = true;
  }

 private:
  fs::path target_, tmp_;
  bool committed_ = false;
};

inline void write_trace_csv(const fs::path& path, const RunTrace& trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "iter,lb_raw,lb_smooth,beta_t,clipped\n";
  for (const auto& r : trace.rows)
    out << r.iter << ',' << fmt_double(r.lb_raw) << ',' << fmt_double(r.lb_smooth)
        << ',' << fmt_double(r.beta_t) << ',' << (r.clipped ? 1 : 0) << '\n';
}

inline void write_density_csvs(const ExperimentSetup& s, const VariationalState& q,
                               std::vector<std::unique_ptr<PendingFile>>& pending) {
  const auto& transform = s.model.transform;
  for (int i = 0; i < q.dim(); ++i) {
    double mu = q.mu(i);
    double sd = q.is_diagonal() ? std::sqrt(1.0 / q.prec_diag(i))
                                : std::sqrt(q.dense_cov()(i, i));
    Vec grid(s.density_points);
    Vec dens;
    if (transform.coord_maps[i]) {
      const auto& map = *transform.coord_maps[i];
      double lo = map.to_constrained(mu - 4.0 * sd);
      double hi = map.to_constrained(mu + 4.0 * sd);
      for (int g = 0; g < s.density_points; ++g)
        grid(g) = lo + (hi - lo) * (g + 0.5) / s.density_points;
      dens = marginal_density_exact(q, map, i, grid);
    } else {
      RngStream rng(s.trainer.seed ^ (0x5eedba5e00000000ull + i));
      Mat draws = q.sample(s.density_draws, rng);
      Vec values(draws.rows());
      for (int r = 0; r < draws.rows(); ++r)
        values(r) = transform.to_constrained(draws.row(r).transpose())(i);
      double lo = values.minCoeff(), hi = values.maxCoeff();
      for (int g = 0; g < s.density_points; ++g)
        grid(g) = lo + (hi - lo) * (g + 0.5) / s.density_points;
      RngStream rng2(s.trainer.seed ^ (0x5eedba5e10000000ull + i));
      dens = marginal_density_kde(q, transform, i, grid, s.density_draws, rng2);
    }
    auto file = std::make_unique<PendingFile>(
        s.out_dir / ("density_param_" + std::to_string(i) + ".csv"));
    std::ofstream out(file->tmp());
    if (!out) throw std::runtime_error("cannot write density CSV");
    out << "theta,density\n";
    for (int g = 0; g < s.density_points; ++g)
      out << fmt_double(grid(g)) << ',' << fmt_double(dens(g)) << '\n';
    out.close();
    pending.push_back(std::move(file));
  }
}

}  // namespace detail

// Runs a config end to end. Exit codes: 0 ok, 1 runtime failure, 2 config
// error. Failed runs leave no partial artifacts behind.
inline int run_experiment(const std::string& config_path, std::ostream& log = std::cerr) {
  try {
    Config cfg = Config::parse_file(config_path);
    ExperimentSetup setup = build_experiment(cfg);
    ExperimentOutcome outcome = execute_experiment(setup);

    fs::create_directories(setup.out_dir);
    std::vector<std::unique_ptr<detail::PendingFile>> pending;

    auto trace_file =
        std::make_unique<detail::PendingFile>(setup.out_dir / setup.trace_name);
    detail::write_trace_csv(trace_file->tmp(), outcome.run.trace);
    pending.push_back(std::move(trace_file));

    auto result_file =
        std::make_unique<detail::PendingFile>(setup.out_dir / setup.result_name);
    {
      std::ofstream out(result_file->tmp());
      if (!out) throw std::runtime_error("cannot write result JSON");
      out << outcome.result.dump(2) << '\n';
    }
    pending.push_back(std::move(result_file));

    if (setup.density_points > 0)
      detail::write_density_csvs(setup, outcome.run.state, pending);

    for (auto& f : pending) f->commit();
    log << "lb_best_smoothed=" << outcome.result["lb_best_smoothed"]
        << " iterations=" << outcome.result["iterations"] << "\n";
    return 0;
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    log << "data error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return 1;
  }
}

// Rebuilds the experiment of a result JSON and writes the marginal density
// of one parameter on a grid.
inline int write_density_for_result(const std::string& result_path, int param,
                                    int points, std::ostream& log = std::cerr) {
  try {
    std::ifstream in(result_path);
    if (!in) throw std::runtime_error("cannot open " + result_path);
    json result = json::parse(in);

    std::string text;
    for (auto& [name, section] : result.at("config").items()) {
      text += "[" + name + "]\n";
      for (auto& [k, v] : section.items())
        text += k + " = " + v.get<std::string>() + "\n";
    }
    Config cfg = Config::parse_string(text, result_path + "#config");
    ExperimentSetup setup = build_experiment(cfg);
    setup.density_points = points;

    const json& post = result.at("posterior");
    Vec mu = detail::vec_from_json(post.at("mu"));
    VariationalState q;
    if (post.contains("precision_diag")) {
      q = make_diagonal_state(mu, detail::vec_from_json(post.at("precision_diag")));
    } else if (post.contains("precision")) {
      q = make_full_state(mu, detail::mat_from_json(post.at("precision")));
    } else {
      std::vector<Mat> precs;
      std::vector<int> sizes;
      for (const auto& b : post.at("precision_blocks")) {
        precs.push_back(detail::mat_from_json(b));
        sizes.push_back(static_cast<int>(precs.back().rows()));
      }
      q = make_block_state(mu, sizes, precs);
    }
    if (param < 0 || param >= q.dim())
      throw ConfigError("--param out of range (model has " +
                        std::to_string(q.dim()) + " parameters)");

    fs::create_directories(setup.out_dir);
    // Reuse the experiment writer for just the requested coordinate.
    const auto& transform = setup.model.transform;
    double sd = q.is_diagonal() ? std::sqrt(1.0 / q.prec_diag(param))
                                : std::sqrt(q.dense_cov()(param, param));
    Vec grid(points), dens;
    if (transform.coord_maps[param]) {
      const auto& map = *transform.coord_maps[param];
      double lo = map.to_constrained(q.mu(param) - 4.0 * sd);
      double hi = map.to_constrained(q.mu(param) + 4.0 * sd);
      for (int g = 0; g < points; ++g)
        grid(g) = lo + (hi - lo) * (g + 0.5) / points;
      dens = marginal_density_exact(q, map, param, grid);
    } else {
      RngStream rng(setup.trainer.seed ^ (0x5eedba5e00000000ull + param));
      Mat draws = q.sample(setup.density_draws, rng);
      Vec values(draws.rows());
      for (int r = 0; r < draws.rows(); ++r)
        values(r) = transform.to_constrained(draws.row(r).transpose())(param);
      double lo = values.minCoeff(), hi = values.maxCoeff();
      for (int g = 0; g < points; ++g)
        grid(g) = lo + (hi - lo) * (g + 0.5) / points;
      RngStream rng2(setup.trainer.seed ^ (0x5eedba5e10000000ull + param));
      dens = marginal_density_kde(q, transform, param, grid, setup.density_draws, rng2);
    }
    detail::PendingFile file(setup.out_dir /
                             ("density_param_" + std::to_string(param) + ".csv"));
    {
      std::ofstream out(file.tmp());
      if (!out) throw std::runtime_error("cannot write density CSV");
      out << "theta,density\n";
      for (int g = 0; g < points; ++g)
        out << detail::fmt_double(grid(g)) << ',' << detail::fmt_double(dens(g))
            << '\n';
    }
    file.commit();
    return 0;
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return 1;
  }
}

// Runs the Metropolis oracle on the model/prior/data of a config and writes
// the chain with a summary.
inline int run_mcmc(const std::string& config_path, std::ostream& log = std::cerr) {
  try {
    Config cfg = Config::parse_file(config_path);
    ExperimentSetup setup = build_experiment(cfg);
    int samples = cfg.get_int_or("mcmc", "samples", 20000);
    std::uint64_t seed = static_cast<std::uint64_t>(
        cfg.get_double_or("mcmc", "seed", static_cast<double>(setup.trainer.seed + 1)));

    McmcResult mcmc;
    if (cfg.has("mcmc", "step_scale")) {
      mcmc = metropolis_sample(setup.model, setup.prior, setup.init.mu, samples,
                               cfg.get_double("mcmc", "step_scale"), seed);
    } else {
      mcmc = metropolis_with_pilot(setup.model, setup.prior, setup.init.mu,
                                   samples, seed);
    }

    fs::create_directories(setup.out_dir);
    detail::PendingFile chain_file(setup.out_dir / "chain.csv");
    {
      std::ofstream out(chain_file.tmp());
      if (!out) throw std::runtime_error("cannot write chain CSV");
      for (int j = 0; j < mcmc.chain.cols(); ++j)
        out << (j ? "," : "") << "psi" << j;
      out << "\n";
      for (int r = 0; r < mcmc.chain.rows(); ++r) {
        for (int j = 0; j < mcmc.chain.cols(); ++j)
          out << (j ? "," : "") << detail::fmt_double(mcmc.chain(r, j));
        out << "\n";
      }
    }

    json summary;
    summary["acceptance_rate"] = mcmc.acceptance_rate;
    summary["samples"] = mcmc.chain.rows();
    Vec mean = mcmc.chain.colwise().mean();
    Vec sd(mean.size());
    for (int j = 0; j < mean.size(); ++j)
      sd(j) = std::sqrt((mcmc.chain.col(j).array() - mean(j)).square().sum() /
                        std::max<Eigen::Index>(1, mcmc.chain.rows() - 1));
    summary["psi_mean"] = detail::vec_to_json(mean);
    summary["psi_sd"] = detail::vec_to_json(sd);
    Vec theta_mean = Vec::Zero(mean.size());
    for (int r = 0; r < mcmc.chain.rows(); ++r)
      theta_mean +=
          setup.model.transform.to_constrained(mcmc.chain.row(r).transpose());
    theta_mean /= static_cast<double>(mcmc.chain.rows());
    summary["theta_mean"] = detail::vec_to_json(theta_mean);

    detail::PendingFile summary_file(setup.out_dir / "mcmc.json");
    {
      std::ofstream out(summary_file.tmp());
      out << summary.dump(2) << '\n';
    }
    chain_file.commit();
    summary_file.commit();
    log << "acceptance_rate=" << mcmc.acceptance_rate << "\n";
    return 0;
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return 1;
  }
}

inline int print_metrics(const std::string& result_path,
                         std::ostream& out = std::cout) {
  try {
    std::ifstream in(result_path);
    if (!in) throw std::runtime_error("cannot open " + result_path);
    json result = json::parse(in);
    out << "model:      " << result.at("model").get<std::string>() << "\n";
    out << "optimizer:  " << result.at("optimizer").get<std::string>() << "\n";
    out << "iterations: " << result.at("iterations") << " (best at "
        << result.at("best_iter") << ")\n";
    for (auto& [k, v] : result.at("metrics").items())
      out << "  " << k << " = " << v << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace gvb
