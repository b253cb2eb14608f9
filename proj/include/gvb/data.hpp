#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gvb/models.hpp"
#include "gvb/rng.hpp"
#include "gvb/types.hpp"

// CSV ingestion and the synthetic stand-in generators that keep every model
// family runnable without the public datasets.

namespace gvb {

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CsvTable {
  std::vector<std::string> columns;
  Mat values;

  int column_index(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return static_cast<int>(i);
    throw ParseError("missing column '" + name + "'");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

}  // namespace detail

// Parses a numeric CSV with a header row. Parse failures name the offending
// line and column. Row order is preserved.
inline CsvTable load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file");
  CsvTable table;
  table.columns = detail::split_csv_line(line);
  const std::size_t width = table.columns.size();
  if (width == 0) throw ParseError(path + ": empty header");

  std::vector<double> data;
  int rows = 0;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != width)
      throw ParseError(path + ": line " + std::to_string(lineno) + " has " +
                       std::to_string(cells.size()) + " cells, expected " +
                       std::to_string(width));
    for (std::size_t c = 0; c < width; ++c) {
      try {
        std::size_t used = 0;
        double v = std::stod(cells[c], &used);
        if (used != cells[c].size()) throw std::invalid_argument("trailing");
        data.push_back(v);
      } catch (const std::exception&) {
        throw ParseError(path + ": line " + std::to_string(lineno) +
                         ", column '" + table.columns[c] + "': non-numeric cell '" +
                         cells[c] + "'");
      }
    }
    ++rows;
  }
  table.values.resize(rows, static_cast<Eigen::Index>(width));
  for (int r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < width; ++c)
      table.values(r, static_cast<Eigen::Index>(c)) = data[r * width + c];
  return table;
}

// Tabular or series dataset with a deterministic head split (no shuffling
// unless a shuffle seed is requested at assembly time).
struct Dataset {
  Mat x;
  Vec y;
  Vec series;
  int split_index = 0;  // first test row / observation
  std::vector<std::string> feature_names;

  bool tabular() const { return x.rows() > 0; }

  Mat x_train() const { return x.topRows(split_index); }
  Mat x_test() const { return x.bottomRows(x.rows() - split_index); }
  Vec y_train() const { return y.head(split_index); }
  Vec y_test() const { return y.tail(y.size() - split_index); }
  Vec series_train() const { return series.head(split_index); }
  Vec series_test() const { return series.tail(series.size() - split_index); }
};

inline int split_point(int n, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0))
    throw std::invalid_argument("split fraction must lie in (0,1]");
  int s = static_cast<int>(std::lround(train_fraction * n));
  return std::clamp(s, 1, n);
}

// ---------------------------------------------------------------------------
// Synthetic stand-ins.

inline Dataset synthetic_logistic(int n, int k, std::uint64_t seed) {
  RngStream rng(seed);
  Dataset d;
  d.x.resize(n, k);
  d.y.resize(n);
  Vec beta(k);
  for (int j = 0; j < k; ++j) beta(j) = rng.normal() * 0.8;
  for (int i = 0; i < n; ++i) {
    d.x(i, 0) = 1.0;
    for (int j = 1; j < k; ++j) d.x(i, j) = rng.normal();
    double p = sigmoid(d.x.row(i).dot(beta));
    d.y(i) = rng.uniform() < p ? 1.0 : 0.0;
  }
  d.feature_names.push_back("intercept");
  for (int j = 1; j < k; ++j) d.feature_names.push_back("x" + std::to_string(j));
  return d;
}

inline Dataset synthetic_linreg(int n, int k, double sigma, std::uint64_t seed) {
  RngStream rng(seed);
  Dataset d;
  d.x.resize(n, k);
  d.y.resize(n);
  Vec beta(k);
  for (int j = 0; j < k; ++j) beta(j) = rng.normal();
  for (int i = 0; i < n; ++i) {
    d.x(i, 0) = 1.0;
    for (int j = 1; j < k; ++j) d.x(i, j) = rng.normal();
    d.y(i) = d.x.row(i).dot(beta) + sigma * rng.normal();
  }
  d.feature_names.push_back("intercept");
  for (int j = 1; j < k; ++j) d.feature_names.push_back("x" + std::to_string(j));
  return d;
}

// Conjugate oracle data: known-noise Gaussian linear model.
inline Dataset synthetic_conjugate(int n, int k, double sigma, std::uint64_t seed) {
  return synthetic_linreg(n, k, sigma, seed);
}

inline Vec synthetic_garch_series(const GarchSpec& spec, const Vec& params, int n,
                                  std::uint64_t seed) {
  RngStream rng(seed);
  return simulate_garch(spec, params, n, rng);
}

// A positive realized-volatility-like series driven by a GARCH recursion;
// enough structure for the HAR regressors to be informative.
inline Vec synthetic_rv_series(int n, std::uint64_t seed) {
  GarchSpec spec;
  spec.family = GarchFamily::Garch;
  Vec params(3);
  params << 0.05, 0.12, 0.85;
  RngStream rng(seed);
  Vec r = simulate_garch(spec, params, n, rng);
  Vec rv(n);
  for (int i = 0; i < n; ++i) rv(i) = r(i) * r(i) + 0.02;
  return rv;
}

// HAR design: regress RV_t on 1, RV_{t-1}, the weekly mean RV_{t-5..t-1} and
// the monthly mean RV_{t-22..t-1}.
struct HarData {
  Mat x;
  Vec y;
};

inline HarData build_har_design(const Vec& rv) {
  const int lag = 22;
  const int n = static_cast<int>(rv.size()) - lag;
  if (n <= 0) throw std::invalid_argument("build_har_design: series too short");
  HarData d;
  d.x.resize(n, 4);
  d.y.resize(n);
  for (int i = 0; i < n; ++i) {
    const int t = i + lag;
    d.x(i, 0) = 1.0;
    d.x(i, 1) = rv(t - 1);
    d.x(i, 2) = rv.segment(t - 5, 5).mean();
    d.x(i, 3) = rv.segment(t - 22, 22).mean();
    d.y(i) = rv(t);
  }
  return d;
}

}  // namespace gvb
