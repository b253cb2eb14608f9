#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace gvb {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Cholesky pivot i was not strictly positive.
struct NotPositiveDefiniteError : std::runtime_error {
  int pivot;
  explicit NotPositiveDefiniteError(int pivot_index)
      : std::runtime_error("matrix is not positive definite (pivot " +
                           std::to_string(pivot_index) + ")"),
        pivot(pivot_index) {}
};

struct SingularTriangularError : std::runtime_error {
  int index;
  explicit SingularTriangularError(int diag_index)
      : std::runtime_error("triangular matrix is singular (diagonal entry " +
                           std::to_string(diag_index) + ")"),
        index(diag_index) {}
};

// The symmetrized inner matrix of a square-root product had a
// non-positive eigenvalue, so the principal root would be complex.
struct ComplexRootError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RetractionFailedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require_square(const Mat& m, const char* what) {
  if (m.rows() != m.cols())
    throw DimensionError(std::string(what) + ": matrix is not square");
}

inline void require_same_dim(Eigen::Index a, Eigen::Index b, const char* what) {
  if (a != b)
    throw DimensionError(std::string(what) + ": dimension mismatch (" +
                         std::to_string(a) + " vs " + std::to_string(b) + ")");
}

}  // namespace gvb
