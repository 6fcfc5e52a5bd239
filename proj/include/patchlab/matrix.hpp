#pragma once

#include <Eigen/Dense>

#include <string>

#include "patchlab/common.hpp"

namespace patchlab {

// Activations are row-major (position x feature) matrices so a token's
// features sit contiguously; vectors are single activations.
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Index = Eigen::Index;

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const char* where) {
  if (!m.allFinite()) throw NumericsError(std::string(where) + ": non-finite value produced");
}

template <typename Scalar>
Mat<Scalar> from_rows(std::initializer_list<std::initializer_list<Scalar>> rows) {
  const Index r = static_cast<Index>(rows.size());
  const Index c = r > 0 ? static_cast<Index>(rows.begin()->size()) : 0;
  Mat<Scalar> out(r, c);
  Index i = 0;
  for (const auto& row : rows) {
    if (static_cast<Index>(row.size()) != c) throw InvariantError("from_rows: ragged rows");
    Index j = 0;
    for (Scalar v : row) out(i, j++) = v;
    ++i;
  }
  return out;
}

template <typename Scalar>
Mat<Scalar> random_matrix(Index rows, Index cols, Rng& rng, double stddev = 1.0) {
  Mat<Scalar> out(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) out(i, j) = static_cast<Scalar>(rng.normal() * stddev);
  return out;
}

template <typename Scalar>
Vec<Scalar> random_vector(Index n, Rng& rng, double stddev = 1.0) {
  Vec<Scalar> out(n);
  for (Index i = 0; i < n; ++i) out(i) = static_cast<Scalar>(rng.normal() * stddev);
  return out;
}

}  // namespace patchlab
