#pragma once

#include <cmath>
#include <string>
#include <type_traits>

#include "patchlab/matrix.hpp"

// Numeric primitives for the forward pass. All of them accept arbitrary Eigen
// expressions and return plain matrices; inputs are evaluated exactly once.

namespace patchlab {

inline constexpr double kRotaryBase = 10000.0;

namespace detail {
template <typename DA, typename DB>
inline constexpr bool same_scalar =
    std::is_same_v<typename DA::Scalar, typename DB::Scalar>;
}

template <typename DA, typename DB>
Mat<typename DA::Scalar> matmul(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
  static_assert(detail::same_scalar<DA, DB>);
  if (a.cols() != b.rows())
    throw InvariantError("matmul: inner dimensions disagree (" + std::to_string(a.cols()) +
                         " vs " + std::to_string(b.rows()) + ")");
  Mat<typename DA::Scalar> out = a.derived() * b.derived();
  require_finite(out, "matmul");
  return out;
}

// y = x * w + b broadcast across rows. Weights are kept [in, out] so the
// product reads left to right.
template <typename DX, typename DW, typename DB>
Mat<typename DX::Scalar> affine(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DW>& w,
                                const Eigen::MatrixBase<DB>& b) {
  static_assert(detail::same_scalar<DX, DW> && detail::same_scalar<DX, DB>);
  if (x.cols() != w.rows())
    throw InvariantError("affine: input width " + std::to_string(x.cols()) +
                         " does not match weight rows " + std::to_string(w.rows()));
  if (b.size() != w.cols())
    throw InvariantError("affine: bias length " + std::to_string(b.size()) +
                         " does not match weight cols " + std::to_string(w.cols()));
  Mat<typename DX::Scalar> out = x.derived() * w.derived();
  out.rowwise() += b.derived().transpose();
  require_finite(out, "affine");
  return out;
}

// Softmax across each row (the feature axis), max-subtracted for stability.
template <typename Derived>
Mat<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& x) {
  using S = typename Derived::Scalar;
  if (x.cols() < 1) throw InvariantError("softmax_rows: empty feature axis");
  Mat<S> out = x.derived();
  for (Index i = 0; i < out.rows(); ++i) {
    const S m = out.row(i).maxCoeff();
    out.row(i) = (out.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  require_finite(out, "softmax_rows");
  return out;
}

// Softmax over the causal prefix: row i normalizes columns 0..i and zeroes the
// rest. Input must be square (query rows by key columns).
template <typename Derived>
Mat<typename Derived::Scalar> causal_softmax_rows(const Eigen::MatrixBase<Derived>& scores) {
  using S = typename Derived::Scalar;
  if (scores.rows() != scores.cols())
    throw InvariantError("causal_softmax_rows: scores must be square");
  Mat<S> out = scores.derived();
  for (Index i = 0; i < out.rows(); ++i) {
    const Index n = i + 1;
    const S m = out.row(i).head(n).maxCoeff();
    out.row(i).head(n) = (out.row(i).head(n).array() - m).exp();
    out.row(i).head(n) /= out.row(i).head(n).sum();
    out.row(i).tail(out.cols() - n).setZero();
  }
  require_finite(out, "causal_softmax_rows");
  return out;
}

// Per-row standardization followed by the affine map with gain/bias. The
// variance is the population variance over the feature axis.
template <typename DX, typename DG, typename DB>
Mat<typename DX::Scalar> layer_norm_rows(const Eigen::MatrixBase<DX>& x_,
                                         const Eigen::MatrixBase<DG>& gain_,
                                         const Eigen::MatrixBase<DB>& bias_,
                                         typename DX::Scalar eps) {
  static_assert(detail::same_scalar<DX, DG> && detail::same_scalar<DX, DB>);
  using S = typename DX::Scalar;
  Mat<S> out = x_.derived();
  const Vec<S> gain = gain_.derived();
  const Vec<S> bias = bias_.derived();
  if (gain.size() != out.cols() || bias.size() != out.cols())
    throw InvariantError("layer_norm_rows: gain/bias must match the feature width");
  const S inv_n = S(1) / static_cast<S>(out.cols());
  for (Index i = 0; i < out.rows(); ++i) {
    const S mean = out.row(i).sum() * inv_n;
    const auto centered = (out.row(i).array() - mean).eval();
    const S var = centered.square().sum() * inv_n;
    const S inv_std = S(1) / std::sqrt(var + eps);
    out.row(i) =
        (centered * inv_std * gain.transpose().array() + bias.transpose().array()).matrix();
  }
  require_finite(out, "layer_norm_rows");
  return out;
}

// Exact (erf-based) GELU.
template <typename Derived>
Mat<typename Derived::Scalar> gelu(const Eigen::MatrixBase<Derived>& x) {
  using S = typename Derived::Scalar;
  Mat<S> out = x.derived();
  for (Index i = 0; i < out.rows(); ++i)
    for (Index j = 0; j < out.cols(); ++j) {
      const S v = out(i, j);
      out(i, j) = S(0.5) * v * (S(1) + std::erf(v * S(0.7071067811865476)));
    }
  require_finite(out, "gelu");
  return out;
}

inline Index rotary_width(Index head_dim, double rotary_fraction) {
  const Index rot = static_cast<Index>(std::floor(rotary_fraction * static_cast<double>(head_dim)));
  if (rot % 2 != 0)
    throw InvariantError("rotary: rotated width " + std::to_string(rot) + " must be even");
  return rot;
}

// Rotates the first `rot` features of one position's vector in the half-split
// pairing (i, i + rot/2); features past `rot` pass through. The angle for pair
// i is position * base^(-2i/rot).
template <typename Scalar, typename Derived>
void rotary_apply_inplace(Eigen::MatrixBase<Derived>& row, Index position, Index rot,
                          double base = kRotaryBase) {
  if (rot == 0) return;
  if (rot % 2 != 0 || rot > row.size())
    throw InvariantError("rotary: invalid rotated width " + std::to_string(rot));
  const Index half = rot / 2;
  for (Index i = 0; i < half; ++i) {
    const double inv_freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(rot));
    const double theta = static_cast<double>(position) * inv_freq;
    const Scalar c = static_cast<Scalar>(std::cos(theta));
    const Scalar s = static_cast<Scalar>(std::sin(theta));
    const Scalar a = row(i);
    const Scalar b = row(i + half);
    row(i) = a * c - b * s;
    row(i + half) = b * c + a * s;
  }
}

// One position's query/key vector.
template <typename Scalar>
Vec<Scalar> rotary_apply(const Vec<Scalar>& x, Index position, double rotary_fraction,
                         double base = kRotaryBase) {
  Vec<Scalar> out = x;
  rotary_apply_inplace<Scalar>(out, position, rotary_width(x.size(), rotary_fraction), base);
  require_finite(out, "rotary_apply");
  return out;
}

// Whole sequence at once; row r is the vector at absolute position r.
template <typename Derived>
Mat<typename Derived::Scalar> rotary_apply_rows(const Eigen::MatrixBase<Derived>& x,
                                                double rotary_fraction,
                                                double base = kRotaryBase) {
  using S = typename Derived::Scalar;
  Mat<S> out = x.derived();
  const Index rot = rotary_width(out.cols(), rotary_fraction);
  for (Index r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    rotary_apply_inplace<S>(row, r, rot, base);
  }
  require_finite(out, "rotary_apply_rows");
  return out;
}

// log(sum(exp(row))) accumulated in double regardless of the scalar type, so
// probability math downstream is stable in either precision.
template <typename Derived>
double log_sum_exp_row(const Eigen::MatrixBase<Derived>& row_) {
  const auto row = row_.derived().eval();
  if (row.rows() != 1) throw InvariantError("log_sum_exp_row: expected a single row");
  const double m = static_cast<double>(row.maxCoeff());
  double acc = 0.0;
  for (Index j = 0; j < row.size(); ++j) acc += std::exp(static_cast<double>(row(j)) - m);
  return m + std::log(acc);
}

}  // namespace patchlab
