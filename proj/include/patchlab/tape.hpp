#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "patchlab/ops.hpp"

// Reverse-mode autodiff restricted to the suffix of a computation. Everything
// before the seed runs as ordinary Eigen math; the seed and whatever is
// computed from it live on the tape. Gradients flow back to the seed only.
// Weights and biases are referenced by pointer and never differentiated, so a
// tape must not outlive the model it was recorded against.

namespace patchlab {

template <typename Scalar>
struct TNode {
  Mat<Scalar> v;
  int slot = -1;
  bool tracked() const { return slot >= 0; }
};

template <typename Scalar>
TNode<Scalar> constant(Mat<Scalar> v) {
  return TNode<Scalar>{std::move(v), -1};
}

namespace detail {

// Closure-side handle to one op input: either a tape slot or a captured copy
// of a constant.
template <typename Scalar>
struct Arg {
  int slot = -1;
  Mat<Scalar> constant;
  static Arg of(const TNode<Scalar>& n) {
    Arg a;
    a.slot = n.slot;
    if (!n.tracked()) a.constant = n.v;
    return a;
  }
};

}  // namespace detail

template <typename Scalar>
class SuffixTape {
 public:
  using Fn = std::function<void(SuffixTape&)>;

  int track(Mat<Scalar> value) {
    values_.push_back(std::move(value));
    grads_.emplace_back();
    return static_cast<int>(values_.size()) - 1;
  }

  // Records an op and runs its forward closure once so that the recorded
  // value and any later replay come from the identical code path.
  void record(Fn forward, Fn backward) {
    forwards_.push_back(std::move(forward));
    backwards_.push_back(std::move(backward));
    forwards_.back()(*this);
  }

  void mark_seed(int slot) {
    if (seed_ >= 0) throw InvariantError("tape: seed already set");
    seed_ = slot;
  }

  void mark_loss(const TNode<Scalar>& node) {
    if (node.v.rows() != 1 || node.v.cols() != 1 || !node.tracked())
      throw InvariantError("tape: loss must be a tracked scalar");
    loss_slot_ = node.slot;
  }

  // For losses that turned out not to depend on the seed at all.
  void mark_loss_const(Scalar v) {
    loss_const_ = v;
    loss_set_ = true;
  }

  bool has_seed() const { return seed_ >= 0; }
  bool has_loss() const { return loss_marked(); }

  const Mat<Scalar>& value(int slot) const { return values_.at(static_cast<size_t>(slot)); }
  Mat<Scalar>& value_mut(int slot) { return values_.at(static_cast<size_t>(slot)); }

  const Mat<Scalar>& arg_value(const detail::Arg<Scalar>& a) const {
    return a.slot >= 0 ? value(a.slot) : a.constant;
  }

  Mat<Scalar>& grad_slot(int slot) {
    auto& g = grads_.at(static_cast<size_t>(slot));
    if (g.size() == 0) {
      const auto& v = values_[static_cast<size_t>(slot)];
      g = Mat<Scalar>::Zero(v.rows(), v.cols());
    }
    return g;
  }

  template <typename Expr>
  void accumulate(int slot, const Expr& delta) {
    if (slot < 0) return;
    grad_slot(slot) += delta;
  }

  Scalar loss_value() const {
    if (!loss_marked()) throw InvariantError("tape: no loss marked");
    return loss_slot_ >= 0 ? value(loss_slot_)(0, 0) : loss_const_;
  }

  // Re-runs every recorded forward closure in order. With an unchanged seed
  // this reproduces the original loss bit for bit; with a modified seed value
  // it re-propagates the suffix.
  Scalar replay_loss() {
    for (auto& f : forwards_) f(*this);
    return loss_value();
  }

  // d(loss)/d(seed). Runs the backward closures newest-first. Zero when the
  // loss does not depend on the seed.
  Mat<Scalar> seed_gradient() {
    if (seed_ < 0) throw InvariantError("tape: no seed marked");
    if (!loss_marked()) throw InvariantError("tape: no loss marked");
    for (auto& g : grads_) g.resize(0, 0);
    if (loss_slot_ >= 0) {
      grad_slot(loss_slot_) = Mat<Scalar>::Ones(1, 1);
      for (auto it = backwards_.rbegin(); it != backwards_.rend(); ++it) (*it)(*this);
    }
    return grad_slot(seed_);
  }

  int seed_slot() const { return seed_; }

 private:
  bool loss_marked() const { return loss_set_ || loss_slot_ >= 0; }

  std::vector<Mat<Scalar>> values_;
  std::vector<Mat<Scalar>> grads_;
  std::vector<Fn> forwards_;
  std::vector<Fn> backwards_;
  int seed_ = -1;
  int loss_slot_ = -1;
  Scalar loss_const_ = Scalar(0);
  bool loss_set_ = false;
};

// Injects the differentiable leaf. The value is stored on the tape; replay
// keeps whatever the slot currently holds, so tests may overwrite it through
// value_mut before replaying.
template <typename Scalar>
TNode<Scalar> make_seed(SuffixTape<Scalar>& tape, Mat<Scalar> v) {
  const int slot = tape.track(v);
  tape.mark_seed(slot);
  return TNode<Scalar>{std::move(v), slot};
}

namespace detail {

template <typename Scalar>
bool off_tape(SuffixTape<Scalar>* tape, const TNode<Scalar>& a) {
  return tape == nullptr || !a.tracked();
}

template <typename Scalar>
bool off_tape(SuffixTape<Scalar>* tape, const TNode<Scalar>& a, const TNode<Scalar>& b) {
  return tape == nullptr || (!a.tracked() && !b.tracked());
}

// Registers an op whose forward closure writes slot `out`, runs it once, and
// wraps the result in a node.
template <typename Scalar, typename Fwd, typename Bwd>
TNode<Scalar> emit(SuffixTape<Scalar>& tape, Fwd&& fwd, Bwd&& bwd) {
  const int out = tape.track(Mat<Scalar>());
  tape.record(
      [out, f = std::forward<Fwd>(fwd)](SuffixTape<Scalar>& t) { t.value_mut(out) = f(t); },
      [out, b = std::forward<Bwd>(bwd)](SuffixTape<Scalar>& t) { b(t, t.grad_slot(out)); });
  return TNode<Scalar>{tape.value(out), out};
}

}  // namespace detail

template <typename Scalar>
TNode<Scalar> t_add(SuffixTape<Scalar>* tape, const TNode<Scalar>& a, const TNode<Scalar>& b) {
  if (a.v.rows() != b.v.rows() || a.v.cols() != b.v.cols())
    throw InvariantError("add: shape mismatch");
  if (detail::off_tape(tape, a, b)) return constant<Scalar>(a.v + b.v);
  auto aa = detail::Arg<Scalar>::of(a), ab = detail::Arg<Scalar>::of(b);
  return detail::emit<Scalar>(
      *tape,
      [aa, ab](SuffixTape<Scalar>& t) -> Mat<Scalar> { return t.arg_value(aa) + t.arg_value(ab); },
      [aa, ab](SuffixTape<Scalar>& t, const Mat<Scalar>& g) {
        t.accumulate(aa.slot, g);
        t.accumulate(ab.slot, g);
      });
}

// y = x * w + b with w [in, out]; pass bias = nullptr for a pure product.
// w and bias are borrowed, not copied.
template <typename Scalar>
TNode<Scalar> t_linear(SuffixTape<Scalar>* tape, const TNode<Scalar>& x, const Mat<Scalar>* w,
                       const Vec<Scalar>* bias = nullptr) {
  auto run = [w, bias](const Mat<Scalar>& in) -> Mat<Scalar> {
    return bias ? affine(in, *w, *bias) : matmul(in, *w);
  };
  if (detail::off_tape(tape, x)) return constant<Scalar>(run(x.v));
  auto ax = detail::Arg<Scalar>::of(x);
  return detail::emit<Scalar>(
      *tape, [ax, run](SuffixTape<Scalar>& t) -> Mat<Scalar> { return run(t.arg_value(ax)); },
      [ax, w](SuffixTape<Scalar>& t, const Mat<Scalar>& g) {
        t.accumulate(ax.slot, g * w->transpose());
      });
}

template <typename Scalar>
TNode<Scalar> t_matmul(SuffixTape<Scalar>* tape, const TNode<Scalar>& a, const TNode<Scalar>& b) {
  if (detail::off_tape(tape, a, b)) return constant<Scalar>(matmul(a.v, b.v));
  auto aa = detail::Arg<Scalar>::of(a), ab = detail::Arg<Scalar>::of(b);
  return detail::emit<Scalar>(
      *tape,
      [aa, ab](SuffixTape<Scalar>& t) -> Mat<Scalar> {
        return matmul(t.arg_value(aa), t.arg_value(ab));
      },
      [aa, ab](SuffixTape<Scalar>& t, const Mat<Scalar>& g) {
        t.accumulate(aa.slot, g * t.arg_value(ab).transpose());
        t.accumulate(ab.slot, t.arg_value(aa).transpose() * g);
      });
}

// y = a * b^T (rows of b are the right-hand vectors; attention scores).
template <typename Scalar>
TNode<Scalar> t_matmul_nt(SuffixTape<Scalar>* tape, const TNode<Scalar>& a,
                          const TNode<Scalar>& b) {
  if (a.v.cols() != b.v.cols()) throw InvariantError("matmul_nt: feature widths disagree");
  if (detail::off_tape(tape, a, b)) return constant<Scalar>(Mat<Scalar>(a.v * b.v.transpose()));
  auto aa = detail::Arg<Scalar>::of(a), ab = detail::Arg<Scalar>::of(b);
  return detail::emit<Scalar>(
      *tape,
      [aa, ab](SuffixTape<Scalar>& t) -> Mat<Scalar> {
        return t.arg_value(aa) * t.arg_value(ab).transpose();
      },
      [aa, ab](SuffixTape<Scalar>& t, const Mat<Scalar>& g) {
        t.accumulate(aa.slot, g * t.arg_value(ab));
        t.accumulate(ab.slot, g.transpose() * t.arg_value(aa));
      });
}

template <typename Scalar>
TNode<Scalar> t_scale(SuffixTape<Scalar>* tape, const TNode<Scalar>& x, Scalar alpha) {
  if (detail::off_tape(tape, x)) return constant<Scalar>(Mat<Scalar>(x.v * alpha));
  auto ax = detail::Arg<Scalar>::of(x);
  return detail::emit<Scalar>(
      *tape,
      [ax, alpha](SuffixTape<Scalar>& t) -> Mat<Scalar> { return t.arg_value(ax) * alpha; },
      [ax, alpha](SuffixTape<Scalar>& t, const Mat<Scalar>& g) {
        t.accumulate(ax.slot, g * alpha);
      });
}

template <typename Scalar>
TNode<Scalar> t_layer_norm(SuffixTape<Scalar>* tape, const TNode<Scalar>& x,
                           const Vec<Scalar>* gain, const Vec<Scalar>* bias, Scalar eps) {
  if (detail::off_tape(tape, x)) return constant<Scalar>(layer_norm_rows(x.v, *gain, *bias, eps));
  auto ax = detail::Arg<Scalar>::of(x);
  return detail::emit<Scalar>(
      *tape,
      [ax, gain, bias, eps](SuffixTape<Scalar>& t) -> Mat<Scalar> {
        return layer_norm_rows(t.arg_value(ax), *gain, *bias, eps);
      },
      [ax, gain, eps](SuffixTape<Scalar>& t, const Mat<Scalar>& g) {
        if (ax.slot < 0) return;
        const Mat<Scalar>& in = t.arg_value(ax);
        const Index n = in.cols();
        const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n);
        Mat<Scalar> gx(in.rows(), n);
        for (Index i = 0; i < in.rows(); ++i) {
          const Scalar mean = in.row(i).sum() * inv_n;
          const auto centered = (in.row(i).array() - mean).eval();
          const Scalar var = centered.square().sum() * inv_n;
          const Scalar inv_std = Scalar(1) / std::sqrt(var + eps);
          const auto xhat = (centered * inv_std).eval();
          const auto d = (g.row(i).array() * gain->transpose().array()).eval();
          const Scalar d_mean = d.sum() * inv_n;
          const Scalar dx_mean = (d * xhat).sum() * inv_n;
          gx.row(i) = (inv_std * (d - d_mean - xhat * dx_mean)).matrix();
        }
        t.accumulate(ax.slot, gx);
      });
}

template <typename Scalar>
TNode<Scalar> t_gelu(SuffixTape<Scalar>* tape, const TNode<Scalar>& x) {
  if (detail::off_tape(tape, x)) return constant<Scalar>(gelu(x.v));
  auto ax = detail::Arg<Scalar>::of(x);
  return detail::emit<Scalar>(
      *tape, [ax](SuffixTape<Scalar>& t) -> Mat<Scalar> { return gelu(t.arg_value(ax)); },
      [ax](SuffixTape<Scalar>& t, const Mat<Scalar>& g) {
        if (ax.slot < 0) return;
        const Mat<Scalar>& in = t.arg_value(ax);
        Mat<Scalar> gx(in.rows(), in.cols());
        for (Index i = 0; i < in.rows(); ++i)
          for (Index j = 0; j < in.cols(); ++j) {
            const Scalar v = in(i, j);
            const Scalar cdf =
                Scalar(0.5) * (Scalar(1) + std::erf(v * Scalar(0.7071067811865476)));
            const Scalar pdf =
                Scalar(0.3989422804014327) * std::exp(Scalar(-0.5) * v * v);
            gx(i, j) = g(i, j) * (cdf + v * pdf);
          }
        t.accumulate(ax.slot, gx);
      });
}

template <typename Scalar>
TNode<Scalar> t_causal_softmax(SuffixTape<Scalar>* tape, const TNode<Scalar>& x) {
  if (detail::off_tape(tape, x)) return constant<Scalar>(causal_softmax_rows(x.v));
  auto ax = detail::Arg<Scalar>::of(x);
  return detail::emit<Scalar>(
      *tape,
      [ax](SuffixTape<Scalar>& t) -> Mat<Scalar> { return causal_softmax_rows(t.arg_value(ax)); },
      [ax](SuffixTape<Scalar>& t, const Mat<Scalar>& g) {
        if (ax.slot < 0) return;
        const Mat<Scalar> s = causal_softmax_rows(t.arg_value(ax));
        Mat<Scalar> gx = Mat<Scalar>::Zero(s.rows(), s.cols());
        for (Index i = 0; i < s.rows(); ++i) {
          const Index n = i + 1;
          const auto si = s.row(i).head(n).array();
          const auto gi = g.row(i).head(n).array();
          const Scalar dot = (gi * si).sum();
          gx.row(i).head(n) = (si * (gi - dot)).matrix();
        }
        t.accumulate(ax.slot, gx);
      });
}

// Row r is treated as absolute position r, matching rotary_apply_rows. The
// backward pass is the inverse rotation.
template <typename Scalar>
TNode<Scalar> t_rotary(SuffixTape<Scalar>* tape, const TNode<Scalar>& x, double rotary_fraction,
                       double base = kRotaryBase) {
  if (detail::off_tape(tape, x))
    return constant<Scalar>(rotary_apply_rows(x.v, rotary_fraction, base));
  auto ax = detail::Arg<Scalar>::of(x);
  return detail::emit<Scalar>(
      *tape,
      [ax, rotary_fraction, base](SuffixTape<Scalar>& t) -> Mat<Scalar> {
        return rotary_apply_rows(t.arg_value(ax), rotary_fraction, base);
      },
      [ax, rotary_fraction, base](SuffixTape<Scalar>& t, const Mat<Scalar>& g) {
        if (ax.slot < 0) return;
        Mat<Scalar> gx = g;
        const Index rot = rotary_width(gx.cols(), rotary_fraction);
        for (Index r = 0; r < gx.rows(); ++r) {
          auto row = gx.row(r);
          rotary_apply_inplace<Scalar>(row, -r, rot, base);
        }
        t.accumulate(ax.slot, gx);
      });
}

// Horizontal concatenation; every part must have the same row count.
template <typename Scalar>
TNode<Scalar> t_concat_cols(SuffixTape<Scalar>* tape, const std::vector<TNode<Scalar>>& parts) {
  if (parts.empty()) throw InvariantError("concat_cols: nothing to concatenate");
  Index cols = 0;
  bool any_tracked = false;
  for (const auto& p : parts) {
    if (p.v.rows() != parts[0].v.rows()) throw InvariantError("concat_cols: row counts disagree");
    cols += p.v.cols();
    any_tracked = any_tracked || p.tracked();
  }
  auto assemble = [cols](const std::vector<Mat<Scalar>>& vs) {
    Mat<Scalar> out(vs[0].rows(), cols);
    Index c = 0;
    for (const auto& v : vs) {
      out.middleCols(c, v.cols()) = v;
      c += v.cols();
    }
    return out;
  };
  if (tape == nullptr || !any_tracked) {
    std::vector<Mat<Scalar>> vs;
    vs.reserve(parts.size());
    for (const auto& p : parts) vs.push_back(p.v);
    return constant<Scalar>(assemble(vs));
  }
  std::vector<detail::Arg<Scalar>> args;
  std::vector<Index> widths;
  args.reserve(parts.size());
  for (const auto& p : parts) {
    args.push_back(detail::Arg<Scalar>::of(p));
    widths.push_back(p.v.cols());
  }
  return detail::emit<Scalar>(
      *tape,
      [args, assemble](SuffixTape<Scalar>& t) -> Mat<Scalar> {
        std::vector<Mat<Scalar>> vs;
        vs.reserve(args.size());
        for (const auto& a : args) vs.push_back(t.arg_value(a));
        return assemble(vs);
      },
      [args, widths](SuffixTape<Scalar>& t, const Mat<Scalar>& g) {
        Index c = 0;
        for (size_t k = 0; k < args.size(); ++k) {
          t.accumulate(args[k].slot, g.middleCols(c, widths[k]));
          c += widths[k];
        }
      });
}

// Column block [c0, c0 + n); splits fused projections apart.
template <typename Scalar>
TNode<Scalar> t_cols(SuffixTape<Scalar>* tape, const TNode<Scalar>& x, Index c0, Index n) {
  if (c0 < 0 || n < 0 || c0 + n > x.v.cols()) throw InvariantError("cols: block out of range");
  if (detail::off_tape(tape, x)) return constant<Scalar>(Mat<Scalar>(x.v.middleCols(c0, n)));
  auto ax = detail::Arg<Scalar>::of(x);
  return detail::emit<Scalar>(
      *tape,
      [ax, c0, n](SuffixTape<Scalar>& t) -> Mat<Scalar> {
        return t.arg_value(ax).middleCols(c0, n);
      },
      [ax, c0, n](SuffixTape<Scalar>& t, const Mat<Scalar>& g) {
        if (ax.slot < 0) return;
        t.grad_slot(ax.slot).middleCols(c0, n) += g;
      });
}

// Replaces row r of x with `rowv` (1 x cols). This is how a differentiable
// value enters an otherwise constant activation.
template <typename Scalar>
TNode<Scalar> t_overwrite_row(SuffixTape<Scalar>* tape, const TNode<Scalar>& x, Index r,
                              const TNode<Scalar>& rowv) {
  if (rowv.v.rows() != 1 || rowv.v.cols() != x.v.cols())
    throw InvariantError("overwrite_row: replacement must be 1 x width");
  if (r < 0 || r >= x.v.rows()) throw InvariantError("overwrite_row: row out of range");
  if (detail::off_tape(tape, x, rowv)) {
    Mat<Scalar> out = x.v;
    out.row(r) = rowv.v.row(0);
    return constant<Scalar>(std::move(out));
  }
  auto ax = detail::Arg<Scalar>::of(x), ar = detail::Arg<Scalar>::of(rowv);
  return detail::emit<Scalar>(
      *tape,
      [ax, ar, r](SuffixTape<Scalar>& t) -> Mat<Scalar> {
        Mat<Scalar> out = t.arg_value(ax);
        out.row(r) = t.arg_value(ar).row(0);
        return out;
      },
      [ax, ar, r](SuffixTape<Scalar>& t, const Mat<Scalar>& g) {
        if (ax.slot >= 0) {
          Mat<Scalar> gx = g;
          gx.row(r).setZero();
          t.accumulate(ax.slot, gx);
        }
        t.accumulate(ar.slot, g.row(r));
      });
}

template <typename Scalar>
TNode<Scalar> t_row(SuffixTape<Scalar>* tape, const TNode<Scalar>& x, Index r) {
  if (r < 0 || r >= x.v.rows()) throw InvariantError("row: index out of range");
  if (detail::off_tape(tape, x)) return constant<Scalar>(Mat<Scalar>(x.v.row(r)));
  auto ax = detail::Arg<Scalar>::of(x);
  return detail::emit<Scalar>(
      *tape, [ax, r](SuffixTape<Scalar>& t) -> Mat<Scalar> { return t.arg_value(ax).row(r); },
      [ax, r](SuffixTape<Scalar>& t, const Mat<Scalar>& g) {
        if (ax.slot < 0) return;
        t.grad_slot(ax.slot).row(r) += g.row(0);
      });
}

// -log softmax(logits)[idx] for a single 1 x V row of logits. The log-sum-exp
// accumulates in double either way.
template <typename Scalar>
TNode<Scalar> t_neg_log_prob(SuffixTape<Scalar>* tape, const TNode<Scalar>& logits, Index idx) {
  if (logits.v.rows() != 1) throw InvariantError("neg_log_prob: expected a single row of logits");
  if (idx < 0 || idx >= logits.v.cols()) throw InvariantError("neg_log_prob: index out of range");
  auto run = [idx](const Mat<Scalar>& lg) -> Mat<Scalar> {
    const double lse = log_sum_exp_row(lg.row(0));
    Mat<Scalar> out(1, 1);
    out(0, 0) = static_cast<Scalar>(lse - static_cast<double>(lg(0, idx)));
    return out;
  };
  if (detail::off_tape(tape, logits)) return constant<Scalar>(run(logits.v));
  auto ax = detail::Arg<Scalar>::of(logits);
  return detail::emit<Scalar>(
      *tape, [ax, run](SuffixTape<Scalar>& t) -> Mat<Scalar> { return run(t.arg_value(ax)); },
      [ax, idx](SuffixTape<Scalar>& t, const Mat<Scalar>& g) {
        if (ax.slot < 0) return;
        Mat<Scalar> p = softmax_rows(t.arg_value(ax));
        p(0, idx) -= Scalar(1);
        t.accumulate(ax.slot, g(0, 0) * p);
      });
}

template <typename Scalar>
TNode<Scalar> t_sum(SuffixTape<Scalar>* tape, const TNode<Scalar>& x) {
  if (detail::off_tape(tape, x)) {
    Mat<Scalar> out(1, 1);
    out(0, 0) = x.v.sum();
    return constant<Scalar>(std::move(out));
  }
  auto ax = detail::Arg<Scalar>::of(x);
  return detail::emit<Scalar>(
      *tape,
      [ax](SuffixTape<Scalar>& t) -> Mat<Scalar> {
        Mat<Scalar> out(1, 1);
        out(0, 0) = t.arg_value(ax).sum();
        return out;
      },
      [ax](SuffixTape<Scalar>& t, const Mat<Scalar>& g) {
        if (ax.slot < 0) return;
        const auto& v = t.arg_value(ax);
        t.accumulate(ax.slot, Mat<Scalar>::Constant(v.rows(), v.cols(), g(0, 0)));
      });
}

// Marks `loss` as the tape's output scalar, tracked or not.
template <typename Scalar>
void set_loss(SuffixTape<Scalar>& tape, const TNode<Scalar>& loss) {
  if (loss.v.rows() != 1 || loss.v.cols() != 1)
    throw InvariantError("tape: loss must be a scalar");
  if (loss.tracked())
    tape.mark_loss(loss);
  else
    tape.mark_loss_const(loss.v(0, 0));
}

}  // namespace patchlab
