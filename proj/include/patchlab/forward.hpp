#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "patchlab/model.hpp"
#include "patchlab/ops.hpp"
#include "patchlab/tape.hpp"

// The hooked forward pass. One implementation serves plain evaluation,
// activation capture, intervened runs, and differentiable runs: edits and
// taps address four site kinds, and an optional tape makes everything
// downstream of an injected seed differentiable with respect to it.

namespace patchlab {

enum class SiteKind { ResidOut, AttnOut, MlpOut, HeadOut };

inline const char* site_kind_name(SiteKind k) {
  switch (k) {
    case SiteKind::ResidOut: return "resid";
    case SiteKind::AttnOut: return "attn";
    case SiteKind::MlpOut: return "mlp";
    case SiteKind::HeadOut: return "head";
  }
  return "?";
}

struct TapKey {
  SiteKind kind;
  int layer = 0;
  int head = -1;  // meaningful only for HeadOut
  auto operator<=>(const TapKey&) const = default;
};

// Replaces the component of f_b along the unit direction a with f_s's
// component; the orthogonal complement is untouched.
template <typename Scalar>
Vec<Scalar> das_apply(const Vec<Scalar>& f_b, const Vec<Scalar>& f_s, const Vec<Scalar>& a) {
  if (f_b.size() != f_s.size() || f_b.size() != a.size())
    throw InvariantError("das_apply: shapes disagree");
  const double norm = static_cast<double>(a.norm());
  if (std::abs(norm - 1.0) > 1e-6)
    throw InvariantError("das_apply: direction must have unit norm (got " + std::to_string(norm) +
                         ")");
  const Scalar delta = f_s.dot(a) - f_b.dot(a);
  return f_b + delta * a;
}

template <typename Scalar>
struct SiteEdit {
  enum class Action { Patch, ProjectSwap, Scale, Seed };

  SiteKind kind = SiteKind::ResidOut;
  int layer = 0;
  int head = -1;
  Action action = Action::Patch;

  // Rows to edit; empty means every position (Scale only).
  std::vector<Index> positions;

  Mat<Scalar> rows;         // Patch: one row per position; Seed: the single injected row
  Vec<Scalar> direction;    // ProjectSwap
  Mat<Scalar> source_rows;  // ProjectSwap: f(s) rows, one per position
  Scalar alpha = Scalar(1);  // Scale
};

struct RunOptions {
  // When false only the final position's logits are produced (row 0 of a
  // 1 x vocab matrix); taps are unaffected.
  bool logits_all_positions = true;
};

template <typename Scalar>
struct RunResult {
  Mat<Scalar> logits;
  TNode<Scalar> logits_node;           // tracked when a seed fed the logits
  std::map<TapKey, Mat<Scalar>> taps;  // full sequence x width per tapped site
  TNode<Scalar> seed;                  // the injected seed node, if any
};

namespace detail {

template <typename Scalar>
Index site_width(const ModelConfig& c, SiteKind kind) {
  return kind == SiteKind::HeadOut ? c.d_head : c.d_model;
}

template <typename Scalar>
void check_run_inputs(const Model<Scalar>& model, const std::vector<int>& tokens,
                      const std::vector<TapKey>& taps, const std::vector<SiteEdit<Scalar>>& edits,
                      SuffixTape<Scalar>* tape) {
  const auto& c = model.config;
  if (tokens.empty()) throw InputError("forward: empty token sequence");
  if (static_cast<int>(tokens.size()) > c.max_positions)
    throw InputError("forward: sequence of " + std::to_string(tokens.size()) +
                     " tokens exceeds max_positions " + std::to_string(c.max_positions));
  for (const int t : tokens)
    if (t < 0 || t >= c.vocab_size)
      throw InputError("forward: token id " + std::to_string(t) + " out of range");

  auto check_site = [&](SiteKind kind, int layer, int head, const char* what) {
    if (layer < 0 || layer >= c.n_layers)
      throw InputError(std::string(what) + ": layer " + std::to_string(layer) + " out of range");
    if (kind == SiteKind::HeadOut) {
      if (head < 0 || head >= c.n_heads)
        throw InputError(std::string(what) + ": head " + std::to_string(head) + " out of range");
    } else if (head != -1) {
      throw InputError(std::string(what) + ": head index only applies to head sites");
    }
  };

  for (const auto& t : taps) check_site(t.kind, t.layer, t.head, "tap");

  const Index seq = static_cast<Index>(tokens.size());
  int seeds = 0;
  for (const auto& e : edits) {
    using Action = typename SiteEdit<Scalar>::Action;
    check_site(e.kind, e.layer, e.head, "edit");
    const Index width = site_width<Scalar>(c, e.kind);
    for (const Index p : e.positions)
      if (p < 0 || p >= seq)
        throw InputError("edit: position " + std::to_string(p) + " out of range for " +
                         std::to_string(seq) + " tokens");
    if (e.positions.empty() && e.action != Action::Scale)
      throw InvariantError("edit: only scaling may cover every position implicitly");
    switch (e.action) {
      case Action::Patch:
        if (e.rows.rows() != static_cast<Index>(e.positions.size()) || e.rows.cols() != width)
          throw InvariantError("patch: replacement shape does not match the site");
        break;
      case Action::ProjectSwap:
        if (e.direction.size() != width)
          throw InvariantError("projection swap: direction width does not match the site");
        if (e.source_rows.rows() != static_cast<Index>(e.positions.size()) ||
            e.source_rows.cols() != width)
          throw InvariantError("projection swap: source shape does not match the site");
        break;
      case Action::Scale:
        break;
      case Action::Seed:
        if (!tape) throw InvariantError("seed edit requires a tape");
        if (e.positions.size() != 1 || e.rows.rows() != 1 || e.rows.cols() != width)
          throw InvariantError("seed edit must inject one row at one position");
        if (++seeds > 1) throw InvariantError("at most one seed edit per run");
        break;
    }
  }
}

// Applies edits addressed to this site, then records any matching taps (taps
// observe what downstream computation consumes).
template <typename Scalar>
TNode<Scalar> visit_site(TNode<Scalar> x, SiteKind kind, int layer, int head,
                         const std::vector<SiteEdit<Scalar>>& edits,
                         const std::vector<TapKey>& taps, RunResult<Scalar>& result,
                         SuffixTape<Scalar>* tape) {
  using Action = typename SiteEdit<Scalar>::Action;
  for (const auto& e : edits) {
    if (e.kind != kind || e.layer != layer || e.head != head) continue;
    switch (e.action) {
      case Action::Patch:
        for (size_t k = 0; k < e.positions.size(); ++k)
          x = t_overwrite_row(tape, x, e.positions[k],
                              constant<Scalar>(Mat<Scalar>(e.rows.row(static_cast<Index>(k)))));
        break;
      case Action::ProjectSwap:
        for (size_t k = 0; k < e.positions.size(); ++k) {
          const Vec<Scalar> f_b = x.v.row(e.positions[k]).transpose();
          const Vec<Scalar> f_s = e.source_rows.row(static_cast<Index>(k)).transpose();
          const Vec<Scalar> swapped = das_apply(f_b, f_s, e.direction);
          x = t_overwrite_row(tape, x, e.positions[k],
                              constant<Scalar>(Mat<Scalar>(swapped.transpose())));
        }
        break;
      case Action::Scale:
        if (e.positions.empty()) {
          x = t_scale(tape, x, e.alpha);
        } else {
          for (const Index p : e.positions)
            x = t_overwrite_row(tape, x, p, constant<Scalar>(Mat<Scalar>(e.alpha * x.v.row(p))));
        }
        break;
      case Action::Seed: {
        result.seed = make_seed(*tape, e.rows);
        x = t_overwrite_row(tape, x, e.positions[0], result.seed);
        break;
      }
    }
  }
  for (const auto& t : taps)
    if (t.kind == kind && t.layer == layer && t.head == head) result.taps[t] = x.v;
  return x;
}

}  // namespace detail

template <typename Scalar>
RunResult<Scalar> run_model(const Model<Scalar>& model, const std::vector<int>& tokens,
                            const std::vector<TapKey>& taps = {},
                            const std::vector<SiteEdit<Scalar>>& edits = {},
                            const RunOptions& opts = {}, SuffixTape<Scalar>* tape = nullptr) {
  detail::check_run_inputs(model, tokens, taps, edits, tape);
  const auto& c = model.config;
  const Index seq = static_cast<Index>(tokens.size());
  const Index dh = c.d_head;

  RunResult<Scalar> result;

  Mat<Scalar> embedded(seq, c.d_model);
  for (Index t = 0; t < seq; ++t) embedded.row(t) = model.embed.row(tokens[static_cast<size_t>(t)]);
  TNode<Scalar> x = constant<Scalar>(std::move(embedded));

  for (int l = 0; l < c.n_layers; ++l) {
    const auto& w = model.layers[static_cast<size_t>(l)];
    const Scalar eps = static_cast<Scalar>(c.layer_norm_eps);

    auto ln1 = t_layer_norm(tape, x, &w.ln1_gain, &w.ln1_bias, eps);
    auto qkv = t_linear(tape, ln1, &w.w_qkv, &w.b_qkv);

    std::vector<TNode<Scalar>> heads;
    heads.reserve(static_cast<size_t>(c.n_heads));
    for (int h = 0; h < c.n_heads; ++h) {
      auto q = t_rotary(tape, t_cols(tape, qkv, model.q_col(h), dh), c.rotary_fraction);
      auto k = t_rotary(tape, t_cols(tape, qkv, model.k_col(h), dh), c.rotary_fraction);
      auto v = t_cols(tape, qkv, model.v_col(h), dh);
      auto scores = t_scale(tape, t_matmul_nt(tape, q, k),
                            static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dh))));
      auto probs = t_causal_softmax(tape, scores);
      auto head_out = t_matmul(tape, probs, v);
      head_out = detail::visit_site(head_out, SiteKind::HeadOut, l, h, edits, taps, result, tape);
      heads.push_back(std::move(head_out));
    }

    auto attn = t_linear(tape, t_concat_cols(tape, heads), &w.w_out, &w.b_out);
    attn = detail::visit_site(attn, SiteKind::AttnOut, l, -1, edits, taps, result, tape);

    TNode<Scalar> mlp_in;
    TNode<Scalar> after_attn;
    if (c.parallel_residual) {
      mlp_in = t_layer_norm(tape, x, &w.ln2_gain, &w.ln2_bias, eps);
    } else {
      after_attn = t_add(tape, x, attn);
      mlp_in = t_layer_norm(tape, after_attn, &w.ln2_gain, &w.ln2_bias, eps);
    }
    auto mlp = t_linear(tape, t_gelu(tape, t_linear(tape, mlp_in, &w.w_up, &w.b_up)), &w.w_down,
                        &w.b_down);
    mlp = detail::visit_site(mlp, SiteKind::MlpOut, l, -1, edits, taps, result, tape);

    x = c.parallel_residual ? t_add(tape, t_add(tape, x, attn), mlp) : t_add(tape, after_attn, mlp);
    x = detail::visit_site(x, SiteKind::ResidOut, l, -1, edits, taps, result, tape);
  }

  TNode<Scalar> pre_norm = x;
  if (!opts.logits_all_positions) pre_norm = t_row(tape, pre_norm, seq - 1);
  auto normed = t_layer_norm(tape, pre_norm, &model.final_gain, &model.final_bias,
                             static_cast<Scalar>(c.layer_norm_eps));
  result.logits_node = t_linear(tape, normed, &model.unembed);
  result.logits = result.logits_node.v;
  return result;
}

// Sum over positions 1..n-1 of log p(token[t] | tokens[..t)), accumulated in
// double.
template <typename Scalar>
double sequence_logprob(const Model<Scalar>& model, const std::vector<int>& tokens) {
  if (tokens.size() < 2) throw InputError("sequence_logprob: need at least two tokens");
  const RunResult<Scalar> res = run_model(model, tokens);
  double acc = 0.0;
  for (size_t t = 1; t < tokens.size(); ++t) {
    const auto row = res.logits.row(static_cast<Index>(t - 1));
    acc += static_cast<double>(row(tokens[t])) - log_sum_exp_row(row);
  }
  return acc;
}

}  // namespace patchlab
