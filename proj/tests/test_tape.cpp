#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "patchlab/common.hpp"
#include "patchlab/matrix.hpp"
#include "patchlab/tape.hpp"

using namespace patchlab;

namespace {

// A fixed bundle of parameters for a graph that exercises every op the model
// forward pass uses: row injection, layer norm, linear layers, rotary, fused
// column splits, scaled scores, causal softmax, gelu, products, concat,
// residual add, row select and the log prob loss.
template <typename S>
struct GraphWeights {
  Mat<S> base;         // 4 x 8 constant activations the seed row is written into
  Vec<S> gamma, beta;  // layer norm parameters, width 8
  Mat<S> w1;           // 8 x 8
  Vec<S> b1;
  Mat<S> w2;  // 8 x 4
  Vec<S> b2;
  Mat<S> w3;  // 8 x 16, no bias
};

GraphWeights<double> make_weights(uint64_t seed) {
  Rng rng(seed);
  GraphWeights<double> w;
  w.base = random_matrix<double>(4, 8, rng);
  w.gamma = random_vector<double>(8, rng, 0.3);
  w.gamma.array() += 1.0;
  w.beta = random_vector<double>(8, rng, 0.3);
  w.w1 = random_matrix<double>(8, 8, rng, 0.5);
  w.b1 = random_vector<double>(8, rng, 0.2);
  w.w2 = random_matrix<double>(8, 4, rng, 0.5);
  w.b2 = random_vector<double>(4, rng, 0.2);
  w.w3 = random_matrix<double>(8, 16, rng, 0.5);
  return w;
}

template <typename S>
GraphWeights<S> cast_weights(const GraphWeights<double>& w) {
  GraphWeights<S> out;
  out.base = w.base.template cast<S>();
  out.gamma = w.gamma.template cast<S>();
  out.beta = w.beta.template cast<S>();
  out.w1 = w.w1.template cast<S>();
  out.b1 = w.b1.template cast<S>();
  out.w2 = w.w2.template cast<S>();
  out.b2 = w.b2.template cast<S>();
  out.w3 = w.w3.template cast<S>();
  return out;
}

// With tape == nullptr this evaluates eagerly through the same free
// functions, which is what the finite difference oracle uses.
template <typename S>
TNode<S> build_graph(SuffixTape<S>* tape, const Mat<S>& seed_value, const GraphWeights<S>& w) {
  TNode<S> s = tape ? make_seed(*tape, seed_value) : constant<S>(seed_value);
  auto x0 = t_overwrite_row(tape, constant<S>(w.base), 2, s);
  auto ln = t_layer_norm(tape, x0, &w.gamma, &w.beta, S(1e-5));
  auto y1 = t_linear(tape, ln, &w.w1, &w.b1);
  auto r = t_rotary(tape, y1, 0.5);
  auto q = t_cols(tape, r, 0, 4);
  auto k = t_cols(tape, r, 4, 4);
  auto sc = t_scale(tape, t_matmul_nt(tape, q, k), S(0.5));
  auto p = t_causal_softmax(tape, sc);
  auto v = t_gelu(tape, t_linear(tape, x0, &w.w2, &w.b2));
  auto o = t_matmul(tape, p, v);
  auto cat = t_concat_cols(tape, {o, q});
  auto z = t_add(tape, cat, x0);
  auto row = t_row(tape, z, 3);
  auto logits = t_linear(tape, row, &w.w3);
  return t_neg_log_prob(tape, logits, 5);
}

double eval_eager(const Mat<double>& seed_value, const GraphWeights<double>& w) {
  return build_graph<double>(nullptr, seed_value, w).v(0, 0);
}

}  // namespace

TEST_CASE("sum of the seed has an all ones gradient") {
  Rng rng(31);
  SuffixTape<double> tape;
  auto s = make_seed(tape, random_matrix<double>(3, 4, rng));
  set_loss(tape, t_sum(&tape, s));
  const Mat<double> g = tape.seed_gradient();
  CHECK(g == Mat<double>::Ones(3, 4));
}

TEST_CASE("a loss that never touches the seed has a zero gradient") {
  Rng rng(32);
  SuffixTape<double> tape;
  make_seed(tape, random_matrix<double>(1, 2, rng));
  // Constant loss: nothing downstream of the seed was recorded.
  set_loss(tape, t_sum<double>(&tape, constant<double>(random_matrix<double>(2, 2, rng))));
  const Mat<double> g = tape.seed_gradient();
  CHECK(g == Mat<double>::Zero(1, 2));
}

TEST_CASE("a sliced off path contributes exactly zero") {
  Rng rng(33);
  SuffixTape<double> tape;
  auto s = make_seed(tape, random_matrix<double>(1, 2, rng));
  auto cat = t_concat_cols<double>(&tape, {s, constant<double>(random_matrix<double>(1, 3, rng))});
  // Select only the constant columns; the loss is on the tape but the seed's
  // columns never reach it.
  set_loss(tape, t_sum(&tape, t_cols(&tape, cat, 2, 3)));
  const Mat<double> g = tape.seed_gradient();
  CHECK(g == Mat<double>::Zero(1, 2));
}

TEST_CASE("tape gradient matches central finite differences through every op") {
  const auto w = make_weights(101);
  Rng rng(102);
  const Mat<double> seed_value = random_matrix<double>(1, 8, rng);

  SuffixTape<double> tape;
  auto loss = build_graph(&tape, seed_value, w);
  set_loss(tape, loss);
  const Mat<double> g = tape.seed_gradient();
  REQUIRE(g.rows() == 1);
  REQUIRE(g.cols() == 8);

  const double h = 1e-6;
  for (Index m = 0; m < 8; ++m) {
    Mat<double> up = seed_value, dn = seed_value;
    up(0, m) += h;
    dn(0, m) -= h;
    const double fd = (eval_eager(up, w) - eval_eager(dn, w)) / (2.0 * h);
    CHECK(std::abs(g(0, m) - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("replaying an unchanged tape reproduces the loss bit for bit") {
  const auto w = make_weights(103);
  Rng rng(104);
  const Mat<double> seed_value = random_matrix<double>(1, 8, rng);

  SuffixTape<double> tape;
  set_loss(tape, build_graph(&tape, seed_value, w));
  const double l0 = tape.loss_value();
  CHECK(tape.replay_loss() == l0);
  CHECK(tape.replay_loss() == l0);
  // The taped forward and the eager path run the same functions.
  CHECK(eval_eager(seed_value, w) == l0);
}

TEST_CASE("replay after overwriting the seed re-propagates the suffix") {
  const auto w = make_weights(105);
  Rng rng(106);
  const Mat<double> seed_value = random_matrix<double>(1, 8, rng);

  SuffixTape<double> tape;
  set_loss(tape, build_graph(&tape, seed_value, w));

  Mat<double> other = random_matrix<double>(1, 8, rng);
  tape.value_mut(tape.seed_slot()) = other;
  CHECK(tape.replay_loss() == eval_eager(other, w));
}

TEST_CASE("gradients are recomputed fresh on every backward call") {
  const auto w = make_weights(107);
  Rng rng(108);
  SuffixTape<double> tape;
  set_loss(tape, build_graph(&tape, random_matrix<double>(1, 8, rng), w));
  const Mat<double> g1 = tape.seed_gradient();
  const Mat<double> g2 = tape.seed_gradient();
  CHECK(g1 == g2);
}

TEST_CASE("pinned loss value for a tiny logits row") {
  // softmax([0, ln 3]) = [1/4, 3/4]; -log(3/4) = log(4) - log(3).
  Mat<double> logits(1, 2);
  logits << 0.0, std::log(3.0);
  auto node = t_neg_log_prob<double>(nullptr, constant<double>(logits), 1);
  CHECK(node.v(0, 0) == doctest::Approx(std::log(4.0 / 3.0)).epsilon(1e-12));
}

TEST_CASE("tape rejects a second seed and non scalar losses") {
  Rng rng(34);
  SuffixTape<double> tape;
  auto s = make_seed(tape, random_matrix<double>(1, 4, rng));
  CHECK_THROWS_AS(make_seed(tape, random_matrix<double>(1, 4, rng)), InvariantError);
  CHECK_THROWS_AS(set_loss(tape, s), InvariantError);

  SuffixTape<double> empty;
  CHECK_THROWS_AS(empty.seed_gradient(), InvariantError);
}

TEST_CASE("single precision graph agrees with double precision") {
  const auto w64 = make_weights(109);
  const auto w32 = cast_weights<float>(w64);
  Rng rng(110);
  const Mat<double> seed64 = random_matrix<double>(1, 8, rng);
  const Mat<float> seed32 = seed64.cast<float>();

  SuffixTape<double> t64;
  set_loss(t64, build_graph(&t64, seed64, w64));
  SuffixTape<float> t32;
  set_loss(t32, build_graph(&t32, seed32, w32));

  CHECK(static_cast<double>(t32.loss_value()) ==
        doctest::Approx(t64.loss_value()).epsilon(1e-3));
  CHECK(t32.replay_loss() == t32.loss_value());

  const Mat<double> g64 = t64.seed_gradient();
  const Mat<double> g32 = t32.seed_gradient().cast<double>();
  const double cosine = (g64.row(0).dot(g32.row(0))) / (g64.row(0).norm() * g32.row(0).norm());
  CHECK(cosine > 0.999);
}
