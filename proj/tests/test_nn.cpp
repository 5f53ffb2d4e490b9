#include <gtest/gtest.h>

#include "support.hpp"

using namespace hstgnn;

namespace {

double max_abs(const Mat& a) { return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff(); }

}  // namespace

TEST(Autodiff, MatmulGradientsByHand) {
  Tape t;
  Mat a(2, 2), b(2, 1);
  a << 1, 2, 3, 4;
  b << 5, 6;
  Var va = t.variable(a), vb = t.variable(b);
  Var y = ad::sum(ad::matmul(va, vb));
  EXPECT_DOUBLE_EQ(y.value()(0, 0), 17.0 + 39.0);
  t.backward(y);
  Mat ga(2, 2);
  ga << 5, 6, 5, 6;
  Mat gb(2, 1);
  gb << 4, 6;
  EXPECT_EQ(t.grad(va), ga);
  EXPECT_EQ(t.grad(vb), gb);
}

TEST(Autodiff, SharedInputAccumulates) {
  Tape t;
  Var x = t.variable(Mat::Constant(1, 1, 3.0));
  Var y = ad::add(ad::mul(x, x), x);
  t.backward(y);
  EXPECT_DOUBLE_EQ(t.grad(x)(0, 0), 7.0);
}

TEST(Autodiff, SoftmaxRowsSumToOne) {
  Rng rng(1);
  Tape t;
  Var s = ad::softmax_rows(t.constant(init::normal(4, 5, 3.0, rng)));
  for (Eigen::Index r = 0; r < 4; ++r) EXPECT_NEAR(s.value().row(r).sum(), 1.0, 1e-15);
  Mat big(1, 2);
  big << 1000.0, 0.0;
  EXPECT_NEAR(ad::softmax_rows(t.constant(big)).value()(0, 0), 1.0, 1e-15);
}

TEST(Linear, HandComputed) {
  Tape t;
  Mat x(1, 2), w(2, 2), b(1, 2);
  x << 1, 2;
  w << 0.5, 0.5, 0.5, 2.0;
  b << 0, 0;
  const Mat y = linear(t.constant(x), t.constant(w), t.constant(b)).value();
  EXPECT_DOUBLE_EQ(y(0, 0), 1.5);
  EXPECT_DOUBLE_EQ(y(0, 1), 4.5);
}

TEST(Linear, ShapeMismatchThrows) {
  Tape t;
  EXPECT_THROW(linear(t.constant(Mat::Ones(2, 3)), t.constant(Mat::Ones(2, 2)), t.constant(Mat::Ones(1, 2))),
               ShapeError);
}

TEST(LayerNorm, TwoElementRow) {
  Tape t;
  Mat x(1, 2);
  x << 1, 3;
  const Mat y = layer_norm(t.constant(x), t.constant(Mat::Ones(1, 2)), t.constant(Mat::Zero(1, 2)), kLayerNormEps)
                    .value();
  EXPECT_NEAR(y(0, 0), -1.0, 1e-5);
  EXPECT_NEAR(y(0, 1), 1.0, 1e-5);
}

TEST(LayerNorm, RowsHaveZeroMeanUnitVariance) {
  Rng rng(2);
  Tape t;
  const Mat y = layer_norm(t.constant(init::normal(6, 8, 4.0, rng)), t.constant(Mat::Ones(1, 8)),
                           t.constant(Mat::Zero(1, 8)), 1e-12)
                    .value();
  for (Eigen::Index r = 0; r < 6; ++r) {
    const double m = y.row(r).mean();
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR((y.row(r).array() - m).square().mean(), 1.0, 1e-9);
  }
}

class RecurrentOracle : public ::testing::TestWithParam<int> {};

TEST_P(RecurrentOracle, MatchesScalarLoops) {
  const int gates = GetParam();
  Rng rng(11);
  const Eigen::Index steps = 5, m = 3, din = 2, h = 4;
  ParamStore s;
  add_recurrent(s, "l", din, h, gates, rng);
  const Mat x = init::normal(steps * m, din, 1.0, rng);
  Tape t;
  const auto p = bind_recurrent(t, s, "l");
  const Mat y = (gates == 3 ? gru_layer(t.constant(x), p, steps) : lstm_layer(t.constant(x), p, steps)).value();
  for (Eigen::Index seq = 0; seq < m; ++seq) {
    Mat xs(steps, din);
    for (Eigen::Index k = 0; k < steps; ++k) xs.row(k) = x.row(k * m + seq);
    const auto& v = [&](const char* n) { return s.at(std::string("l.") + n).value; };
    const Mat ref = gates == 3 ? oracle::gru(xs, v("w_ih"), v("w_hh"), v("b_ih"), v("b_hh"))
                               : oracle::lstm(xs, v("w_ih"), v("w_hh"), v("b_ih"), v("b_hh"));
    for (Eigen::Index k = 0; k < steps; ++k) EXPECT_LT(max_abs(y.row(k * m + seq) - ref.row(k)), 1e-13);
  }
}

INSTANTIATE_TEST_SUITE_P(GruAndLstm, RecurrentOracle, ::testing::Values(3, 4));

TEST(Gru, ScalarStep) {
  // One unit, one step, all weights 1 and biases 0: h = (1 - z) n with
  // r = z = sigmoid(x), n = tanh(x).
  Tape t;
  Mat x(1, 1);
  x << 0.5;
  RecurrentVars p{t.constant(Mat::Ones(1, 3)), t.constant(Mat::Ones(1, 3)), t.constant(Mat::Zero(1, 3)),
                  t.constant(Mat::Zero(1, 3))};
  const double z = 1.0 / (1.0 + std::exp(-0.5));
  EXPECT_NEAR(gru_layer(t.constant(x), p, 1).value()(0, 0), (1.0 - z) * std::tanh(0.5), 1e-15);
}

TEST(Gru, SequencesAreIndependent) {
  Rng rng(4);
  ParamStore s;
  add_recurrent(s, "l", 1, 3, 3, rng);
  Mat x = init::normal(8, 1, 1.0, rng);  // 4 steps x 2 sequences
  Tape t1;
  const Mat a = gru_layer(t1.constant(x), bind_recurrent(t1, s, "l"), 4).value();
  for (Eigen::Index k = 0; k < 4; ++k) x(2 * k + 1, 0) += 10.0;
  Tape t2;
  const Mat b = gru_layer(t2.constant(x), bind_recurrent(t2, s, "l"), 4).value();
  for (Eigen::Index k = 0; k < 4; ++k) EXPECT_EQ(a.row(2 * k), b.row(2 * k));
}

TEST(Sampling, ExactlyKNoSelf) {
  Rng rng(5);
  const Mat scores = init::normal(7, 7, 2.0, rng);
  for (int k = 0; k <= 6; ++k)
    for (int draw = 0; draw < 50; ++draw) {
      const GraphSample g = sample_graph(scores, k, &rng);
      for (Eigen::Index i = 0; i < 7; ++i) {
        EXPECT_EQ(g.neighbors[static_cast<std::size_t>(i)].size(), static_cast<std::size_t>(k));
        EXPECT_EQ(g.hard(i, i), 0.0);
        EXPECT_EQ(g.hard.row(i).sum(), static_cast<double>(k));
      }
    }
  EXPECT_THROW(sample_graph(scores, 7, &rng), std::out_of_range);
}

TEST(Sampling, UniformScoresGiveTwoThirds) {
  Rng rng(6);
  const Mat scores = Mat::Zero(4, 4);
  const int draws = 30000;
  Mat count = Mat::Zero(4, 4);
  for (int d = 0; d < draws; ++d) count += sample_graph(scores, 2, &rng).hard;
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index j = 0; j < 4; ++j)
      EXPECT_NEAR(count(i, j) / draws, i == j ? 0.0 : 2.0 / 3.0, 0.015);
}

TEST(Sampling, InclusionOracleSanity) {
  const auto p = oracle::inclusion_probabilities({0.0, 1.0, 1.0, 1.0}, 0, 2);
  EXPECT_NEAR(p[1], 2.0 / 3.0, 1e-15);
  const auto q = oracle::inclusion_probabilities({5.0, 1.0, 2.0, 3.0, 4.0}, 0, 2);
  double s = 0.0;
  for (double v : q) s += v;
  EXPECT_NEAR(s, 2.0, 1e-12);
  EXPECT_EQ(q[0], 0.0);
  EXPECT_LT(q[1], q[2]);
  EXPECT_LT(q[3], q[4]);
}

TEST(Sampling, DeterministicTopKWithoutRng) {
  Mat scores(3, 3);
  scores << 0, 1, 2, 5, 0, 4, 1, 1, 0;
  const GraphSample g = sample_graph(scores, 1, nullptr);
  EXPECT_EQ(g.neighbors[0], std::vector<int>{2});
  EXPECT_EQ(g.neighbors[1], std::vector<int>{0});
  EXPECT_EQ(g.neighbors[2], std::vector<int>{0});  // tie broken by index
  EXPECT_EQ(max_abs(g.noise), 0.0);
}

TEST(StraightThrough, ForwardIsHard) {
  Rng rng(8);
  Tape t;
  Var phi = t.variable(init::normal(5, 5, 1.0, rng));
  const GraphSample g = sample_graph(phi.value(), 2, &rng);
  Var a = straight_through_adjacency(phi, g, 0.5);
  EXPECT_LT(max_abs(a.value() - g.hard), 1e-15);
  t.backward(ad::sum(ad::mul(a, t.constant(init::normal(5, 5, 1.0, rng)))));
  EXPECT_GT(max_abs(t.grad(phi)), 0.0);
}

TEST(Transition, RowStochasticAndZeroRows) {
  Tape t;
  Mat a(3, 3);
  a << 0, 1, 3, 0, 0, 0, 2, 2, 0;
  const Mat p = transition_matrix(t.constant(a)).value();
  EXPECT_LT(max_abs(p - oracle::row_stochastic(a)), 1e-15);
  EXPECT_EQ(p.row(1).sum(), 0.0);
  EXPECT_NO_THROW(check_row_stochastic(p));
  Mat bad = p;
  bad(0, 0) = 0.5;
  EXPECT_THROW(check_row_stochastic(bad), std::invalid_argument);
}

TEST(Diffusion, MatchesDenseOracleSmall) {
  Rng rng(12);
  const Eigen::Index n = 5, blocks = 3, din = 2, dout = 3;
  const int steps = 2;
  ParamStore s;
  add_diffusion(s, "dc", din, dout, steps, true, rng);
  const Mat a = init::uniform(n, n, 1.0, rng).cwiseAbs();
  const Mat h = init::normal(n * blocks, din, 1.0, rng);
  Tape t;
  Var av = t.constant(a);
  Var p = transition_matrix(av), pr = transition_matrix(ad::transpose(av));
  const Mat y = diffusion_conv(t.constant(h), p, &pr, bind_diffusion(t, s, "dc", steps, true), blocks).value();
  std::vector<Mat> w, wr;
  for (int k = 0; k <= steps; ++k) w.push_back(s.at("dc.w" + std::to_string(k)).value);
  for (int k = 1; k <= steps; ++k) wr.push_back(s.at("dc.w_rev" + std::to_string(k)).value);
  const Mat pd = oracle::row_stochastic(a), prd = oracle::row_stochastic(a.transpose());
  for (Eigen::Index b = 0; b < blocks; ++b) {
    const Mat ref = oracle::dense_diffusion(h.middleRows(b * n, n), pd, &prd, w, wr);
    EXPECT_LT(max_abs(y.middleRows(b * n, n) - ref), 1e-12);
  }
}

TEST(Diffusion, ZeroStepsIsPointwise) {
  Rng rng(13);
  ParamStore s;
  add_diffusion(s, "dc", 2, 2, 0, false, rng);
  const Mat h = init::normal(4, 2, 1.0, rng);
  Tape t;
  Var p = transition_matrix(t.constant(Mat::Ones(4, 4)));
  const Mat y = diffusion_conv(t.constant(h), p, nullptr, bind_diffusion(t, s, "dc", 0, false), 1).value();
  EXPECT_LT(max_abs(y - (h * s.at("dc.w0").value).cwiseMax(0.0)), 1e-15);
}

TEST(Attention, UniformWeightsForEqualRows) {
  // Identical rows attend uniformly, so attention reproduces the value row and
  // the residual sum is 2x before normalization.
  Rng rng(14);
  ParamStore s;
  add_attention(s, "att", 3, rng);
  Mat x(4, 3);
  for (Eigen::Index r = 0; r < 4; ++r) x.row(r) << 1.0, -2.0, 0.5;
  Tape t;
  const Mat y = self_attention(t.constant(x), bind_attention(t, s, "att"), 2).value();
  for (Eigen::Index r = 1; r < 4; ++r) EXPECT_LT(max_abs(y.row(r) - y.row(0)), 1e-14);
}

TEST(Attention, BlocksDoNotInteract) {
  Rng rng(15);
  ParamStore s;
  add_attention(s, "att", 3, rng);
  Mat x = init::normal(6, 3, 1.0, rng);
  Tape t1;
  const Mat a = self_attention(t1.constant(x), bind_attention(t1, s, "att"), 2).value();
  x.bottomRows(3).array() += 5.0;
  Tape t2;
  const Mat b = self_attention(t2.constant(x), bind_attention(t2, s, "att"), 2).value();
  EXPECT_EQ(a.topRows(3), b.topRows(3));
}

TEST(GradCheck, PrimitiveSuiteWithinTolerance) {
  for (const auto& c : run_gradcheck_suite(21)) {
    EXPECT_TRUE(c.passed()) << c.name << " " << c.result.max_rel_error << " at " << c.result.worst_param;
    EXPECT_GT(c.result.coordinates, 0u) << c.name;
  }
}

TEST(Rng, SeedReproducible) {
  Rng a(99), b(99);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.normal(), b.normal());
  std::vector<int> v{1, 2, 3, 4, 5}, w = v;
  Rng c(3), d(3);
  c.shuffle(v);
  d.shuffle(w);
  EXPECT_EQ(v, w);
}
