#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <bit>
#include <random>

#include "rhia/grad_check.hpp"
#include "rhia/ops.hpp"
#include "rhia/selfcheck.hpp"
#include "test_util.hpp"

using namespace rhia;
using namespace rhia::ops;
using testutil::random_tensor;

namespace {

Tensor<double> vec(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor<double>(Shape{n}, std::move(v));
}

Tensor<double> mat(std::size_t r, std::size_t c, std::vector<double> v) { return Tensor<double>(Shape{r, c}, std::move(v)); }

Tensor<double> affine_of(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b) {
  Tape<double> tape;
  auto row = tape.constant(mat(1, x.size(), {x.values().begin(), x.values().end()}));
  return affine(row, tape.constant(w), tape.constant(b)).value();
}

}  // namespace

TEST(Tensor, BuffersMatchShape) {
  Tensor<float> t({3, 4});
  EXPECT_EQ(t.size(), 12u);
  EXPECT_EQ(t.grad().size(), 12u);
  for (auto g : t.grad()) EXPECT_EQ(g, 0.0f);
  Tensor<double> s({2, 3, 5});
  EXPECT_EQ(s.values().size(), 30u);
  EXPECT_EQ(s.grad().size(), 30u);
}

TEST(Affine, IdentityWeights) {
  auto y = affine_of(vec({1, 2}), mat(2, 2, {1, 0, 0, 1}), vec({0, 0}));
  EXPECT_DOUBLE_EQ(y[0], 1);
  EXPECT_DOUBLE_EQ(y[1], 2);
}

TEST(Affine, ZeroWeightsGiveBias) {
  auto y = affine_of(vec({1, 2}), mat(2, 2, {0, 0, 0, 0}), vec({3, 4}));
  EXPECT_DOUBLE_EQ(y[0], 3);
  EXPECT_DOUBLE_EQ(y[1], 4);
}

TEST(Affine, HandMultiplication) {
  // [1, -1] [[2, 1], [1, 2]] = [2 - 1, 1 - 2] = [1, -1], plus 0.5
  auto y = affine_of(vec({1, -1}), mat(2, 2, {2, 1, 1, 2}), vec({0.5, 0.5}));
  EXPECT_NEAR(y[0], 1.5, 1e-15);
  EXPECT_NEAR(y[1], -0.5, 1e-15);
}

TEST(Affine, ShapeMismatchNamesBothShapes) {
  Tape<double> tape;
  auto x = tape.constant(mat(1, 3, {1, 2, 3}));
  auto w = tape.constant(mat(2, 2, {1, 0, 0, 1}));
  try {
    affine(x, w, tape.constant(vec({0, 0})));
    FAIL() << "expected a shape error";
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[1x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2x2]"), std::string::npos) << msg;
  }
}

TEST(Softmax, Symmetric) {
  Tape<double> tape;
  auto y = softmax_rows(tape.constant(mat(1, 2, {0, 0}))).value();
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  EXPECT_DOUBLE_EQ(y[1], 0.5);
}

TEST(Softmax, MatchesDirectExponentiation) {
  Tape<double> tape;
  auto y = softmax_rows(tape.constant(mat(1, 3, {1, 2, 3}))).value();
  const long double z = std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L);
  const double expected[] = {0.09003057, 0.24472847, 0.66524096};
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(y[i], static_cast<double>(std::exp(static_cast<long double>(i + 1)) / z), 1e-15);
    EXPECT_NEAR(y[i], expected[i], 5e-9);
  }
}

TEST(Softmax, LargeShiftDoesNotOverflow) {
  Tape<double> tape;
  auto y = softmax_rows(tape.constant(mat(1, 2, {7, 1007}))).value();
  EXPECT_TRUE(std::isfinite(y[0]) && std::isfinite(y[1]));
  EXPECT_NEAR(y[0], 0.0, 1e-300);
  EXPECT_NEAR(y[1], 1.0, 1e-15);
}

TEST(Softmax, SumsToOneAndShiftInvariant) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_tensor<double>({4, 7}, rng, -20, 20);
    auto shifted = x;
    for (auto& v : shifted.values()) v += 123.25;
    Tape<double> tape;
    auto a = softmax_rows(tape.constant(x)).value();
    auto b = softmax_rows(tape.constant(shifted)).value();
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 7; ++c) {
        s += a.at(r, c);
        EXPECT_NEAR(a.at(r, c), b.at(r, c), 1e-9);
        EXPECT_GT(a.at(r, c), 0.0);
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(Softmax, NanInputIsAnError) {
  Tape<double> tape;
  EXPECT_THROW(softmax_rows(tape.constant(mat(1, 2, {0, std::nan("")}))), NumericError);
}

TEST(LayerNorm, ConstantRowCollapsesToShift) {
  Tape<double> tape;
  auto y = layer_norm_rows(tape.constant(mat(1, 4, {1, 1, 1, 1})), tape.constant(vec({1, 1, 1, 1})),
                           tape.constant(vec({0, 0, 0, 0})), 1e-5)
               .value();
  for (auto v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, TwoPointsByHand) {
  // mean 2, population std 1
  Tape<double> tape;
  auto y = layer_norm_rows(tape.constant(mat(1, 2, {1, 3})), tape.constant(vec({1, 1})), tape.constant(vec({0, 0})), 0.0)
               .value();
  EXPECT_DOUBLE_EQ(y[0], -1);
  EXPECT_DOUBLE_EQ(y[1], 1);
}

TEST(LayerNorm, ZeroShiftGivesZeroMean) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_tensor<double>({3, 9}, rng, -5, 5);
    Tape<double> tape;
    auto y = layer_norm_rows(tape.constant(x), tape.constant(Tensor<double>({9}, std::vector<double>(9, 1.0))),
                             tape.constant(Tensor<double>({9})), 1e-5)
                 .value();
    for (std::size_t r = 0; r < 3; ++r) {
      double m = 0;
      for (std::size_t c = 0; c < 9; ++c) m += y.at(r, c);
      EXPECT_NEAR(m / 9, 0.0, 1e-9);
    }
  }
}

TEST(SegmentMax, PiecewiseMaxima) {
  // segments are [0, 1], [2, 3], [4]: split points at the 2nd and 4th token
  Tape<double> tape;
  auto f = tape.constant(mat(5, 1, {1, -2, 3, 0, 5}));
  auto y = segment_max(f, {0, 5}, {{1, 3}}).value();
  ASSERT_EQ(y.size(), 3u);
  EXPECT_EQ(y[0], 1);
  EXPECT_EQ(y[1], 3);
  EXPECT_EQ(y[2], 5);
}

TEST(SegmentMax, EmptySegmentIsZeroAndCounted) {
  Tape<double> tape;
  auto f = tape.constant(mat(3, 1, {-4, -2, -3}));
  std::size_t empty = 0;
  auto y = segment_max(f, {0, 3}, {{0, 2}}, &empty).value();
  EXPECT_EQ(y[0], -4);
  EXPECT_EQ(y[1], -2);
  EXPECT_EQ(y[2], 0);
  EXPECT_EQ(empty, 1u);
}

TEST(Dropout, InvertedScalingAndIdentityAtZero) {
  std::mt19937_64 rng(3);
  Tape<double> tape;
  Tensor<double> ones({1000}, std::vector<double>(1000, 1.0));
  auto x = tape.constant(ones);
  auto y = dropout(x, 0.25, rng).value();
  std::size_t kept = 0;
  for (auto v : y.values()) {
    EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-15);
    kept += v != 0.0;
  }
  EXPECT_NEAR(double(kept) / 1000, 0.75, 0.05);
  auto same = dropout(x, 0.0, rng);
  EXPECT_EQ(same.id, x.id);
}

TEST(Nll, MeanOfNegatedTargets) {
  Tape<double> tape;
  auto lp = tape.constant(mat(2, 3, {-0.1, -2, -3, -1, -0.5, -4}));
  EXPECT_DOUBLE_EQ(nll(lp, {0, 1}).scalar(), (0.1 + 0.5) / 2);
  EXPECT_THROW(nll(lp, {0, 3}), NumericError);
}

TEST(Tape, ReusedParameterAccumulates) {
  Tensor<double> x({1}, {3.0});
  Tape<double> tape;
  auto v = tape.param(x);
  auto v2 = tape.param(x);
  tape.backward(sum_squares(mul(v, v2)));  // x^4
  EXPECT_DOUBLE_EQ(x.grad()[0], 4 * 27.0);
}

TEST(Tape, DisconnectedParameterGradIsExactlyZero) {
  std::mt19937_64 rng(1);
  auto a = random_tensor<double>({3, 3}, rng), b = random_tensor<double>({3, 3}, rng);
  Tape<double> tape;
  auto va = tape.param(a);
  tape.param(b);
  tape.backward(sum_squares(tanh(va)));
  for (auto g : b.grad()) EXPECT_EQ(std::bit_cast<std::uint64_t>(g), 0u);
  bool any = false;
  for (auto g : a.grad()) any = any || g != 0.0;
  EXPECT_TRUE(any);
}

TEST(Tape, GradientsAccumulateUntilZeroed) {
  Tensor<double> x({2}, {1.0, -2.0});
  for (int pass = 0; pass < 2; ++pass) {
    Tape<double> tape;
    tape.backward(sum_squares(tape.param(x)));
  }
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], -8.0);
  x.zero_grad();
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Tape, NonScalarLossRejected) {
  Tensor<double> x({2}, {1.0, 2.0});
  Tape<double> tape;
  EXPECT_THROW(tape.backward(tanh(tape.param(x))), NumericError);
}

TEST(GradCheck, Quadratic) {
  Tensor<double> x({1}, {3.0});
  GradCheckOptions opt;
  opt.step = 1e-5;
  auto rep = grad_check<double>([&](Tape<double>& t) { return sum_squares(t.param(x)); }, {{"x", &x}}, opt);
  ASSERT_EQ(rep.worst.size(), 1u);
  EXPECT_DOUBLE_EQ(rep.worst[0].analytic, 6.0);
  EXPECT_NEAR(rep.worst[0].numeric, 6.0, 1e-6);
  EXPECT_TRUE(rep.passed);
}

TEST(GradCheck, ConstantFunction) {
  Tensor<double> x({2}, {3.0, -1.0});
  auto rep = grad_check<double>(
      [&](Tape<double>& t) {
        t.param(x);
        return sum_squares(t.constant(Tensor<double>({1}, {2.0})));
      },
      {{"x", &x}});
  for (const auto& e : rep.worst) {
    EXPECT_EQ(e.analytic, 0.0);
    EXPECT_EQ(e.numeric, 0.0);
  }
  EXPECT_TRUE(rep.passed);
}

TEST(GradCheck, ZeroToleranceAlwaysFails) {
  Tensor<double> x({1}, {3.0});
  GradCheckOptions opt;
  opt.tolerance = 0;
  auto rep = grad_check<double>([&](Tape<double>& t) { return sum_squares(t.param(x)); }, {{"x", &x}}, opt);
  EXPECT_FALSE(rep.passed);
}

TEST(GradCheck, EveryPrimitiveInDouble) {
  GradCheckOptions opt;
  for (const auto& c : check_primitives(opt)) EXPECT_TRUE(c.report.passed) << c.op << ": " << c.report.summary();
}

TEST(GradCheck, PrimitivesInSinglePrecision) {
  std::mt19937_64 rng(9);
  GradCheckOptions opt;
  opt.step = 1e-2;
  opt.tolerance = 1e-2;
  opt.abs_floor = 1e-3;
  auto a = random_tensor<float>({3, 4}, rng), b = random_tensor<float>({4, 2}, rng);
  auto gain = random_tensor<float>({4}, rng), shift = random_tensor<float>({4}, rng);
  auto proj = random_tensor<float>({3, 4}, rng);
  auto check = [&](const char* name, std::function<Var<float>(Tape<float>&)> fn, std::vector<NamedTensor<float>> ps) {
    auto rep = grad_check<float>(fn, ps, opt);
    EXPECT_TRUE(rep.passed) << name << ": " << rep.summary();
  };
  check("matmul", [&](Tape<float>& t) { return sum_squares(matmul(t.param(a), t.param(b))); }, {{"a", &a}, {"b", &b}});
  check("sigmoid", [&](Tape<float>& t) { return sum_squares(mul(sigmoid(t.param(a)), t.constant(proj))); },
        {{"a", &a}});
  check("tanh", [&](Tape<float>& t) { return sum_squares(mul(tanh(t.param(a)), t.constant(proj))); }, {{"a", &a}});
  check("softmax", [&](Tape<float>& t) { return sum_squares(mul(softmax_rows(t.param(a)), t.constant(proj))); },
        {{"a", &a}});
  check("layer_norm",
        [&](Tape<float>& t) {
          return sum_squares(
              mul(layer_norm_rows(t.param(a), t.param(gain), t.param(shift), 1e-5f), t.constant(proj)));
        },
        {{"a", &a}, {"gain", &gain}, {"shift", &shift}});
}

TEST(GradCheck, CorruptedRuleIsCaughtAndNamed) {
  testutil::FaultGuard guard("sigmoid");
  GradCheckOptions opt;
  for (const auto& c : check_primitives(opt)) {
    if (c.recorded.count("sigmoid")) EXPECT_FALSE(c.report.passed) << c.op;
    else EXPECT_TRUE(c.report.passed) << c.op;
  }
}
