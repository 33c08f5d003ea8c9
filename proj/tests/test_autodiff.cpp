#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "spanedit/autodiff.hpp"
#include "spanedit/rng.hpp"

using namespace spanedit;
using ad::Tape;
using ad::Var;

namespace {

NArray random_array(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  SplitMix64 rng(seed);
  NArray a(s);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.uniform_real(lo, hi);
  return a;
}

// Reduces any output to a scalar with fixed, non-uniform weights so every
// output coordinate contributes a distinct amount.
Var weighted_sum(Tape& t, Var y) {
  NArray w(y.shape());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.0 + 0.7 * static_cast<double>(i));
  if (y.shape().rank() == 0) return y;
  return ad::sum(ad::mul(y, t.constant(std::move(w))));
}

double check(const std::function<Var(Tape&, std::span<const Var>)>& op, std::vector<NArray> params) {
  auto f = [&op](Tape& t, std::span<const Var> p) { return weighted_sum(t, op(t, p)); };
  return ad::grad_check(f, std::move(params)).max_relative_error;
}

constexpr double kTol = 1e-6;

}  // namespace

TEST(Forward, MatmulValues) {
  Tape t;
  Var a = t.constant(NArray::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  Var b = t.constant(NArray::matrix(3, 2, {1, 0, 0, 1, 1, 1}));
  EXPECT_EQ(ad::matmul(a, b).value(), NArray::matrix(2, 2, {4, 5, 10, 11}));
  Var bt = t.constant(NArray::matrix(2, 3, {1, 0, 1, 0, 1, 1}));
  EXPECT_EQ(ad::matmul(a, bt, true).value(), NArray::matrix(2, 2, {4, 5, 10, 11}));
  Var v = t.constant(NArray::vector({1, 1}));
  EXPECT_EQ(ad::matmul(v, a).value(), NArray::vector({5, 7, 9}));
}

TEST(Forward, LogSoftmaxNormalizesAndIgnoresMaskedEntries) {
  Tape t;
  auto mask = std::make_shared<std::vector<std::uint8_t>>(std::vector<std::uint8_t>{0, 1, 0, 0});
  Var x = t.constant(NArray::matrix(2, 2, {1.0, 2.0, 3.0, -1.0}));
  Var y = ad::log_softmax(ad::masked_fill(x, mask), 1);
  EXPECT_EQ(y.value().at(0, 0), 0.0);
  EXPECT_EQ(y.value().at(0, 1), kNegInf);
  EXPECT_NEAR(std::exp(y.value().at(1, 0)) + std::exp(y.value().at(1, 1)), 1.0, 1e-15);
}

TEST(Forward, LogsumexpIsStableForLargeInputs) {
  Tape t;
  Var x = t.constant(NArray::vector({1000.0, 1000.0}));
  EXPECT_NEAR(ad::logsumexp(x).value().item(), 1000.0 + std::log(2.0), 1e-12);
  Var y = t.constant(NArray::vector({kNegInf, kNegInf}));
  EXPECT_THROW(ad::logsumexp(y), NumericError);
  EXPECT_THROW(ad::log_softmax(y, 0), NumericError);
}

TEST(Forward, AnalyticValues) {
  Tape t;
  EXPECT_NEAR(ad::logsumexp(t.constant(NArray::vector({0, 0}))).value().item(), 0.693147180559945, 1e-15);
  const NArray ls = ad::log_softmax(t.constant(NArray::vector({5, 5, 5})), 0).value();
  for (double v : ls.values()) EXPECT_NEAR(v, -std::log(3.0), 1e-15);
}

TEST(Forward, SoftmaxSumsToOneForRandomInputs) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Tape t;
    const NArray x = random_array(Shape{3, 7}, seed, -40.0, 40.0);
    const NArray y = ad::log_softmax(t.constant(x), 1).value();
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 7; ++c) s += std::exp(y.at(r, c));
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(Forward, OuterAddAndGather) {
  Tape t;
  Var u = t.constant(NArray::vector({1, 2}));
  Var v = t.constant(NArray::vector({10, 20}));
  EXPECT_EQ(ad::outer_add(u, v).value(), NArray::vector({11, 21, 12, 22}));
  Var w = t.constant(NArray::vector({10, 20, 30}));
  std::vector<std::size_t> idx{2, 0, 2};
  EXPECT_EQ(ad::gather(w, idx).value(), NArray::vector({30, 10, 30}));
}

TEST(Forward, ShapeErrorsNameTheOperation) {
  Tape t;
  Var a = t.constant(NArray::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  Var b = t.constant(NArray::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  try {
    ad::matmul(a, b);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos);
  }
  EXPECT_THROW(ad::add(a, t.constant(NArray::vector({1, 2}))), ShapeError);
  EXPECT_THROW(NArray(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Backward, SimpleChainRule) {
  Tape t;
  Var x = t.variable(NArray::scalar(0.3));
  Var y = ad::sum(ad::mul(ad::tanh(x), ad::tanh(x)));
  t.backward(y);
  const double th = std::tanh(0.3);
  EXPECT_NEAR((*t.grad_if_any(x.id()))[0], 2 * th * (1 - th * th), 1e-15);
}

TEST(Backward, SquareAndLogsumexp) {
  Tape t;
  Var x = t.variable(NArray::scalar(3.0));
  t.backward(ad::sum(ad::mul(x, x)));
  EXPECT_EQ((*t.grad_if_any(x.id()))[0], 6.0);

  Tape u;
  Var v = u.variable(NArray::vector({0.1, -2.0, 1.5}));
  u.backward(ad::logsumexp(v));
  const NArray sm = ad::softmax(u.constant(v.value()), 0).value();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR((*u.grad_if_any(v.id()))[i], sm[i], 1e-15);
}

TEST(Backward, NonScalarLossIsRejected) {
  Tape t;
  Var x = t.variable(NArray::vector({1, 2}));
  EXPECT_THROW(t.backward(ad::tanh(x)), ShapeError);
}

TEST(Backward, LinearInTheLoss) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const NArray a = random_array(Shape{2, 3}, seed);
    auto grad_of = [&](int which) {
      Tape t;
      Var x = t.variable(a);
      Var l1 = ad::logsumexp(ad::reshape(ad::tanh(x), Shape{6}));
      Var l2 = ad::sum(ad::mul(ad::sigmoid(x), x));
      Var loss = which == 0 ? l1 : which == 1 ? l2 : ad::add(l1, l2);
      t.backward(loss);
      return *t.grad_if_any(x.id());
    };
    const NArray g1 = grad_of(0), g2 = grad_of(1), g12 = grad_of(2);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(g12[i], g1[i] + g2[i], 1e-14);
  }
}

TEST(Backward, RandomThreeLayerComposite) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto f = [](Tape&, std::span<const Var> p) {
      Var h1 = ad::tanh(ad::add(ad::matmul(p[0], p[1]), p[2]));
      Var h2 = ad::sigmoid(ad::matmul(h1, p[3]));
      return ad::sum(ad::mul(ad::log_softmax(h2, 1), h2));
    };
    const auto r = ad::grad_check(f, {random_array(Shape{2, 3}, seed), random_array(Shape{3, 4}, seed + 10),
                                      random_array(Shape{4}, seed + 20), random_array(Shape{4, 3}, seed + 30)});
    EXPECT_LE(r.max_relative_error, 1e-6);
  }
}

TEST(Backward, ConstantsReceiveNoGradient) {
  Tape t;
  Var c = t.constant(NArray::vector({1, 2}));
  Var x = t.variable(NArray::vector({3, 4}));
  t.backward(ad::sum(ad::mul(c, x)));
  EXPECT_EQ(t.grad_if_any(c.id()), nullptr);
  EXPECT_EQ(*t.grad_if_any(x.id()), NArray::vector({1, 2}));
}

TEST(GradCheck, Matmul) {
  EXPECT_LE(check([](Tape&, std::span<const Var> p) { return ad::matmul(p[0], p[1]); },
                  {random_array(Shape{3, 4}, 1), random_array(Shape{4, 2}, 2)}),
            kTol);
  EXPECT_LE(check([](Tape&, std::span<const Var> p) { return ad::matmul(p[0], p[1], true); },
                  {random_array(Shape{3, 4}, 3), random_array(Shape{5, 4}, 4)}),
            kTol);
  EXPECT_LE(check([](Tape&, std::span<const Var> p) { return ad::matmul(p[0], p[1]); },
                  {random_array(Shape{4}, 5), random_array(Shape{4, 3}, 6)}),
            kTol);
}

TEST(GradCheck, Elementwise) {
  const std::vector<NArray> two{random_array(Shape{3, 4}, 7), random_array(Shape{3, 4}, 8)};
  EXPECT_LE(check([](Tape&, std::span<const Var> p) { return ad::add(p[0], p[1]); }, two), kTol);
  EXPECT_LE(check([](Tape&, std::span<const Var> p) { return ad::sub(p[0], p[1]); }, two), kTol);
  EXPECT_LE(check([](Tape&, std::span<const Var> p) { return ad::mul(p[0], p[1]); }, two), kTol);
  EXPECT_LE(check([](Tape&, std::span<const Var> p) { return ad::add(p[0], p[1]); },
                  {random_array(Shape{3, 4}, 9), random_array(Shape{4}, 10)}),
            kTol);
  EXPECT_LE(check([](Tape&, std::span<const Var> p) { return ad::scale(p[0], -2.5); }, {two[0]}), kTol);
  EXPECT_LE(check([](Tape&, std::span<const Var> p) { return ad::sigmoid(p[0]); }, {two[0]}), kTol);
  EXPECT_LE(check([](Tape&, std::span<const Var> p) { return ad::tanh(p[0]); }, {two[0]}), kTol);
  EXPECT_LE(check([](Tape&, std::span<const Var> p) { return ad::exp(p[0]); }, {two[0]}), kTol);
}

TEST(GradCheck, Structural) {
  const NArray a = random_array(Shape{3, 4}, 11);
  const NArray b = random_array(Shape{3, 2}, 12);
  EXPECT_LE(check([](Tape&, std::span<const Var> p) { return ad::concat({p[0], p[1]}, 1); }, {a, b}), kTol);
  EXPECT_LE(check([](Tape&, std::span<const Var> p) { return ad::concat({p[0], p[0]}, 0); }, {a}), kTol);
  EXPECT_LE(check([](Tape&, std::span<const Var> p) { return ad::slice(p[0], 1, 1, 3); }, {a}), kTol);
  EXPECT_LE(check([](Tape&, std::span<const Var> p) { return ad::row(p[0], 2); }, {a}), kTol);
  EXPECT_LE(check([](Tape&, std::span<const Var> p) { return ad::reshape(p[0], Shape{4, 3}); }, {a}), kTol);
  EXPECT_LE(check(
                [](Tape&, std::span<const Var> p) {
                  std::vector<Var> rows{ad::row(p[0], 1), ad::row(p[0], 0), ad::row(p[0], 1)};
                  return ad::stack(rows);
                },
                {a}),
            kTol);
  EXPECT_LE(check(
                [](Tape&, std::span<const Var> p) {
                  const std::vector<int> ids{2, 0, 2, 1};
                  return ad::embed_lookup(p[0], ids);
                },
                {a}),
            kTol);
  EXPECT_LE(check(
                [](Tape&, std::span<const Var> p) {
                  const std::vector<std::size_t> idx{0, 5, 5, 11};
                  return ad::gather(p[0], idx);
                },
                {a}),
            kTol);
  EXPECT_LE(check([](Tape&, std::span<const Var> p) { return ad::pick(p[0], 7); }, {a}), kTol);
  EXPECT_LE(check([](Tape&, std::span<const Var> p) { return ad::outer_add(p[0], p[1]); },
                  {random_array(Shape{3}, 13), random_array(Shape{3}, 14)}),
            kTol);
  EXPECT_LE(check([](Tape&, std::span<const Var> p) { return ad::outer_add(p[0], p[1]); },
                  {random_array(Shape{2, 3}, 18), random_array(Shape{2, 3}, 19)}),
            kTol);
}

TEST(GradCheck, Normalizers) {
  const NArray a = random_array(Shape{3, 4}, 15, -3.0, 3.0);
  for (std::size_t axis : {0u, 1u}) {
    EXPECT_LE(check([axis](Tape&, std::span<const Var> p) { return ad::log_softmax(p[0], axis); }, {a}), kTol);
    EXPECT_LE(check([axis](Tape&, std::span<const Var> p) { return ad::softmax(p[0], axis); }, {a}), kTol);
    EXPECT_LE(check([axis](Tape&, std::span<const Var> p) { return ad::logsumexp(p[0], axis); }, {a}), kTol);
  }
  EXPECT_LE(check([](Tape&, std::span<const Var> p) { return ad::sum(p[0]); }, {a}), kTol);
}

TEST(GradCheck, MaskedLogSoftmax) {
  auto mask = std::make_shared<std::vector<std::uint8_t>>(std::vector<std::uint8_t>{0, 1, 0, 0, 1, 0, 0, 0, 0, 1, 1, 0});
  const NArray a = random_array(Shape{3, 4}, 16);
  // masked outputs are -inf; drop them before the weighted sum
  auto f = [mask](Tape& t, std::span<const Var> p) {
    Var y = ad::log_softmax(ad::masked_fill(p[0], mask), 1);
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < mask->size(); ++i)
      if (!(*mask)[i]) keep.push_back(i);
    return weighted_sum(t, ad::gather(y, keep));
  };
  EXPECT_LE(ad::grad_check(f, {a}).max_relative_error, kTol);
}

TEST(GradCheck, DropoutWithFixedStream) {
  const NArray a = random_array(Shape{3, 4}, 17);
  auto f = [](Tape& t, std::span<const Var> p) {
    SplitMix64 rng(5);
    return weighted_sum(t, ad::dropout(p[0], 0.3, true, rng));
  };
  EXPECT_LE(ad::grad_check(f, {a}).max_relative_error, kTol);
}

TEST(Dropout, InferenceIsIdentityAndTrainingRescales) {
  Tape t;
  Var x = t.constant(NArray(Shape{1000}, 1.0));
  SplitMix64 rng(3);
  EXPECT_EQ(ad::dropout(x, 0.5, false, rng).value(), x.value());
  const NArray y = ad::dropout(x, 0.5, true, rng).value();
  std::size_t zeros = 0;
  for (double v : y.values()) {
    EXPECT_TRUE(v == 0.0 || v == 2.0);
    zeros += v == 0.0;
  }
  EXPECT_GT(zeros, 400u);
  EXPECT_LT(zeros, 600u);
}

TEST(GradCheck, LinearFunctionIsExact) {
  auto f = [](Tape& t, std::span<const Var> p) {
    return ad::sum(ad::mul(p[0], t.constant(NArray::vector({2.0, -3.0, 0.5}))));
  };
  EXPECT_LE(ad::grad_check(f, {NArray::vector({0.3, 0.1, -7.0})}).max_relative_error, 1e-10);
}

TEST(GradCheck, GruStep) {
  // h' = (1 - z) * n + z * h with r, z, n gates, as used by both encoder and decoder.
  auto f = [](Tape& t, std::span<const Var> p) {
    Var x = p[0], h = p[1];
    Var r = ad::sigmoid(ad::add(ad::matmul(x, p[2], true), ad::matmul(h, p[3], true)));
    Var z = ad::sigmoid(ad::add(ad::matmul(x, p[4], true), ad::matmul(h, p[5], true)));
    Var n = ad::tanh(ad::add(ad::matmul(x, p[6], true), ad::mul(r, ad::matmul(h, p[7], true))));
    Var one = t.constant(NArray(z.shape(), 1.0));
    Var out = ad::add(ad::mul(ad::sub(one, z), n), ad::mul(z, h));
    return weighted_sum(t, out);
  };
  std::vector<NArray> params{random_array(Shape{3}, 1), random_array(Shape{4}, 2)};
  for (std::uint64_t s = 0; s < 3; ++s) {
    params.push_back(random_array(Shape{4, 3}, 10 + s));
    params.push_back(random_array(Shape{4, 4}, 20 + s));
  }
  EXPECT_LE(ad::grad_check(f, params).max_relative_error, 1e-4);
}

TEST(GradCheck, NonFiniteFunctionIsAnError) {
  auto f = [](Tape& t, std::span<const Var> p) {
    return ad::sum(ad::mul(p[0], t.constant(NArray::vector({INFINITY}))));
  };
  EXPECT_THROW(ad::grad_check(f, {NArray::vector({1.0})}), NumericError);
}

TEST(GradCheck, ReportsWorstCoordinate) {
  // A deliberately wrong gradient: the backward pass of a hand-made op that
  // ignores its input.
  auto f = [](Tape& t, std::span<const Var> p) {
    NArray out = p[0].value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] * out[i];
    Var y = t.record(std::move(out), p[0].requires_grad(), [](Tape&, int) {});
    return ad::sum(y);
  };
  const auto r = ad::grad_check(f, {NArray::vector({0.5, 1.0})});
  EXPECT_GT(r.max_relative_error, 0.5);
  EXPECT_EQ(r.coordinates, 2u);
}
