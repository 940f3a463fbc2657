#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "../gradcheck.hpp"
#include "uwbseq/ad/optim.hpp"

namespace ad = uwbseq::ad;
using uwbseq::testing::grad_check;
using uwbseq::testing::leaf;
using uwbseq::testing::random_tensor;
using ad::Shape;
using ad::Tensor;
using ad::Var;

namespace {

constexpr double kTol = 1e-5;
constexpr int kShapes = 5;

Shape random_shape(std::mt19937_64& g, int min_rank = 1, int max_rank = 3) {
  std::uniform_int_distribution<int> rank(min_rank, max_rank), dim(1, 5);
  Shape s(static_cast<std::size_t>(rank(g)));
  for (auto& d : s) d = static_cast<std::size_t>(dim(g));
  return s;
}

// Drops a random number of leading dims and sets a random subset of the rest to 1.
Shape broadcast_partner(std::mt19937_64& g, const Shape& s) {
  std::uniform_int_distribution<std::size_t> drop(0, s.size() - 1);
  Shape out(s.begin() + static_cast<long>(drop(g)), s.end());
  std::bernoulli_distribution one(0.4);
  for (auto& d : out)
    if (one(g)) d = 1;
  return out;
}

void expect_grad(const std::function<Var(const std::vector<Var>&)>& f, std::vector<Var> in, double tol = kTol) {
  const auto r = grad_check(f, std::move(in));
  EXPECT_LT(r.worst, tol) << r.where;
}

struct UnaryCase {
  const char* name;
  Var (*op)(const Var&);
  double lo, hi;
};

}  // namespace

TEST(Broadcast, AddMatchesManualExpansion) {
  const Var a(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  const Var b(Tensor({3}, {10, 20, 30}));
  const Tensor c = ad::add(a, b).value();
  EXPECT_EQ(c.shape(), (Shape{2, 3}));
  const std::vector<double> want = {11, 22, 33, 14, 25, 36};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(c[i], want[i]);
  const Var col(Tensor({2, 1}, {100, 200}));
  const Tensor d = ad::mul(a, col).value();
  EXPECT_DOUBLE_EQ(d[0], 100);
  EXPECT_DOUBLE_EQ(d[5], 1200);
}

TEST(Broadcast, IncompatibleShapesThrowWithBothShapes) {
  const Var a(Tensor({2, 3})), b(Tensor({4}));
  try {
    ad::add(a, b);
    FAIL() << "expected throw";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4]"), std::string::npos) << msg;
  }
}

TEST(Backward, RejectsNonScalarLoss) {
  Var a(Tensor({2}), true);
  EXPECT_THROW(ad::backward(ad::exp(a)), std::invalid_argument);
}

TEST(Backward, AccumulatesOverSharedSubgraphs) {
  Var x(Tensor::scalar(3.0), true);
  const Var y = ad::mul(x, x);  // x used twice
  ad::backward(ad::add(y, x));
  EXPECT_DOUBLE_EQ(x.grad().item(), 7.0);
}

TEST(Backward, NoGradGuardDropsTape) {
  Var x(Tensor::scalar(2.0), true);
  ad::NoGradGuard guard;
  const Var y = ad::exp(x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(GradCheck, UnaryElementwise) {
  const UnaryCase cases[] = {
      {"neg", &ad::neg, -2, 2},           {"exp", &ad::exp, -2, 2},
      {"log", &ad::log, 0.2, 3},          {"sqrt", &ad::sqrt, 0.2, 3},
      {"reciprocal", &ad::reciprocal, 0.3, 2}, {"square", &ad::square, -2, 2},
      {"sigmoid", &ad::sigmoid, -4, 4},   {"tanh", &ad::tanh, -3, 3},
      {"softplus", &ad::softplus, -5, 5}, {"silu", &ad::silu, -4, 4},
  };
  std::mt19937_64 g(11);
  for (const auto& c : cases) {
    for (int i = 0; i < kShapes; ++i) {
      SCOPED_TRACE(std::string(c.name) + " shape " + std::to_string(i));
      expect_grad([&](const std::vector<Var>& in) { return c.op(in[0]); }, {leaf(g, random_shape(g), c.lo, c.hi)});
    }
  }
}

TEST(GradCheck, ScalarOps) {
  std::mt19937_64 g(12);
  for (int i = 0; i < kShapes; ++i) {
    const Shape s = random_shape(g);
    expect_grad([](const std::vector<Var>& in) { return ad::add_scalar(in[0], 1.7); }, {leaf(g, s)});
    expect_grad([](const std::vector<Var>& in) { return ad::mul_scalar(in[0], -0.3); }, {leaf(g, s)});
  }
}

TEST(GradCheck, BinaryBroadcasting) {
  std::mt19937_64 g(13);
  for (int i = 0; i < kShapes; ++i) {
    const Shape s = random_shape(g, 1, 4);
    const Shape t = broadcast_partner(g, s);
    SCOPED_TRACE(ad::shape_str(s) + " with " + ad::shape_str(t));
    expect_grad([](const std::vector<Var>& in) { return ad::add(in[0], in[1]); }, {leaf(g, s), leaf(g, t)});
    expect_grad([](const std::vector<Var>& in) { return ad::sub(in[1], in[0]); }, {leaf(g, s), leaf(g, t)});
    expect_grad([](const std::vector<Var>& in) { return ad::mul(in[0], in[1]); }, {leaf(g, s), leaf(g, t)});
  }
}

TEST(GradCheck, Matmul) {
  std::mt19937_64 g(14);
  std::uniform_int_distribution<std::size_t> d(1, 5);
  for (int i = 0; i < kShapes; ++i) {
    Shape a = random_shape(g, 1, 3);
    const Shape b = {a.back(), d(g)};
    SCOPED_TRACE(ad::shape_str(a) + " x " + ad::shape_str(b));
    expect_grad([](const std::vector<Var>& in) { return ad::matmul(in[0], in[1]); }, {leaf(g, a), leaf(g, b)});
  }
}

TEST(GradCheck, ShapeOps) {
  std::mt19937_64 g(15);
  for (int i = 0; i < kShapes; ++i) {
    const Shape s = random_shape(g, 2, 4);
    SCOPED_TRACE(ad::shape_str(s));
    expect_grad([](const std::vector<Var>& in) { return ad::transpose(in[0]); }, {leaf(g, s)});
    expect_grad([](const std::vector<Var>& in) { return ad::reshape(in[0], {ad::shape_numel(in[0].shape())}); },
                {leaf(g, s)});
    const int axis = static_cast<int>(g() % s.size());
    const std::size_t n = s[static_cast<std::size_t>(axis)];
    const std::size_t start = g() % n, len = 1 + g() % (n - start);
    expect_grad([&](const std::vector<Var>& in) { return ad::slice(in[0], axis, start, len); }, {leaf(g, s)});
    Shape s2 = s;
    s2[static_cast<std::size_t>(axis)] = 1 + g() % 3;
    expect_grad([&](const std::vector<Var>& in) { return ad::concat({in[0], in[1], in[0]}, axis); },
                {leaf(g, s), leaf(g, s2)});
  }
}

TEST(GradCheck, Reductions) {
  std::mt19937_64 g(16);
  for (int i = 0; i < kShapes; ++i) {
    const Shape s = random_shape(g, 1, 4);
    const int axis = static_cast<int>(g() % s.size()) - (i % 2 ? static_cast<int>(s.size()) : 0);
    SCOPED_TRACE(ad::shape_str(s) + " axis " + std::to_string(axis));
    expect_grad([](const std::vector<Var>& in) { return ad::sum(in[0]); }, {leaf(g, s)});
    expect_grad([](const std::vector<Var>& in) { return ad::mean(in[0]); }, {leaf(g, s)});
    for (bool keep : {false, true}) {
      expect_grad([&](const std::vector<Var>& in) { return ad::sum(in[0], axis, keep); }, {leaf(g, s)});
      expect_grad([&](const std::vector<Var>& in) { return ad::mean(in[0], axis, keep); }, {leaf(g, s)});
    }
    expect_grad([&](const std::vector<Var>& in) { return ad::cumsum(in[0], axis); }, {leaf(g, s)});
  }
}

TEST(GradCheck, NormAndLoss) {
  std::mt19937_64 g(17);
  for (int i = 0; i < kShapes; ++i) {
    const Shape s = random_shape(g, 1, 3);
    SCOPED_TRACE(ad::shape_str(s));
    expect_grad([](const std::vector<Var>& in) { return ad::rms_norm(in[0], in[1]); },
                {leaf(g, s), leaf(g, {s.back()})});
    expect_grad([](const std::vector<Var>& in) { return ad::mse_loss(in[0], in[1]); }, {leaf(g, s), leaf(g, s)});
  }
}

TEST(Ops, CumsumAndReductionValues) {
  const Var a(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  const Tensor c = ad::cumsum(a, 1).value();
  EXPECT_DOUBLE_EQ(c[2], 6);
  EXPECT_DOUBLE_EQ(c[5], 15);
  const Tensor m = ad::mean(a, 0, false).value();
  EXPECT_EQ(m.shape(), (Shape{3}));
  EXPECT_DOUBLE_EQ(m[1], 3.5);
  EXPECT_DOUBLE_EQ(ad::mse_loss(a, Var(Tensor({2, 3}))).value().item(), 91.0 / 6.0);
}

TEST(Ops, MatmulRankOneKeepsRank) {
  const Var a(Tensor({2}, {1, 2}));
  const Var b(Tensor({2, 2}, {1, 2, 3, 4}));
  const Tensor c = ad::matmul(a, b).value();
  EXPECT_EQ(c.shape(), (Shape{2}));
  EXPECT_DOUBLE_EQ(c[0], 7);
  EXPECT_DOUBLE_EQ(c[1], 10);
}

TEST(Optim, LrScheduleSteps) {
  EXPECT_DOUBLE_EQ(ad::lr_schedule(0, 1e-3, 20, 0.5), 1e-3);
  EXPECT_DOUBLE_EQ(ad::lr_schedule(19, 1e-3, 20, 0.5), 1e-3);
  EXPECT_DOUBLE_EQ(ad::lr_schedule(20, 1e-3, 20, 0.5), 5e-4);
  EXPECT_DOUBLE_EQ(ad::lr_schedule(45, 1e-3, 20, 0.5), 2.5e-4);
}

TEST(Optim, AdamFirstStepMovesByLr) {
  // Bias correction makes the first update lr * sign(g) (up to eps).
  ad::ParameterSet params(3);
  Var w = params.constant("w", {3}, 1.0);
  ad::backward(ad::sum(ad::mul(w, Var(Tensor({3}, {2.0, -0.5, 4.0})))));
  ad::AdamState state;
  ad::adam_step(params, state, 0.01);
  EXPECT_NEAR(w.value()[0], 0.99, 1e-9);
  EXPECT_NEAR(w.value()[1], 1.01, 1e-9);
  EXPECT_NEAR(w.value()[2], 0.99, 1e-9);
}

TEST(Optim, InitDependsOnlyOnSeedAndName) {
  ad::ParameterSet a(9), b(9);
  a.normal("first", {4}, 1.0);
  const Var wa = a.normal("w", {5}, 1.0);
  const Var wb = b.normal("w", {5}, 1.0);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(wa.value()[i], wb.value()[i]);
  EXPECT_EQ(a.count(), 9u);
}

TEST(Optim, CheckpointRoundTripAndHashGuard) {
  const auto path = std::filesystem::temp_directory_path() / "uwbseq_ckpt_test.bin";
  ad::ParameterSet a(1);
  a.normal("w", {2, 3}, 1.0);
  a.zeros("b", {3});
  ad::save_checkpoint(a, 0xabc, path);
  ad::ParameterSet b(2);
  b.zeros("w", {2, 3});
  b.constant("b", {3}, 5.0);
  ad::load_checkpoint(b, 0xabc, path);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(b.get("w").value()[i], a.get("w").value()[i]);
  EXPECT_EQ(b.get("b").value()[0], 0.0);
  EXPECT_THROW(ad::load_checkpoint(b, 0xabd, path), std::runtime_error);
  ad::ParameterSet c(2);
  c.zeros("w", {3, 2});
  c.zeros("b", {3});
  EXPECT_THROW(ad::load_checkpoint(c, 0xabc, path), std::runtime_error);
  std::filesystem::remove(path);
}
