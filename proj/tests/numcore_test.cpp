#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "feddah/error.hpp"
#include "feddah/gradcheck.hpp"
#include "feddah/ops.hpp"
#include "feddah/optim.hpp"
#include "feddah/rng.hpp"
#include "feddah/tape.hpp"
#include "feddah/tensor.hpp"
#include "test_util.hpp"

namespace feddah {
namespace {

using testing::uniform;

TEST(LinearForward, BasisVectorSelectsColumn) {
  const Tensor y = linear_forward(Tensor::vector({1, 0}), Tensor::matrix(2, 2, {2, 3, 4, 5}), Tensor::vector({0, 0}));
  EXPECT_EQ(y, Tensor::vector({2, 4}));
}

TEST(LinearForward, ZeroInputReturnsBias) {
  const Tensor y = linear_forward(Tensor::vector({0, 0}), Tensor::matrix(2, 2, {9, -3, 1.5, 8}), Tensor::vector({7, -1}));
  EXPECT_EQ(y, Tensor::vector({7, -1}));
}

TEST(LinearForward, RowSumPlusBias) {
  const Tensor y = linear_forward(Tensor::vector({1, 1}), Tensor::matrix(1, 2, {1, 1}), Tensor::vector({0.5}));
  EXPECT_EQ(y, Tensor::vector({2.5}));
}

TEST(LinearForward, MismatchNamesBothShapes) {
  try {
    (void)linear_forward(Tensor::vector({1, 2, 3}), Tensor::matrix(2, 2, {1, 2, 3, 4}), Tensor::vector({0, 0}));
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x2]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[3]"), std::string::npos) << msg;
  }
}

TEST(LinearForward, IsLinearWithoutBias) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor W = uniform({4, 3}, rng);
    const Tensor zero_b({4});
    const Tensor x = uniform({3}, rng);
    const Tensor y = uniform({3}, rng);
    const double a = 1.7, b = -0.4;
    Tensor mix({3});
    for (std::size_t i = 0; i < 3; ++i) mix[i] = a * x[i] + b * y[i];
    const Tensor lhs = linear_forward(mix, W, zero_b);
    const Tensor fx = linear_forward(x, W, zero_b);
    const Tensor fy = linear_forward(y, W, zero_b);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(lhs[i], a * fx[i] + b * fy[i], 1e-12);
  }
}

TEST(Tensor, ShapeAndDataMustAgree) {
  EXPECT_THROW(Tensor(Shape{2, 2}, {1, 2, 3}), ConfigError);
  EXPECT_EQ(Tensor(Shape{2, 3}).size(), 6u);
  EXPECT_EQ(Tensor::scalar(4).item(), 4.0);
}

TEST(Tensor, RequireFiniteRejectsNaN) {
  Tensor t = Tensor::vector({1, std::nan("")});
  EXPECT_FALSE(t.all_finite());
  EXPECT_THROW(require_finite(t, "test"), InvariantError);
}

// ---------------------------------------------------------------------------
// Tape

TEST(Backward, SquaredResidual) {
  Tape tape;
  const Var W = tape.param(Tensor::matrix(1, 1, {1}));
  const Var x = tape.constant(Tensor::vector({1}));
  const Var t = tape.constant(Tensor::vector({2}));
  const Var loss = ad::squared_distance(ad::matvec(W, x), t);
  const Gradients g = tape.backward(loss);
  EXPECT_EQ(g[W], Tensor::matrix(1, 1, {-2}));
}

TEST(Backward, UnusedParameterGetsExactZero) {
  Tape tape;
  const Var p = tape.param(Tensor::vector({1, 2}));
  const Var q = tape.param(Tensor::vector({3}));
  const Var loss = ad::sum_squares(p);
  const Gradients g = tape.backward(loss);
  EXPECT_EQ(g[q], Tensor::vector({0}));
  EXPECT_EQ(g[p], Tensor::vector({2, 4}));
}

TEST(Backward, ConstantsAreAbsent) {
  Tape tape;
  const Var p = tape.param(Tensor::vector({1}));
  const Var c = tape.constant(Tensor::vector({5}));
  const Gradients g = tape.backward(ad::sum(p * c));
  EXPECT_TRUE(g.contains(p));
  EXPECT_FALSE(g.contains(c));
}

TEST(Backward, NonScalarLossIsUsageError) {
  Tape tape;
  const Var p = tape.param(Tensor::vector({1, 2}));
  EXPECT_THROW((void)tape.backward(ad::tanh(p)), UsageError);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  // f = sum(p * p) through two uses of the same node: df/dp = 2p.
  Tape tape;
  const Var p = tape.param(Tensor::vector({0.5, -3}));
  const Var s = ad::scale(p, 1.0);
  const Gradients g = tape.backward(ad::sum(s * s));
  EXPECT_EQ(g[p], Tensor::vector({1, -6}));
}

TEST(Backward, ThreeLayerMlpMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  const std::vector<Tensor> params = {uniform({5, 3}, rng), uniform({5}, rng), uniform({4, 5}, rng),
                                      uniform({4}, rng),    uniform({2, 4}, rng), uniform({2}, rng)};
  const Tensor x = uniform({3}, rng);
  const Tensor t = uniform({2}, rng);
  const ScalarFunction f = [&](Tape& tape, std::span<const Var> p) {
    Var h = ad::tanh(ad::linear(p[0], tape.constant_view(x), p[1]));
    h = ad::tanh(ad::linear(p[2], h, p[3]));
    return ad::mean_squared_error(ad::linear(p[4], h, p[5]), tape.constant_view(t));
  };
  const GradCheckReport report = grad_check(f, params, 1e-5, 1e-6);
  EXPECT_TRUE(report.passed) << report.worst_rel_error;
}

// Every primitive against central differences on random inputs in [-1, 1].
class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, MatchesCentralDifferences) {
  std::mt19937_64 rng(1000 + GetParam());
  const Tensor target2 = uniform({3}, rng);
  const Tensor onehot = Tensor::vector({0, 1, 0});

  struct Case {
    const char* name;
    std::vector<Tensor> params;
    ScalarFunction f;
  };
  const std::vector<Case> cases = {
      {"matvec", {uniform({3, 4}, rng), uniform({4}, rng)},
       [](Tape&, std::span<const Var> p) { return ad::sum_squares(ad::matvec(p[0], p[1])); }},
      {"matvec_rank3", {uniform({2, 3, 4}, rng), uniform({4}, rng)},
       [](Tape&, std::span<const Var> p) { return ad::sum_squares(ad::matvec(p[0], p[1])); }},
      {"linear", {uniform({3, 2}, rng), uniform({2}, rng), uniform({3}, rng)},
       [](Tape&, std::span<const Var> p) { return ad::sum_squares(ad::linear(p[0], p[1], p[2])); }},
      {"matmul_nt", {uniform({3, 4}, rng), uniform({2, 4}, rng)},
       [](Tape&, std::span<const Var> p) { return ad::sum_squares(ad::matmul_nt(p[0], p[1])); }},
      {"add_rows", {uniform({3, 2}, rng), uniform({2}, rng)},
       [](Tape&, std::span<const Var> p) { return ad::sum_squares(ad::add_rows(p[0], p[1])); }},
      {"add_sub_mul", {uniform({4}, rng), uniform({4}, rng)},
       [](Tape&, std::span<const Var> p) { return ad::sum_squares((p[0] + p[1]) * (p[0] - p[1])); }},
      {"scale_tanh", {uniform({5}, rng)},
       [](Tape&, std::span<const Var> p) { return ad::sum(ad::tanh(ad::scale(p[0], 1.3))); }},
      {"reshape_transpose", {uniform({2, 3}, rng)},
       [](Tape&, std::span<const Var> p) {
         const Var t = ad::transpose(p[0]);
         return ad::sum(t * ad::reshape(ad::tanh(p[0]), {3, 2}));
       }},
      {"slice_rows", {uniform({4, 2}, rng)},
       [](Tape&, std::span<const Var> p) { return ad::sum_squares(ad::slice_rows(p[0], 1, 3)); }},
      {"concat", {uniform({2}, rng), uniform({2, 2}, rng)},
       [](Tape&, std::span<const Var> p) {
         const std::vector<Var> parts = {p[0], ad::tanh(p[1])};
         return ad::sum_squares(ad::concat(parts));
       }},
      {"concat_cols", {uniform({3, 2}, rng), uniform({3, 1}, rng)},
       [](Tape&, std::span<const Var> p) { return ad::sum(ad::tanh(ad::concat_cols(p[0], p[1]))); }},
      {"squared_distance", {uniform({3}, rng), uniform({3}, rng)},
       [](Tape&, std::span<const Var> p) { return ad::squared_distance(p[0], p[1]); }},
      {"mse", {uniform({3}, rng)},
       [&](Tape& tape, std::span<const Var> p) { return ad::mean_squared_error(p[0], tape.constant_view(target2)); }},
      {"softmax_ce", {uniform({3}, rng)},
       [&](Tape& tape, std::span<const Var> p) {
         return ad::softmax_cross_entropy(p[0], tape.constant_view(onehot));
       }},
  };
  for (const Case& c : cases) {
    const GradCheckReport report = grad_check(c.f, c.params, 1e-5, 1e-6);
    EXPECT_TRUE(report.passed) << c.name << ": " << report.worst_rel_error;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradient, ::testing::Range(0, 100));

TEST(MatmulNt, MatchesNaiveProduct) {
  std::mt19937_64 rng(5);
  const Tensor A = uniform({4, 3}, rng);
  const Tensor B = uniform({5, 3}, rng);
  Tape tape;
  const Tensor C = ad::matmul_nt(tape.constant_view(A), tape.constant_view(B)).value();
  ASSERT_EQ(C.shape(), (Shape{4, 5}));
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 3; ++k) s += A.at(i, k) * B.at(j, k);
      EXPECT_NEAR(C.at(i, j), s, 1e-14);
    }
  }
}

TEST(MatmulNt, RowMatchesMatvecBitwise) {
  // The batched and single-identity generation paths rely on this.
  std::mt19937_64 rng(6);
  const Tensor W = uniform({7, 9}, rng);
  const Tensor X = uniform({3, 9}, rng);
  Tape tape;
  const Tensor C = ad::matmul_nt(tape.constant_view(X), tape.constant_view(W)).value();
  for (std::size_t r = 0; r < 3; ++r) {
    const Tensor x(Shape{9}, std::vector<double>(X.data().begin() + r * 9, X.data().begin() + (r + 1) * 9));
    const Tensor y = ad::matvec(tape.constant_view(W), tape.constant(x)).value();
    for (std::size_t j = 0; j < 7; ++j) EXPECT_EQ(C.at(r, j), y[j]);
  }
}

// ---------------------------------------------------------------------------
// grad_check

TEST(GradCheck, SquareAtThree) {
  const std::vector<Tensor> params = {Tensor::vector({3})};
  const ScalarFunction f = [](Tape&, std::span<const Var> p) { return ad::sum(p[0] * p[0]); };
  const GradCheckReport report = grad_check(f, params, 1e-5, 1e-6);
  EXPECT_TRUE(report.passed);
  EXPECT_LT(report.worst_rel_error, 1e-9);
}

TEST(GradCheck, DeadBranchComparesZeroWithZero) {
  const std::vector<Tensor> params = {Tensor::vector({1, 2}), Tensor::vector({4})};
  const ScalarFunction f = [](Tape&, std::span<const Var> p) { return ad::sum_squares(p[0]); };
  const GradCheckReport report = grad_check(f, params, 1e-5, 1e-6);
  EXPECT_TRUE(report.passed);
  EXPECT_EQ(report.entries[1].max_rel_error, 0.0);
}

TEST(GradCheck, FlagsAWrongGradient) {
  // A primitive whose backward is deliberately off by a factor of two.
  const std::vector<Tensor> params = {Tensor::vector({0.3, -0.8})};
  const ScalarFunction f = [](Tape& tape, std::span<const Var> p) {
    Tensor out = Tensor::scalar(p[0].value()[0] * p[0].value()[0] + p[0].value()[1] * p[0].value()[1]);
    const Var inputs[] = {p[0]};
    const std::size_t id = p[0].id();
    return tape.record(std::move(out), inputs, [id](const Tape& t, const Tensor& g, Tape::Adjoints& adj) {
      Tensor& a = Tape::adjoint(t, adj, id);
      for (std::size_t i = 0; i < 2; ++i) a[i] += g.item() * 4.0 * t.value(id)[i];
    });
  };
  const GradCheckReport report = grad_check(f, params, 1e-5, 1e-6);
  EXPECT_FALSE(report.passed);
  EXPECT_NEAR(report.worst_rel_error, 0.5, 1e-6);
}

// ---------------------------------------------------------------------------
// Optimizer

TEST(Optimizer, GradientDescentStep) {
  Optimizer opt(OptimizerOptions{OptimizerKind::kGradientDescent, 0.1});
  std::vector<Tensor> p = {Tensor::vector({1, 2})};
  const std::vector<Tensor> g = {Tensor::vector({0.5, -1})};
  opt.step(p, g);
  EXPECT_NEAR(p[0][0], 0.95, 1e-15);
  EXPECT_NEAR(p[0][1], 2.1, 1e-15);
}

TEST(Optimizer, AdamMatchesHandComputedSteps) {
  OptimizerOptions o;
  o.lr = 0.01;
  Optimizer opt(o);
  std::vector<Tensor> p = {Tensor::vector({1.0})};
  double m = 0, v = 0, x = 1.0;
  const double grads[] = {0.3, -0.2, 0.7};
  for (int t = 1; t <= 3; ++t) {
    const double g = grads[t - 1];
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    opt.step(p, std::vector<Tensor>{Tensor::vector({g})});
    EXPECT_NEAR(p[0][0], x, 1e-15);
  }
  EXPECT_EQ(opt.steps(), 3u);
}

TEST(Optimizer, PreviewEqualsStepWithoutMutating) {
  std::mt19937_64 rng(9);
  Optimizer opt;
  std::vector<Tensor> p = {uniform({4}, rng)};
  opt.step(p, std::vector<Tensor>{uniform({4}, rng)});
  const std::vector<Tensor> g = {uniform({4}, rng)};
  const std::vector<Tensor> delta = opt.preview(g);
  EXPECT_EQ(opt.steps(), 1u);
  std::vector<Tensor> stepped = p;
  opt.step(stepped, g);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(stepped[0][i], p[0][i] + delta[0][i], 1e-15);
}

// ---------------------------------------------------------------------------
// RNG substreams

TEST(Rng, DerivedSeedsAreStableAndKeyed) {
  EXPECT_EQ(derive_seed(1, {2, 3}), derive_seed(1, {2, 3}));
  EXPECT_NE(derive_seed(1, {2, 3}), derive_seed(1, {3, 2}));
  EXPECT_NE(derive_seed(1, {2}), derive_seed(2, {2}));
  EXPECT_EQ(hash_key("abc"), hash_key("abc"));
  EXPECT_NE(hash_key("abc"), hash_key("abd"));
}

}  // namespace
}  // namespace feddah
