#include <cmath>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "semi/checkpoint.hpp"
#include "semi/graph.hpp"
#include "semi/mlp.hpp"
#include "semi/optim.hpp"
#include "semi/rng.hpp"

using namespace semi;

namespace {

Tensor randn(std::vector<std::size_t> shape, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n;
  for (auto& x : t.data()) x = n(rng);
  return t;
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("semi_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(Tensor, ShapeChecks) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), std::invalid_argument);
  const auto m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_DOUBLE_EQ(m.at(1, 2), 6.0);
  EXPECT_DOUBLE_EQ(m.row(1)[0], 4.0);
}

TEST(Mlp, IdentityNet) {
  MlpSpec spec{{2, 2}, Activation::identity};
  ParameterSet p({Layer{Tensor::matrix(2, 2, {1, 0, 0, 1}), Tensor::vector({0, 0})}});
  const std::vector<double> x{1, 2};
  const auto y = mlp_forward(p, spec, x);
  EXPECT_EQ(y, (std::vector<double>{1, 2}));
}

TEST(Mlp, ZeroReluNet) {
  MlpSpec spec{{3, 4, 2}, Activation::relu};
  const auto p = ParameterSet::zeros(spec);
  const std::vector<double> x{0.3, -7, 2};
  for (double v : mlp_forward(p, spec, x)) EXPECT_EQ(v, 0.0);
}

TEST(Mlp, MatchesHandRolledOracle) {
  auto rng = derive_rng(11, 0);
  MlpSpec spec{{2, 3, 2}, Activation::tanh};
  auto p = ParameterSet::glorot(spec, rng);
  for (auto& l : p.layers()) l.bias = randn({l.bias.size()}, rng);
  const std::vector<double> x{0.5, -0.5};

  std::vector<double> h(3), y(2);
  const auto& l0 = p.layers()[0];
  const auto& l1 = p.layers()[1];
  for (int i = 0; i < 3; ++i) {
    double s = l0.bias[i];
    for (int j = 0; j < 2; ++j) s += l0.weight.at(i, j) * x[j];
    h[i] = std::tanh(s);
  }
  for (int i = 0; i < 2; ++i) {
    double s = l1.bias[i];
    for (int j = 0; j < 3; ++j) s += l1.weight.at(i, j) * h[j];
    y[i] = s;
  }
  const auto out = mlp_forward(p, spec, x);
  for (int i = 0; i < 2; ++i) EXPECT_NEAR(out[i], y[i], 1e-12);
}

TEST(Mlp, BatchedForwardMatchesRows) {
  auto rng = derive_rng(12, 0);
  MlpSpec spec{{4, 5, 3}, Activation::relu};
  const auto p = ParameterSet::glorot(spec, rng);
  const auto X = randn({6, 4}, rng);
  const auto Y = mlp_forward(p, spec, X);
  for (std::size_t r = 0; r < 6; ++r) {
    const auto y = mlp_forward(p, spec, X.row(r));
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(Y.at(r, c), y[c]);
  }
}

TEST(Mlp, FlattenRoundTripIsExact) {
  auto rng = derive_rng(13, 0);
  MlpSpec spec{{3, 7, 7, 2}, Activation::relu};
  const auto p = ParameterSet::glorot(spec, rng);
  auto q = ParameterSet::zeros(spec);
  q.unflatten(p.flatten());
  EXPECT_EQ(p, q);
  EXPECT_EQ(p.size(), spec.parameter_count());
}

TEST(Mlp, GlorotBounds) {
  auto rng = derive_rng(14, 0);
  MlpSpec spec{{10, 6}, Activation::relu};
  const auto p = ParameterSet::glorot(spec, rng);
  const double bound = std::sqrt(6.0 / 16.0);
  for (double w : p.layers()[0].weight.data()) EXPECT_LE(std::abs(w), bound);
  for (double b : p.layers()[0].bias.data()) EXPECT_EQ(b, 0.0);
}

TEST(Softmax, Examples) {
  auto s = softmax(std::vector<double>{0, 0});
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  s = softmax(std::vector<double>{1000, 1000});
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_DOUBLE_EQ(s[1], 0.5);
  s = softmax(std::vector<double>{1, 0});
  EXPECT_NEAR(s[0], 0.7310585786300049, 1e-15);
  EXPECT_NEAR(s[1], 0.2689414213699951, 1e-15);
}

TEST(ValueAndGrad, LinearAndQuadratic) {
  auto rng = derive_rng(15, 0);
  std::vector<Tensor> params{randn({3, 2}, rng), randn({4}, rng)};
  LossFn linear = [](Graph& g, std::span<const Var> v) { return g.add(g.sum(v[0]), g.sum(v[1])); };
  auto vg = value_and_grad(linear, params);
  for (double x : vg.grad) EXPECT_EQ(x, 1.0);

  LossFn quad = [](Graph& g, std::span<const Var> v) {
    return g.scale(g.add(g.sum(g.square(v[0])), g.sum(g.square(v[1]))), 0.5);
  };
  vg = value_and_grad(quad, params);
  const auto flat = flatten(params);
  for (std::size_t i = 0; i < flat.size(); ++i) EXPECT_NEAR(vg.grad[i], flat[i], 1e-15);

  EXPECT_LT(grad_check(linear, params, 1e-5), 1e-9);
  EXPECT_LT(grad_check(quad, params, 1e-5), 1e-7);
}

// Every registered op on a random micro-case.
TEST(Graph, EveryOpPassesGradCheck) {
  auto rng = derive_rng(16, 0);
  std::vector<Tensor> p{randn({3, 4}, rng), randn({4, 2}, rng), randn({4}, rng), randn({3, 4}, rng)};
  // keep log and relu/clamp/minimum away from kinks
  for (auto& x : p[3].data()) x = std::abs(x) + 0.5;

  std::vector<std::pair<const char*, LossFn>> ops{
      {"matmul", [](Graph& g, std::span<const Var> v) { return g.sum(g.square(g.matmul(v[0], v[1]))); }},
      {"matmul_bt", [](Graph& g, std::span<const Var> v) { return g.sum(g.tanh(g.matmul_bt(v[0], v[3]))); }},
      {"add_sub_mul", [](Graph& g, std::span<const Var> v) { return g.sum(g.mul(g.sub(v[0], v[3]), g.add(v[0], v[3]))); }},
      {"add_row", [](Graph& g, std::span<const Var> v) { return g.sum(g.square(g.add_row(v[0], v[2]))); }},
      {"broadcast_row", [](Graph& g, std::span<const Var> v) { return g.sum(g.mul(g.broadcast_row(v[2], 3), v[0])); }},
      {"scale_add_scalar", [](Graph& g, std::span<const Var> v) { return g.sum(g.square(g.add_scalar(g.scale(v[0], -1.5), 0.3))); }},
      {"relu", [](Graph& g, std::span<const Var> v) { return g.sum(g.mul(g.relu(v[0]), v[0])); }},
      {"exp_log", [](Graph& g, std::span<const Var> v) { return g.sum(g.add(g.exp(g.scale(v[0], 0.3)), g.log(v[3]))); }},
      {"minimum", [](Graph& g, std::span<const Var> v) { return g.sum(g.minimum(v[0], g.scale(v[3], 0.5))); }},
      {"clamp", [](Graph& g, std::span<const Var> v) { return g.sum(g.square(g.clamp(v[0], -0.7, 0.9))); }},
      {"mean_sum_rows", [](Graph& g, std::span<const Var> v) { return g.mean(g.square(g.sum_rows(v[0]))); }},
      {"softmax_rows", [](Graph& g, std::span<const Var> v) { return g.sum(g.mul(g.softmax_rows(v[0]), v[3])); }},
      {"log_softmax_rows", [](Graph& g, std::span<const Var> v) { return g.sum(g.mul(g.log_softmax_rows(v[0]), v[3])); }},
      {"log_softmax_excluded",
       [](Graph& g, std::span<const Var> v) {
         std::vector<std::uint8_t> ex(12, 0);
         ex[1] = ex[6] = 1;
         return g.sum(g.mul(g.log_softmax_rows(v[0], ex), v[3]));
       }},
      {"cosine", [](Graph& g, std::span<const Var> v) { return g.sum(g.square(g.cosine(v[0], v[3]))); }},
      {"concat_rows",
       [](Graph& g, std::span<const Var> v) {
         const Var parts[] = {v[0], v[3]};
         return g.sum(g.tanh(g.concat_rows(parts)));
       }},
      {"gather", [](Graph& g, std::span<const Var> v) { return g.sum(g.square(g.gather(v[0], {0, 5, 5, 11}))); }},
  };
  for (const auto& [name, fn] : ops) {
    EXPECT_LT(grad_check(fn, p, 1e-5), 1e-6) << name;
  }
}

TEST(Graph, CosineZeroRowIsZero) {
  Graph g;
  const Var a = g.constant(Tensor::matrix(2, 2, {0, 0, 1, 1}));
  const Var b = g.constant(Tensor::matrix(1, 2, {1, 0}));
  const auto& c = g.value(g.cosine(a, b));
  EXPECT_EQ(c[0], 0.0);
  EXPECT_NEAR(c[1], 1.0 / std::sqrt(2.0), 1e-15);
}

TEST(Graph, NonFiniteIsReported) {
  Graph g;
  const Var x = g.parameter(Tensor::vector({-1.0}));
  EXPECT_THROW(g.log(x), NonFiniteError);
}

TEST(Adam, FirstStepIsLr) {
  std::vector<double> p{0.0};
  const std::vector<double> grad{1.0};
  auto st = AdamState::fresh(1, 0.1);
  adam_step(p, grad, st);
  EXPECT_NEAR(p[0], -0.1, 1e-8);
}

TEST(Adam, ZeroGradientIsFixedPoint) {
  std::vector<double> p{0.3, -2.0};
  const std::vector<double> grad{0.0, 0.0};
  auto st = AdamState::fresh(2, 0.1);
  for (int i = 0; i < 10; ++i) adam_step(p, grad, st);
  EXPECT_EQ(p, (std::vector<double>{0.3, -2.0}));
}

TEST(Adam, ConstantGradientMovesAgainstSign) {
  std::vector<double> p{0.0, 0.0};
  const std::vector<double> grad{2.0, -3.0};
  auto st = AdamState::fresh(2, 0.01);
  double prev0 = 0.0, prev1 = 0.0;
  for (int i = 0; i < 50; ++i) {
    adam_step(p, grad, st);
    EXPECT_LT(p[0], prev0);
    EXPECT_GT(p[1], prev1);
    EXPECT_NEAR(prev0 - p[0], 0.01, 1e-6);
    prev0 = p[0];
    prev1 = p[1];
  }
}

TEST(ClipGradNorm, Rescales) {
  std::vector<double> g{3.0, 4.0};
  EXPECT_DOUBLE_EQ(clip_grad_norm(g, 1.0), 5.0);
  EXPECT_NEAR(std::hypot(g[0], g[1]), 1.0, 1e-15);
  std::vector<double> h{0.3, 0.4};
  clip_grad_norm(h, 1.0);
  EXPECT_EQ(h, (std::vector<double>{0.3, 0.4}));
}

TEST(Determinism, ForwardIsBitwiseRepeatable) {
  auto rng = derive_rng(17, 0);
  MlpSpec spec{{5, 64, 64, 3}, Activation::relu};
  const auto p = ParameterSet::glorot(spec, rng);
  const auto x = randn({9, 5}, rng);
  EXPECT_EQ(mlp_forward(p, spec, x), mlp_forward(p, spec, x));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto rng = derive_rng(18, 0);
  MlpSpec spec{{4, 8, 2}, Activation::tanh};
  const auto p = ParameterSet::glorot(spec, rng);
  Checkpoint c;
  c.set_meta("note", "hello world");
  c.add("odd", Tensor::vector({1.0 / 3.0, -0.0, 1e-300, std::nextafter(1.0, 2.0)}));
  c.add_mlp("alignment.0", spec, p);
  const auto dir = scratch("ckpt");
  c.save(dir);
  const auto d = Checkpoint::load(dir);
  EXPECT_EQ(c, d);
  EXPECT_EQ(d.get_mlp("alignment.0", spec), p);
  EXPECT_EQ(d.meta("note"), "hello world");
  EXPECT_THROW(d.get("missing"), std::out_of_range);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, TruncatedBlobIsRejected) {
  Checkpoint c;
  c.add("x", Tensor::vector({1, 2, 3}));
  const auto dir = scratch("ckpt_trunc");
  c.save(dir);
  std::filesystem::resize_file(dir / Checkpoint::kBlobName, 8);
  EXPECT_ANY_THROW(Checkpoint::load(dir));
  std::filesystem::remove_all(dir);
}
