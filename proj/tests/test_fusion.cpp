#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "semi/fusion.hpp"
#include "semi/rng.hpp"

using namespace semi;

namespace {

FeatureBank random_features(std::size_t M, std::size_t D, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  FeatureBank f(M, std::vector<double>(D));
  for (auto& v : f)
    for (auto& x : v) x = n(rng);
  return f;
}

}  // namespace

TEST(Fuse, Examples) {
  const FeatureBank f2{{1, 2}, {3, 4}};
  EXPECT_EQ(fuse(f2, DropoutMask(0b11, 2)), (std::vector<double>{2, 3}));
  EXPECT_EQ(fuse(f2, DropoutMask(0b01, 2)), f2[0]);
  EXPECT_EQ(fuse(f2, DropoutMask(0b10, 2)), f2[1]);
  // mask 110 read as modalities 1 and 2 kept
  const FeatureBank f3{{3, 0}, {0, 3}, {3, 3}};
  EXPECT_EQ(fuse(f3, DropoutMask(0b011, 3)), (std::vector<double>{1.5, 1.5}));
  EXPECT_THROW(fuse(f3, DropoutMask(0b11, 2)), std::invalid_argument);
  EXPECT_THROW(DropoutMask(0, 2), std::invalid_argument);
}

TEST(Fuse, JointPermutationInvariant) {
  auto rng = derive_rng(41, 0);
  const auto f = random_features(4, 5, rng);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  for (const auto& m : enumerate_masks(4)) {
    FeatureBank pf;
    std::uint32_t bits = 0;
    for (std::size_t i = 0; i < 4; ++i) {
      pf.push_back(f[perm[i]]);
      if (m.keeps(perm[i])) bits |= 1u << i;
    }
    const auto a = fuse(f, m), b = fuse(pf, DropoutMask(bits, 4));
    for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(a[k], b[k], 1e-12);
  }
}

TEST(Masks, EnumerationIsExhaustive) {
  EXPECT_EQ(enumerate_masks(1).size(), 1u);
  const auto m2 = enumerate_masks(2);
  ASSERT_EQ(m2.size(), 3u);
  EXPECT_EQ(m2[0].bits(), 1u);
  EXPECT_EQ(m2[1].bits(), 2u);
  EXPECT_EQ(m2[2].bits(), 3u);
  for (std::size_t M = 1; M <= 10; ++M) {
    const auto ms = enumerate_masks(M);
    std::set<std::uint32_t> bits;
    for (const auto& m : ms) {
      EXPECT_NE(m.bits(), 0u);
      EXPECT_LT(m.bits(), 1u << M);
      bits.insert(m.bits());
    }
    EXPECT_EQ(ms.size(), (1u << M) - 1);
    EXPECT_EQ(bits.size(), ms.size());
  }
  EXPECT_THROW(enumerate_masks(0), std::invalid_argument);
}

TEST(Masks, SamplingFrequencies) {
  auto rng = derive_rng(42, 0);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_mask(rng, 1).bits(), 1u);
  std::vector<int> counts(4, 0);
  const int draws = 30000;
  for (int i = 0; i < draws; ++i) ++counts[sample_mask(rng, 2).bits()];
  EXPECT_EQ(counts[0], 0);
  for (int b = 1; b <= 3; ++b) EXPECT_NEAR(counts[b] / double(draws), 1.0 / 3.0, 0.01);

  auto a = derive_rng(7, 1), b = derive_rng(7, 1);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sample_mask(a, 5), sample_mask(b, 5));
}

TEST(Policy, ZeroNetIsUniform) {
  const auto p = PolicyNet::zeros(6, {ActionKind::discrete, 4}, PolicyConfig{});
  const auto out = p.forward(std::vector<double>(6, 0.7));
  for (double x : out.dist.probs) EXPECT_DOUBLE_EQ(x, 0.25);
  EXPECT_EQ(out.value, 0.0);
}

TEST(Policy, ProbabilitiesSumToOne) {
  auto rng = derive_rng(43, 0);
  PolicyNet p(5, {ActionKind::discrete, 7}, PolicyConfig{}, rng);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> z(5);
    for (auto& x : z) x = n(rng);
    const auto out = p.forward(z);
    EXPECT_NEAR(std::accumulate(out.dist.probs.begin(), out.dist.probs.end(), 0.0), 1.0, 1e-12);
    EXPECT_GE(out.dist.entropy(), 0.0);
    EXPECT_LE(out.dist.entropy(), std::log(7.0) + 1e-12);
  }
}

TEST(Policy, ContinuousLogStdIsClamped) {
  auto rng = derive_rng(44, 0);
  PolicyNet p(3, {ActionKind::continuous, 2}, PolicyConfig{}, rng);
  auto ts = p.tensors();
  ts.back() = Tensor::vector({-40.0, 9.0});
  p.assign(ts);
  const auto out = p.forward(std::vector<double>{0.1, 0.2, 0.3});
  EXPECT_NEAR(out.dist.std_dev[0], std::exp(kMinLogStd), 1e-15);
  EXPECT_NEAR(out.dist.std_dev[1], std::exp(kMaxLogStd), 1e-12);
}

TEST(ActionIncongruity, HandExample) {
  const std::vector<std::vector<double>> a{{1, 0}, {0, 1}, {1, 0}};
  EXPECT_NEAR(action_variance(a), 4.0 / 9.0, 1e-15);
  const std::vector<std::vector<double>> same(5, {0.2, 0.8});
  EXPECT_EQ(action_variance(same), 0.0);
}

TEST(ActionIncongruity, ConstantHeadGivesZero) {
  auto rng = derive_rng(45, 0);
  // zero trunk and actor weights with a nonzero actor bias: output ignores z
  auto p = PolicyNet::zeros(4, {ActionKind::discrete, 3}, PolicyConfig{});
  auto ts = p.tensors();
  const std::size_t actor_bias = p.trunk().layers().size() * 2 + 1;
  ts[actor_bias] = Tensor::vector({0.3, -1.0, 2.0});
  p.assign(ts);
  for (std::size_t M = 1; M <= 4; ++M) EXPECT_NEAR(action_incongruity(p, random_features(M, 4, rng)), 0.0, 1e-30);
}

TEST(ActionIncongruity, BruteForceOracle) {
  auto rng = derive_rng(46, 0);
  std::uniform_int_distribution<std::size_t> pick_m(1, 5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t M = pick_m(rng);
    const bool discrete = trial % 2 == 0;
    PolicyNet p(4, {discrete ? ActionKind::discrete : ActionKind::continuous, 3}, PolicyConfig{8, 1},
                rng);
    const auto f = random_features(M, 4, rng);
    // independent masks from bit patterns, fusion by hand, two-pass variance
    std::vector<std::vector<double>> acts;
    for (std::uint32_t b = 1; b < (1u << M); ++b) {
      std::vector<double> z(4, 0.0);
      double n = 0;
      for (std::size_t i = 0; i < M; ++i) {
        if (!((b >> i) & 1u)) continue;
        n += 1;
        for (int k = 0; k < 4; ++k) z[k] += f[i][k];
      }
      for (auto& x : z) x /= n;
      acts.push_back(p.forward(z).dist.action_vector());
    }
    std::vector<double> mu(3, 0.0);
    for (const auto& a : acts)
      for (int k = 0; k < 3; ++k) mu[k] += a[k] / acts.size();
    double var = 0.0;
    for (const auto& a : acts)
      for (int k = 0; k < 3; ++k) var += (a[k] - mu[k]) * (a[k] - mu[k]);
    var /= acts.size();
    EXPECT_NEAR(action_incongruity(p, f), var, 1e-10);
  }
}

TEST(ActionIncongruity, MaskOrderInvariant) {
  auto rng = derive_rng(47, 0);
  PolicyNet p(4, {ActionKind::discrete, 5}, PolicyConfig{}, rng);
  const auto f = random_features(3, 4, rng);
  std::vector<std::vector<double>> acts;
  for (const auto& m : enumerate_masks(3)) acts.push_back(p.forward(fuse(f, m)).dist.probs);
  const double r = action_incongruity(p, f);
  std::shuffle(acts.begin(), acts.end(), rng);
  EXPECT_NEAR(action_variance(acts), r, 1e-15);
}

TEST(Target, SyncCopiesAndFreezes) {
  auto rng = derive_rng(48, 0);
  PolicyNet p(4, {ActionKind::discrete, 3}, PolicyConfig{}, rng);
  TargetPolicy target;
  target.copy_period = 10;
  target.tick(12);
  EXPECT_TRUE(target.due());
  sync_target(p, target);
  EXPECT_EQ(target.steps_since_sync, 0u);
  EXPECT_FALSE(target.due());
  const auto f = random_features(2, 4, rng);
  const std::vector<double> z{0.1, -0.2, 0.3, 0.4};
  EXPECT_EQ(target.net.forward(z).dist.probs, p.forward(z).dist.probs);
  EXPECT_EQ(action_incongruity(target.net, f), action_incongruity(p, f));

  auto ts = p.tensors();
  for (auto& t : ts)
    for (auto& x : t.data()) x += 0.05;
  const auto before = target.net.forward(z).dist.probs;
  p.assign(ts);
  EXPECT_EQ(target.net.forward(z).dist.probs, before);
  EXPECT_NE(p.forward(z).dist.probs, before);

  PolicyNet other(5, {ActionKind::discrete, 3}, PolicyConfig{}, rng);
  EXPECT_THROW(sync_target(other, target), std::invalid_argument);
}

TEST(Act, UniformFrequenciesAndLogProb) {
  auto rng = derive_rng(49, 0);
  const auto p = PolicyNet::zeros(3, {ActionKind::discrete, 4}, PolicyConfig{});
  const FeatureBank f{{1, 2, 3}, {0, 1, 0}};
  std::vector<int> counts(4, 0);
  const int draws = 40000;
  for (int i = 0; i < draws; ++i) {
    const auto r = act(p, f, DropoutMask::full(2), rng);
    ++counts[r.action.index];
    ASSERT_NEAR(r.log_prob, std::log(0.25), 1e-15);
  }
  for (int c : counts) EXPECT_NEAR(c / double(draws), 0.25, 0.01);
}

TEST(Act, GreedyAndValueAtFullMask) {
  auto rng = derive_rng(50, 0);
  PolicyNet p(3, {ActionKind::discrete, 4}, PolicyConfig{}, rng);
  const FeatureBank f{{1, 2, 3}, {0, -1, 0.5}};
  const DropoutMask m(0b01, 2);
  const auto out = p.forward(fuse(f, m));
  const auto argmax = std::max_element(out.dist.probs.begin(), out.dist.probs.end()) - out.dist.probs.begin();
  for (int i = 0; i < 5; ++i) {
    const auto r = act(p, f, m, rng, true);
    EXPECT_EQ(r.action.index, static_cast<std::size_t>(argmax));
    EXPECT_EQ(r.value, p.forward(fuse(f, DropoutMask::full(2))).value);
    EXPECT_NEAR(r.log_prob, std::log(out.dist.probs[r.action.index]), 1e-12);
  }
}

TEST(Act, ContinuousLogProbIntegratesToOne) {
  auto rng = derive_rng(51, 0);
  PolicyNet p(2, {ActionKind::continuous, 1}, PolicyConfig{}, rng);
  const auto d = p.forward(std::vector<double>{0.3, -0.1}).dist;
  double total = 0.0;
  const double lo = d.mean[0] - 10 * d.std_dev[0], hi = d.mean[0] + 10 * d.std_dev[0];
  const int steps = 20000;
  const double h = (hi - lo) / steps;
  for (int i = 0; i < steps; ++i) {
    Action a;
    a.vector = {lo + (i + 0.5) * h};
    total += std::exp(d.log_prob(a)) * h;
  }
  EXPECT_NEAR(total, 1.0, 1e-6);
}
