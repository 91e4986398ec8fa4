#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "semi/envs.hpp"
#include "semi/rng.hpp"

using namespace semi;

namespace {

Action move(GridMove m) {
  Action a;
  a.index = static_cast<std::size_t>(m);
  return a;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(const std::vector<double>& a) { return dot(a, a); }

// patch cell index of offset (dx, dy), channel c
std::size_t cell(int dx, int dy, std::size_t c = 0) {
  return c * BlipGrid::kPatchCells + static_cast<std::size_t>((dy + 2) * 5 + (dx + 2));
}

// Line up behind the block, then drive through it towards the goal.
// Velocity-target control on the point mass.
Action scripted_push(const SparseGoal& env) {
  const auto a = env.agent(), v = env.velocity(), b = env.block(), g = env.goal();
  const auto& p = env.params();
  const double reach = 2.0 * p.radius;
  double ux = g[0] - b[0], uy = g[1] - b[1];
  const double d = std::hypot(ux, uy);
  ux /= d;
  uy /= d;
  const double ex = a[0] - b[0], ey = a[1] - b[1];
  const double along = ex * ux + ey * uy, perp = -ex * uy + ey * ux;
  double tx, ty, vmax = 0.05;
  if (along < -0.8 * reach && std::abs(perp) < 0.02) {
    tx = b[0] - ux * 0.5 * reach;
    ty = b[1] - uy * 0.5 * reach;
    vmax = 0.04;
  } else if (along > -0.5 * reach && std::hypot(ex, ey) < 2.2 * reach) {
    // in front of the block: step round it
    const double s = perp >= 0.0 ? 1.0 : -1.0;
    tx = b[0] - uy * s * 1.6 * reach - ux * 1.2 * reach;
    ty = b[1] + ux * s * 1.6 * reach - uy * 1.2 * reach;
  } else {
    tx = b[0] - ux * (reach + 0.03);
    ty = b[1] - uy * (reach + 0.03);
  }
  double vx = 0.35 * (tx - a[0]), vy = 0.35 * (ty - a[1]);
  const double n = std::hypot(vx, vy);
  if (n > vmax) {
    vx *= vmax / n;
    vy *= vmax / n;
  }
  Action act;
  act.vector = {std::clamp((vx - p.damping * v[0]) / p.accel, -1.0, 1.0),
                std::clamp((vy - p.damping * v[1]) / p.accel, -1.0, 1.0)};
  return act;
}

}  // namespace

TEST(BlipGridTest, SpecAndValidation) {
  const auto env = blipgrid_make(1);
  EXPECT_EQ(env.spec().modality_widths, (std::vector<std::size_t>{50, 16}));
  EXPECT_EQ(env.spec().action_space.size, 5u);
  EXPECT_EQ(blipgrid_make(1, {8, 3}).spec().modality_widths[0], 100u);
  EXPECT_THROW(blipgrid_make(1, {3, 1}), std::invalid_argument);
  EXPECT_THROW(blipgrid_make(1, {8, 0}), std::invalid_argument);
  EXPECT_THROW(blipgrid_make(1, {8, 9}), std::invalid_argument);
}

TEST(BlipGridTest, ResetIsReproducibleAndStepsDeterministic) {
  auto a = blipgrid_make(3), b = blipgrid_make(3);
  EXPECT_EQ(a.reset(77), b.reset(77));
  auto rng = derive_rng(81, 0);
  std::uniform_int_distribution<std::size_t> pick(0, 4);
  for (int t = 0; t < 64; ++t) {
    Action act;
    act.index = pick(rng);
    const auto ra = a.step(act), rb = b.step(act);
    ASSERT_EQ(ra.obs, rb.obs);
    ASSERT_EQ(ra.done, rb.done);
    ASSERT_EQ(ra.info.interaction, rb.info.interaction);
  }
  EXPECT_THROW(a.step(move(GridMove::stay)), std::logic_error);
  EXPECT_EQ(b.reset(1), a.reset(1));
}

TEST(BlipGridTest, ActionOutOfRangeRejected) {
  auto env = blipgrid_make(3);
  Action bad;
  bad.index = 5;
  EXPECT_THROW(env.step(bad), std::invalid_argument);
}

TEST(BlipGridTest, StayKeepsPosition) {
  auto env = blipgrid_make(4);
  env.reset(5);
  const auto p = env.agent();
  env.step(move(GridMove::stay));
  EXPECT_EQ(env.agent(), p);
}

// Hand trace on G=8: agent at (1,1), object at (4,2); up is y-1, right x+1.
TEST(BlipGridTest, ManualTrace) {
  auto env = blipgrid_make(9);
  auto obs = env.place({1, 1}, {{4, 2}}, 1);
  // offset (-2,*) and (*,-2) leave the grid
  EXPECT_EQ(obs.streams[0][cell(-2, 0)], 1.0);
  EXPECT_EQ(obs.streams[0][cell(0, -2)], 1.0);
  EXPECT_EQ(obs.streams[0][cell(-1, -1)], 0.0);
  EXPECT_EQ(obs.streams[0][cell(2, 1, 1)], 0.0);  // object at dx=3, outside the patch

  auto r = env.step(move(GridMove::up));  // (1,0)
  EXPECT_EQ(env.agent(), (std::array<int, 2>{1, 0}));
  EXPECT_EQ(r.obs.streams[0][cell(0, -1)], 1.0);
  EXPECT_FALSE(r.info.interaction);

  r = env.step(move(GridMove::up));  // clamped at the wall
  EXPECT_EQ(env.agent(), (std::array<int, 2>{1, 0}));

  r = env.step(move(GridMove::right));  // (2,0): object at (+2,+2)
  EXPECT_EQ(env.agent(), (std::array<int, 2>{2, 0}));
  EXPECT_EQ(r.obs.streams[0][cell(2, 2, 1)], 1.0);
  EXPECT_FALSE(r.info.interaction);

  r = env.step(move(GridMove::down));  // (2,1): object at (+2,+1)
  EXPECT_EQ(r.obs.streams[0][cell(2, 1, 1)], 1.0);
  EXPECT_EQ(r.obs.streams[0][cell(0, -2)], 1.0);
  EXPECT_EQ(r.obs.streams[0][cell(0, -1)], 0.0);
  EXPECT_FALSE(r.info.interaction);

  r = env.step(move(GridMove::right));  // (3,1): diagonal, not 4-adjacent
  EXPECT_FALSE(r.info.interaction);
  r = env.step(move(GridMove::down));  // (3,2): adjacent
  EXPECT_TRUE(r.info.interaction);
  EXPECT_EQ(r.obs.streams[0][cell(1, 0, 1)], 1.0);
  EXPECT_GE(dot(r.obs.streams[1], env.tones()[0]), 0.8);
  r = env.step(move(GridMove::right));  // (4,2): on the object
  EXPECT_TRUE(r.info.interaction);
  EXPECT_EQ(r.obs.streams[0][cell(0, 0, 1)], 1.0);
}

TEST(BlipGridTest, NoiseMarginAndEnergy) {
  auto env = blipgrid_make(11);
  auto rng = derive_rng(82, 0);
  std::uniform_int_distribution<std::size_t> pick(0, 4);
  double quiet_energy = 0.0;
  std::size_t quiet = 0, loud = 0;
  env.reset(1);
  for (int ep = 0; ep < 300; ++ep) {
    env.reset(1000 + ep);
    for (int t = 0; t < 64; ++t) {
      Action a;
      a.index = pick(rng);
      const auto r = env.step(a);
      const int k = env.touching();
      EXPECT_EQ(r.info.interaction, k >= 0);
      if (k >= 0) {
        ++loud;
        EXPECT_GT(dot(r.obs.streams[1], env.tones()[k]) / std::sqrt(norm2(r.obs.streams[1])), 0.8);
      } else {
        ++quiet;
        quiet_energy += norm2(r.obs.streams[1]);
      }
    }
  }
  ASSERT_GT(loud, 100u);
  EXPECT_NEAR(quiet_energy / quiet, 16 * 0.05 * 0.05, 0.003);
}

TEST(BlipGridTest, InteractionFlagIffToneScripted) {
  // exhaustive sweep of agent cells around a fixed object
  auto env = blipgrid_make(12);
  for (int x = 0; x < 8; ++x) {
    for (int y = 0; y < 8; ++y) {
      const auto obs = env.place({x, y}, {{3, 4}}, static_cast<std::uint64_t>(x * 8 + y));
      const bool adj = std::abs(x - 3) + std::abs(y - 4) <= 1;
      EXPECT_EQ(env.touching() >= 0, adj);
      EXPECT_EQ(dot(obs.streams[1], env.tones()[0]) > 0.5, adj);
    }
  }
}

TEST(BlipGridTest, AgentStaysInGrid) {
  auto env = blipgrid_make(13, {5, 1});
  auto rng = derive_rng(83, 0);
  std::uniform_int_distribution<std::size_t> pick(0, 4);
  for (int ep = 0; ep < 20; ++ep) {
    env.reset(ep);
    for (int t = 0; t < 64; ++t) {
      Action a;
      a.index = pick(rng);
      env.step(a);
      ASSERT_GE(env.agent()[0], 0);
      ASSERT_LT(env.agent()[0], 5);
      ASSERT_GE(env.agent()[1], 0);
      ASSERT_LT(env.agent()[1], 5);
    }
  }
}

TEST(Variants, ConstantTone) {
  // Two noisy copies of a unit tone have cosine about 1/(1 + D sigma^2):
  // 0.9615 at the default sigma 0.05, above 0.99 once sigma <= 0.025.
  auto cosines = [](double sigma) {
    BlipGridParams bp;
    bp.noise = sigma;
    auto env = constant_tone_variant(blipgrid_make(14, bp));
    auto rng = derive_rng(84, 0);
    std::uniform_int_distribution<std::size_t> pick(0, 4);
    const auto first = env.reset(3).streams[1];
    std::vector<double> out;
    for (int t = 0; t < 2000; ++t) {
      Action a;
      a.index = pick(rng);
      const auto r = env.step(a);
      EXPECT_EQ(r.info.interaction, env.touching() >= 0);
      const auto& s = r.obs.streams[1];
      out.push_back(dot(s, first) / std::sqrt(norm2(s) * norm2(first)));
      if (r.done) env.reset(static_cast<std::uint64_t>(t));
    }
    return out;
  };
  const auto base = cosines(0.05);
  double mean = 0.0;
  for (double c : base) mean += c / base.size();
  EXPECT_NEAR(mean, 1.0 / (1.0 + 16 * 0.0025), 0.01);
  EXPECT_GE(*std::min_element(base.begin(), base.end()), 0.85);
  const auto quiet = cosines(0.01);
  EXPECT_GE(*std::min_element(quiet.begin(), quiet.end()), 0.99);
}

TEST(Variants, TrivialAssociation) {
  auto env = trivial_assoc_variant(blipgrid_make(15, {8, 3}));
  const auto a = env.place({0, 0}, {{1, 0}, {5, 5}, {7, 7}}, 1).streams[1];
  const auto b = env.place({7, 6}, {{1, 0}, {5, 5}, {7, 7}}, 1).streams[1];
  EXPECT_EQ(a, b);  // same noise seed, different objects, same tone
  const auto quiet = env.place({3, 3}, {{1, 0}, {5, 5}, {7, 7}}, 1).streams[1];
  EXPECT_GT(norm2(a), 0.8);
  EXPECT_LT(norm2(quiet), 0.2);
}

TEST(Variants, PresetsBuild) {
  for (const auto& name : env_preset_names()) {
    const auto env = make_env(name, EnvConfig{}, 1);
    EXPECT_GE(env->spec().modality_widths.size(), 2u) << name;
  }
  EXPECT_THROW(make_env("pong", EnvConfig{}, 1), std::invalid_argument);
}

TEST(SparseGoalTest, SpecAndFixtures) {
  auto env = sparsegoal_make(1);
  EXPECT_EQ(env.spec().modality_widths, (std::vector<std::size_t>{4, 4, 2}));
  EXPECT_EQ(env.spec().action_space.kind, ActionKind::continuous);
  env.place({0.1, 0.1}, {0.5, 0.5}, {0.52, 0.5});
  Action zero;
  zero.vector = {0.0, 0.0};
  auto r = env.step(zero);
  EXPECT_EQ(r.reward, 0.0);
  EXPECT_TRUE(r.info.success);
  EXPECT_THROW(sparsegoal_make(1, {0.0}), std::invalid_argument);
}

TEST(SparseGoalTest, TouchWithoutContactAndRewardSet) {
  auto env = sparsegoal_make(2);
  auto rng = derive_rng(85, 0);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int ep = 0; ep < 20; ++ep) {
    env.reset(ep);
    for (std::size_t t = 0; t < env.params().horizon; ++t) {
      Action a;
      a.vector = {u(rng), u(rng)};
      const auto r = env.step(a);
      ASSERT_TRUE(r.reward == 0.0 || r.reward == -1.0);
      const auto& touch = r.obs.streams[2];
      ASSERT_EQ(touch, r.info.interaction ? (std::vector<double>{1, 0}) : (std::vector<double>{0, 1}));
      for (double c : env.agent()) ASSERT_TRUE(c >= 0.0 && c <= 1.0);
    }
  }
  // an agent that never moves never touches
  env.reset(99);
  Action zero;
  zero.vector = {0.0, 0.0};
  for (int t = 0; t < 100; ++t) EXPECT_EQ(env.step(zero).obs.streams[2], (std::vector<double>{0, 1}));
}

TEST(SparseGoalTest, ResetSeparations) {
  auto env = sparsegoal_make(3);
  for (int ep = 0; ep < 200; ++ep) {
    env.reset(ep);
    const auto a = env.agent(), b = env.block(), g = env.goal();
    EXPECT_GE(std::hypot(a[0] - b[0], a[1] - b[1]), 0.2);
    EXPECT_GE(std::hypot(a[0] - g[0], a[1] - g[1]), 0.2);
    EXPECT_GE(std::hypot(g[0] - b[0], g[1] - b[1]), 0.2);
  }
}

TEST(SparseGoalTest, ScriptedPushSucceeds) {
  std::size_t wins = 0;
  const std::size_t seeds = 100;
  for (std::size_t s = 0; s < seeds; ++s) {
    auto env = sparsegoal_make(s);
    env.reset(s);
    bool ok = false;
    for (std::size_t t = 0; t < env.params().horizon && !ok; ++t) ok = env.step(scripted_push(env)).info.success;
    wins += ok;
  }
  EXPECT_GE(wins, 90u) << wins << " of " << seeds;
}

TEST(Metrics, InteractionRate) {
  std::vector<EpisodeLog> eps(10);
  EXPECT_EQ(interaction_rate(eps), 0.0);
  for (int i = 0; i < 3; ++i) eps[i].interacted = true;
  EXPECT_DOUBLE_EQ(interaction_rate(eps), 0.3);
  for (auto& e : eps) e.interacted = true;
  EXPECT_EQ(interaction_rate(eps), 1.0);
  EXPECT_THROW(interaction_rate(std::vector<EpisodeLog>{}), std::invalid_argument);
}
