#include <cmath>
#include <random>

#include "semi/harness.hpp"
#include "semi/rng.hpp"

namespace semi {

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape), 0.0);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& x : t.data()) x = n(rng);
  return t;
}

// Glorot init leaves biases at exactly 0, which parks units on the relu kink
// whenever a previous layer is fully inactive; finite differences there are
// meaningless, so micro-cases jitter every parameter.
template <class Model>
void jitter(Model& m, std::mt19937_64& rng) {
  auto ts = m.tensors();
  std::normal_distribution<double> n(0.0, 0.1);
  for (auto& t : ts) {
    for (auto& x : t.data()) x += n(rng);
  }
  m.assign(ts);
}

MultiObs random_obs(std::span<const std::size_t> widths, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  MultiObs o;
  for (auto w : widths) {
    std::vector<double> s(w);
    for (auto& x : s) x = n(rng);
    o.streams.push_back(std::move(s));
  }
  return o;
}

// Buffer of B random transitions whose old log-probs sit near the policy's
// current ones, so ratios straddle 1 without landing on the clip kinks.
PpoBatch random_ppo_batch(const PolicyNet& policy, std::size_t B, std::mt19937_64& rng) {
  const std::size_t D = policy.feature_width();
  const auto& space = policy.action_space();
  std::normal_distribution<double> n(0.0, 1.0);
  PpoBatch b;
  b.z = random_tensor({B, D}, rng);
  b.z_full = random_tensor({B, D}, rng);
  if (space.kind == ActionKind::continuous) b.continuous_actions = Tensor({B, space.size}, 0.0);
  for (std::size_t r = 0; r < B; ++r) {
    Action a;
    if (space.kind == ActionKind::discrete) {
      a.index = std::uniform_int_distribution<std::size_t>(0, space.size - 1)(rng);
      b.discrete_actions.push_back(a.index);
    } else {
      for (std::size_t k = 0; k < space.size; ++k) {
        a.vector.push_back(n(rng));
        b.continuous_actions.at(r, k) = a.vector.back();
      }
    }
    const auto out = policy.forward(b.z.row(r));
    b.old_log_probs.push_back(out.dist.log_prob(a) + 0.1 * n(rng));
    b.advantages.push_back(n(rng));
    b.returns.push_back(n(rng));
  }
  return b;
}

}  // namespace

std::vector<GradCheckCase> default_gradcheck_cases() {
  std::vector<GradCheckCase> cases;
  auto rng = derive_rng(20240607, 1);

  {
    const std::vector<std::size_t> widths{3, 4, 2};
    EncoderConfig enc{4, 6, 2};
    EncoderBank bank(widths, enc, rng);
    jitter(bank, rng);
    std::vector<MultiObs> batch;
    for (int i = 0; i < 3; ++i) batch.push_back(random_obs(widths, rng));
    for (bool literal : {false, true}) {
      TemperatureConfig t{0.5, literal};
      cases.push_back({literal ? "contrastive_literal" : "contrastive",
                       alignment_loss(bank, batch, t), bank.tensors()});
    }
  }

  PolicyConfig pc{6, 2, Activation::tanh, -0.5};
  for (auto kind : {ActionKind::discrete, ActionKind::continuous}) {
    const ActionSpace space{kind, kind == ActionKind::discrete ? 3u : 2u};
    PolicyNet policy(4, space, pc, rng);
    jitter(policy, rng);
    const auto batch = random_ppo_batch(policy, 5, rng);
    const std::string tag = kind == ActionKind::discrete ? "_discrete" : "_continuous";
    cases.push_back({"ppo_surrogate" + tag, ppo_loss(policy, batch, 0.2, {1.0, 0.0, 0.0}),
                     policy.tensors()});
    cases.push_back({"ppo_value" + tag, ppo_loss(policy, batch, 0.2, {0.0, 1.0, 0.0}),
                     policy.tensors()});
    cases.push_back({"ppo_entropy" + tag, ppo_loss(policy, batch, 0.2, {0.0, 0.0, 1.0}),
                     policy.tensors()});
    cases.push_back({"ppo_total" + tag, ppo_loss(policy, batch, 0.2, {1.0, 0.5, 0.01}),
                     policy.tensors()});
  }

  {
    const std::size_t D = 4, A = 3, B = 6;
    auto model = ForwardModel::make(D, A, 5, rng);
    jitter(model.params, rng);
    Tensor x = random_tensor({B, D + A}, rng), y = random_tensor({B, D}, rng);
    cases.push_back({"curiosity", forward_model_loss(model.spec, x, y), model.params.tensors()});

    std::vector<Tensor> members;
    for (int e = 0; e < 3; ++e) {
      auto m = ForwardModel::make(D, A, 5, rng);
      jitter(m.params, rng);
      for (auto& t : m.params.tensors()) members.push_back(t);
    }
    cases.push_back({"disagreement_ensemble", ensemble_loss(model.spec, 3, x, y), members});
  }

  {
    auto pair = RndPair::make(5, 6, 4, rng);
    jitter(pair.target, rng);
    jitter(pair.predictor, rng);
    Tensor x = random_tensor({6, 5}, rng);
    cases.push_back({"rnd", rnd_loss(pair, x), pair.predictor.tensors()});
  }
  return cases;
}

GradCheckCase corrupted_gradcheck_case() {
  auto rng = derive_rng(7, 7);
  GradCheckCase c;
  c.name = "corrupted_fixture";
  c.params = {random_tensor({5}, rng)};
  // x * stop_gradient(x): value sum x^2, but the graph only sees half the slope
  c.loss = [](Graph& g, std::span<const Var> leaves) {
    const Var x = leaves[0];
    return g.sum(g.mul(x, g.constant(g.value(x))));
  };
  return c;
}

std::vector<GradCheckResult> gradcheck_suite(const std::vector<GradCheckCase>& cases, double eps,
                                             double tol) {
  std::vector<GradCheckResult> out;
  for (const auto& c : cases) {
    GradCheckResult r;
    r.name = c.name;
    r.report = grad_check_report(c.loss, c.params, eps);
    r.passed = std::isfinite(r.report.max_rel_error) && r.report.max_rel_error < tol;
    out.push_back(r);
  }
  return out;
}

}  // namespace semi
