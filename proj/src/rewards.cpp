#include "semi/rewards.hpp"

#include <cmath>
#include <stdexcept>

namespace semi {

std::string to_string(IntrinsicComponent c) {
  switch (c) {
    case IntrinsicComponent::semi_p: return "semi_p";
    case IntrinsicComponent::semi_a: return "semi_a";
    case IntrinsicComponent::curiosity: return "curiosity";
    case IntrinsicComponent::disagreement: return "disagreement";
    case IntrinsicComponent::rnd: return "rnd";
  }
  return "?";
}

void RewardSpec::validate() const {
  if (!std::isfinite(gamma_weight) || gamma_weight < 0.0) {
    throw std::invalid_argument("reward gamma weight must be finite and >= 0");
  }
  if (!std::isfinite(beta_weight) || beta_weight < 0.0) {
    throw std::invalid_argument("reward beta weight must be finite and >= 0");
  }
  if (components.empty() && !uses_extrinsic()) {
    throw std::invalid_argument("reward spec needs at least one component");
  }
}

double combine_intrinsic(double r_p, double r_a, double gamma) {
  if (!std::isfinite(r_p) || !std::isfinite(r_a) || !std::isfinite(gamma)) {
    throw std::invalid_argument("combine_intrinsic: non-finite input");
  }
  return r_p + gamma * r_a;
}

double total_reward(double r_intrinsic, double r_extrinsic, double beta) {
  return r_intrinsic + beta * r_extrinsic;
}

double sum_intrinsics(std::span<const double> values) {
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

double RunningNorm::variance() const {
  return count_ < 2 ? 0.0 : m2_ / static_cast<double>(count_ - 1);
}

double RunningNorm::scale() const {
  if (count_ < 2) return 1.0;
  const double sd = std::sqrt(variance());
  return sd > 1e-8 ? sd : 1.0;
}

double RunningNorm::normalize(double r) {
  if (!std::isfinite(r)) throw std::invalid_argument("RunningNorm: non-finite reward");
  ++count_;
  const double delta = r - mean_;
  mean_ += delta / static_cast<double>(count_);
  m2_ += delta * (r - mean_);
  return r / scale();
}

ForwardModel ForwardModel::make(std::size_t feature_width, std::size_t action_width,
                                std::size_t hidden_width, std::mt19937_64& rng) {
  ForwardModel m;
  m.spec = MlpSpec{{feature_width + action_width, hidden_width, hidden_width, feature_width},
                   Activation::relu};
  m.params = ParameterSet::glorot(m.spec, rng);
  return m;
}

std::vector<double> ForwardModel::predict(std::span<const double> z,
                                          std::span<const double> action) const {
  if (z.size() + action.size() != spec.input_width()) {
    throw std::invalid_argument("forward model input width " +
                                std::to_string(z.size() + action.size()) + " != " +
                                std::to_string(spec.input_width()));
  }
  std::vector<double> in(z.begin(), z.end());
  in.insert(in.end(), action.begin(), action.end());
  return mlp_forward(params, spec, in);
}

double curiosity_reward(const ForwardModel& model, std::span<const double> z,
                        std::span<const double> action, std::span<const double> z_next) {
  const auto pred = model.predict(z, action);
  if (pred.size() != z_next.size()) throw std::invalid_argument("curiosity_reward: width mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - z_next[i]) * (pred[i] - z_next[i]);
  return s;
}

double disagreement_reward(std::span<const ForwardModel> ensemble, std::span<const double> z,
                           std::span<const double> action) {
  if (ensemble.size() < 2) throw std::invalid_argument("disagreement_reward: need at least 2 members");
  std::vector<std::vector<double>> preds;
  for (const auto& m : ensemble) preds.push_back(m.predict(z, action));
  const std::size_t d = preds.front().size();
  const double e = static_cast<double>(ensemble.size());
  double total = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    double mean = 0.0;
    for (const auto& p : preds) mean += p[k];
    mean /= e;
    double var = 0.0;
    for (const auto& p : preds) var += (p[k] - mean) * (p[k] - mean);
    total += var / e;
  }
  return total / static_cast<double>(d);
}

RndPair RndPair::make(std::size_t input_width, std::size_t hidden_width, std::size_t embed_width,
                      std::mt19937_64& rng) {
  RndPair p;
  p.spec = MlpSpec{{input_width, hidden_width, hidden_width, embed_width}, Activation::relu};
  p.target = ParameterSet::glorot(p.spec, rng);
  p.predictor = ParameterSet::glorot(p.spec, rng);
  return p;
}

std::vector<double> concat_streams(const MultiObs& obs) {
  std::vector<double> out;
  for (const auto& s : obs.streams) out.insert(out.end(), s.begin(), s.end());
  return out;
}

double rnd_reward(const RndPair& pair, const MultiObs& obs) {
  const auto x = concat_streams(obs);
  const auto t = mlp_forward(pair.target, pair.spec, x);
  const auto p = mlp_forward(pair.predictor, pair.spec, x);
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) s += (p[i] - t[i]) * (p[i] - t[i]);
  return s;
}

namespace {

// mean over rows of the squared-error row sums
Var mse_rows(Graph& g, Var pred, Var target) {
  return g.mean(g.sum_rows(g.square(g.sub(pred, target))));
}

}  // namespace

LossFn forward_model_loss(const MlpSpec& spec, Tensor inputs, Tensor targets) {
  if (inputs.cols() != spec.input_width() || targets.cols() != spec.output_width() ||
      inputs.rows() != targets.rows()) {
    throw std::invalid_argument("forward_model_loss: batch shapes do not match the model");
  }
  return [spec, inputs = std::move(inputs), targets = std::move(targets)](
             Graph& g, std::span<const Var> leaves) {
    const Var pred = mlp_apply(g, bind_mlp(leaves), spec, g.constant(inputs));
    return mse_rows(g, pred, g.constant(targets));
  };
}

LossFn ensemble_loss(const MlpSpec& spec, std::size_t members, Tensor inputs, Tensor targets) {
  if (members < 1) throw std::invalid_argument("ensemble_loss: no members");
  const std::size_t per = (spec.widths.size() - 1) * 2;
  return [spec, members, per, inputs = std::move(inputs), targets = std::move(targets)](
             Graph& g, std::span<const Var> leaves) {
    if (leaves.size() != members * per) throw std::invalid_argument("ensemble_loss: leaf count mismatch");
    const Var x = g.constant(inputs);
    const Var y = g.constant(targets);
    Var total{};
    for (std::size_t e = 0; e < members; ++e) {
      const Var pred = mlp_apply(g, bind_mlp(leaves.subspan(e * per, per)), spec, x);
      const Var l = mse_rows(g, pred, y);
      total = e == 0 ? l : g.add(total, l);
    }
    return total;
  };
}

LossFn rnd_loss(const RndPair& pair, Tensor inputs) {
  Tensor targets = mlp_forward(pair.target, pair.spec, inputs);
  return forward_model_loss(pair.spec, std::move(inputs), std::move(targets));
}

double train_forward_model(ForwardModel& model, const Tensor& inputs, const Tensor& targets,
                           AdamState& opt) {
  auto params = model.params.tensors();
  const auto vg = value_and_grad(forward_model_loss(model.spec, inputs, targets), params);
  adam_step(params, vg.grad, opt);
  model.params.assign(params);
  return vg.value;
}

double train_rnd(RndPair& pair, const Tensor& inputs, AdamState& opt) {
  auto params = pair.predictor.tensors();
  const auto vg = value_and_grad(rnd_loss(pair, inputs), params);
  adam_step(params, vg.grad, opt);
  pair.predictor.assign(params);
  return vg.value;
}

}  // namespace semi
