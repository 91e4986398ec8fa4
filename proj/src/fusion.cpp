#include "semi/fusion.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace semi {

DropoutMask::DropoutMask(std::uint32_t bits, std::size_t modalities)
    : bits_(bits), modalities_(modalities) {
  if (modalities == 0 || modalities > kMaxModalities) {
    throw std::invalid_argument("dropout mask needs 1.." + std::to_string(kMaxModalities) +
                                " modalities, got " + std::to_string(modalities));
  }
  if (bits == 0) throw std::invalid_argument("dropout mask must keep at least one modality");
  if (bits >> modalities) throw std::invalid_argument("dropout mask has bits beyond modality count");
}

DropoutMask DropoutMask::full(std::size_t modalities) {
  return DropoutMask((1u << modalities) - 1u, modalities);
}

std::size_t DropoutMask::count() const { return static_cast<std::size_t>(std::popcount(bits_)); }

std::vector<double> fuse(const FeatureBank& features, const DropoutMask& mask) {
  if (features.size() != mask.modalities()) {
    throw std::invalid_argument("fuse: " + std::to_string(features.size()) +
                                " feature vectors for a mask over " +
                                std::to_string(mask.modalities()) + " modalities");
  }
  const std::size_t d = features.front().size();
  std::vector<double> z(d, 0.0);
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (!mask.keeps(i)) continue;
    if (features[i].size() != d) throw std::invalid_argument("fuse: feature widths differ");
    for (std::size_t k = 0; k < d; ++k) z[k] += features[i][k];
  }
  const double n = static_cast<double>(mask.count());
  for (auto& x : z) x /= n;
  return z;
}

std::vector<DropoutMask> enumerate_masks(std::size_t modalities) {
  if (modalities == 0 || modalities > kMaxModalities) {
    throw std::invalid_argument("enumerate_masks: modality count must be in 1.." +
                                std::to_string(kMaxModalities));
  }
  std::vector<DropoutMask> out;
  const std::uint32_t n = (1u << modalities) - 1u;
  out.reserve(n);
  for (std::uint32_t b = 1; b <= n; ++b) out.emplace_back(b, modalities);
  return out;
}

DropoutMask sample_mask(std::mt19937_64& rng, std::size_t modalities) {
  if (modalities == 0 || modalities > kMaxModalities) {
    throw std::invalid_argument("sample_mask: modality count must be in 1.." +
                                std::to_string(kMaxModalities));
  }
  std::uniform_int_distribution<std::uint32_t> dist(1u, (1u << modalities) - 1u);
  return DropoutMask(dist(rng), modalities);
}

std::vector<double> encode_action(const ActionSpace& space, const Action& a) {
  if (space.kind == ActionKind::discrete) {
    if (a.index >= space.size) throw std::invalid_argument("encode_action: index out of range");
    std::vector<double> v(space.size, 0.0);
    v[a.index] = 1.0;
    return v;
  }
  if (a.vector.size() != space.size) throw std::invalid_argument("encode_action: width mismatch");
  return a.vector;
}

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)

}  // namespace

double ActionDistribution::log_prob(const Action& a) const {
  if (kind == ActionKind::discrete) {
    if (a.index >= probs.size()) throw std::invalid_argument("log_prob: action index out of range");
    return log_probs.empty() ? std::log(probs[a.index]) : log_probs[a.index];
  }
  if (a.vector.size() != mean.size()) throw std::invalid_argument("log_prob: action width mismatch");
  double lp = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double ls = std::log(std_dev[i]);
    const double u = (a.vector[i] - mean[i]) / std_dev[i];
    lp += -0.5 * u * u - ls - 0.5 * kLog2Pi;
  }
  return lp;
}

double ActionDistribution::entropy() const {
  double h = 0.0;
  if (kind == ActionKind::discrete) {
    for (double p : probs)
      if (p > 0.0) h -= p * std::log(p);
    return h;
  }
  for (double s : std_dev) h += std::log(s) + 0.5 * (1.0 + kLog2Pi);
  return h;
}

namespace {

MlpSpec make_spec(std::vector<std::size_t> widths, Activation a) {
  MlpSpec s{std::move(widths), a};
  s.validate();
  return s;
}

}  // namespace

PolicyNet PolicyNet::zeros(std::size_t feature_width, ActionSpace space, const PolicyConfig& cfg) {
  if (space.size == 0) throw std::invalid_argument("action space must be non-empty");
  if (cfg.hidden_layers == 0) throw std::invalid_argument("policy needs at least one hidden layer");
  PolicyNet p;
  p.space_ = space;
  p.activation_ = cfg.activation;
  std::vector<std::size_t> trunk{feature_width};
  for (std::size_t i = 0; i < cfg.hidden_layers; ++i) trunk.push_back(cfg.hidden_width);
  p.trunk_spec_ = make_spec(trunk, cfg.activation);
  p.actor_spec_ = make_spec({cfg.hidden_width, space.size}, Activation::identity);
  p.critic_spec_ = make_spec({cfg.hidden_width, 1}, Activation::identity);
  p.trunk_ = ParameterSet::zeros(p.trunk_spec_);
  p.actor_ = ParameterSet::zeros(p.actor_spec_);
  p.critic_ = ParameterSet::zeros(p.critic_spec_);
  if (space.kind == ActionKind::continuous) p.log_std_ = Tensor({space.size}, 0.0);
  return p;
}

PolicyNet::PolicyNet(std::size_t feature_width, ActionSpace space, const PolicyConfig& cfg,
                     std::mt19937_64& rng)
    : PolicyNet(zeros(feature_width, space, cfg)) {
  trunk_ = ParameterSet::glorot(trunk_spec_, rng);
  actor_ = ParameterSet::glorot(actor_spec_, rng);
  critic_ = ParameterSet::glorot(critic_spec_, rng);
  if (space.kind == ActionKind::continuous) {
    log_std_ = Tensor({space.size}, std::clamp(cfg.init_log_std, kMinLogStd, kMaxLogStd));
  }
}

std::vector<Tensor> PolicyNet::tensors() const {
  std::vector<Tensor> out;
  for (const auto* p : {&trunk_, &actor_, &critic_}) {
    auto ts = p->tensors();
    out.insert(out.end(), ts.begin(), ts.end());
  }
  if (space_.kind == ActionKind::continuous) out.push_back(log_std_);
  return out;
}

void PolicyNet::assign(std::span<const Tensor> tensors) {
  std::size_t offset = 0;
  for (auto* p : {&trunk_, &actor_, &critic_}) {
    const std::size_t n = p->layers().size() * 2;
    if (offset + n > tensors.size()) throw std::invalid_argument("PolicyNet::assign: too few tensors");
    p->assign(tensors.subspan(offset, n));
    offset += n;
  }
  if (space_.kind == ActionKind::continuous) {
    if (offset >= tensors.size() || tensors[offset].shape() != log_std_.shape()) {
      throw std::invalid_argument("PolicyNet::assign: missing or malformed log_std");
    }
    log_std_ = tensors[offset++];
  }
  if (offset != tensors.size()) throw std::invalid_argument("PolicyNet::assign: too many tensors");
}

std::size_t PolicyNet::parameter_count() const {
  return trunk_.size() + actor_.size() + critic_.size() + log_std_.size();
}

bool PolicyNet::same_architecture(const PolicyNet& other) const {
  return space_ == other.space_ && activation_ == other.activation_ &&
         trunk_spec_ == other.trunk_spec_ && actor_spec_ == other.actor_spec_ &&
         critic_spec_ == other.critic_spec_;
}

namespace {

double activate(Activation a, double x) {
  switch (a) {
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::tanh: return std::tanh(x);
    case Activation::identity: return x;
  }
  return x;
}

}  // namespace

PolicyOutput PolicyNet::forward(std::span<const double> z) const {
  if (z.size() != feature_width()) {
    throw std::invalid_argument("policy input width " + std::to_string(z.size()) +
                                " does not match feature width " + std::to_string(feature_width()));
  }
  auto h = mlp_forward(trunk_, trunk_spec_, z);
  for (auto& x : h) x = activate(activation_, x);
  PolicyOutput out;
  out.value = mlp_forward(critic_, critic_spec_, h)[0];
  auto head = mlp_forward(actor_, actor_spec_, h);
  out.dist.kind = space_.kind;
  if (space_.kind == ActionKind::discrete) {
    out.dist.probs = softmax(head);
    out.dist.log_probs = log_softmax(head);
  } else {
    out.dist.mean = std::move(head);
    out.dist.std_dev.resize(space_.size);
    for (std::size_t i = 0; i < space_.size; ++i) {
      out.dist.std_dev[i] = std::exp(std::clamp(log_std_[i], kMinLogStd, kMaxLogStd));
    }
  }
  return out;
}

PolicyNet::GraphHeads PolicyNet::apply(Graph& g, std::span<const Var> leaves, Var z,
                                       Var z_value) const {
  const std::size_t nt = trunk_.layers().size() * 2;
  const std::size_t na = actor_.layers().size() * 2;
  const std::size_t nc = critic_.layers().size() * 2;
  const auto trunk_vars = bind_mlp(leaves.subspan(0, nt));
  const auto actor_vars = bind_mlp(leaves.subspan(nt, na));
  const auto critic_vars = bind_mlp(leaves.subspan(nt + na, nc));
  auto trunk = [&](Var in) {
    Var h = mlp_apply(g, trunk_vars, trunk_spec_, in);
    if (activation_ == Activation::tanh) return g.tanh(h);
    if (activation_ == Activation::relu) return g.relu(h);
    return h;
  };
  GraphHeads heads;
  heads.actor = mlp_apply(g, actor_vars, actor_spec_, trunk(z));
  const Var hv = z_value.id == z.id ? trunk(z) : trunk(z_value);
  heads.value = g.sum_rows(mlp_apply(g, critic_vars, critic_spec_, hv));
  if (space_.kind == ActionKind::continuous) {
    heads.log_std = g.clamp(leaves[nt + na + nc], kMinLogStd, kMaxLogStd);
  }
  return heads;
}

PolicyOutput policy_forward(const PolicyNet& policy, std::span<const double> z) {
  return policy.forward(z);
}

void sync_target(const PolicyNet& policy, TargetPolicy& target) {
  if (!policy.same_architecture(target.net) && target.net.parameter_count() != 0) {
    throw std::invalid_argument("sync_target: policy and target architectures differ");
  }
  target.net = policy;
  target.steps_since_sync = 0;
}

double action_variance(std::span<const std::vector<double>> actions) {
  if (actions.empty()) throw std::invalid_argument("action_variance: no action vectors");
  const std::size_t width = actions.front().size();
  std::vector<double> mean(width, 0.0);
  for (const auto& a : actions) {
    if (a.size() != width) throw std::invalid_argument("action_variance: widths differ");
    for (std::size_t k = 0; k < width; ++k) mean[k] += a[k];
  }
  for (auto& x : mean) x /= static_cast<double>(actions.size());
  double total = 0.0;
  for (const auto& a : actions) {
    double sq = 0.0;
    for (std::size_t k = 0; k < width; ++k) sq += (a[k] - mean[k]) * (a[k] - mean[k]);
    total += sq;
  }
  return total / static_cast<double>(actions.size());
}

double action_incongruity(const PolicyNet& target, const FeatureBank& features) {
  const auto masks = enumerate_masks(features.size());
  std::vector<std::vector<double>> actions;
  actions.reserve(masks.size());
  for (const auto& m : masks) actions.push_back(target.forward(fuse(features, m)).dist.action_vector());
  return action_variance(actions);
}

ActResult act(const PolicyNet& policy, const FeatureBank& features, const DropoutMask& mask,
              std::mt19937_64& rng, bool greedy) {
  const auto out = policy.forward(fuse(features, mask));
  ActResult r;
  const auto full = DropoutMask::full(features.size());
  r.value = mask == full ? out.value : policy.forward(fuse(features, full)).value;
  const auto& dist = out.dist;
  if (dist.kind == ActionKind::discrete) {
    if (greedy) {
      r.action.index = static_cast<std::size_t>(
          std::max_element(dist.probs.begin(), dist.probs.end()) - dist.probs.begin());
    } else {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      const double x = u(rng);
      double c = 0.0;
      r.action.index = dist.probs.size() - 1;
      for (std::size_t i = 0; i < dist.probs.size(); ++i) {
        c += dist.probs[i];
        if (x < c) {
          r.action.index = i;
          break;
        }
      }
    }
  } else {
    r.action.vector = dist.mean;
    if (!greedy) {
      std::normal_distribution<double> n(0.0, 1.0);
      for (std::size_t i = 0; i < dist.mean.size(); ++i) r.action.vector[i] += dist.std_dev[i] * n(rng);
    }
  }
  r.log_prob = dist.log_prob(r.action);
  return r;
}

}  // namespace semi
