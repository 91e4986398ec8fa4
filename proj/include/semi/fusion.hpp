#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "semi/alignment.hpp"
#include "semi/graph.hpp"
#include "semi/mlp.hpp"

namespace semi {

// Which modalities survive fusion; bit i set keeps modality i. Never zero.
class DropoutMask {
 public:
  DropoutMask(std::uint32_t bits, std::size_t modalities);
  static DropoutMask full(std::size_t modalities);

  std::uint32_t bits() const { return bits_; }
  std::size_t modalities() const { return modalities_; }
  bool keeps(std::size_t i) const { return (bits_ >> i) & 1u; }
  std::size_t count() const;

  friend bool operator==(const DropoutMask&, const DropoutMask&) = default;

 private:
  std::uint32_t bits_;
  std::size_t modalities_;
};

constexpr std::size_t kMaxModalities = 16;

// Mean of the feature vectors the mask keeps.
std::vector<double> fuse(const FeatureBank& features, const DropoutMask& mask);

// All 2^M - 1 nonzero masks in ascending binary order.
std::vector<DropoutMask> enumerate_masks(std::size_t modalities);

// Uniform over the nonzero masks.
DropoutMask sample_mask(std::mt19937_64& rng, std::size_t modalities);

enum class ActionKind { discrete, continuous };

struct ActionSpace {
  ActionKind kind = ActionKind::discrete;
  std::size_t size = 1;  // number of actions, or continuous dimension

  // width of the action as seen by forward models: one-hot or raw vector
  std::size_t encoded_width() const { return size; }
  friend bool operator==(const ActionSpace&, const ActionSpace&) = default;
};

struct Action {
  std::size_t index = 0;       // discrete
  std::vector<double> vector;  // continuous

  friend bool operator==(const Action&, const Action&) = default;
};

std::vector<double> encode_action(const ActionSpace& space, const Action& a);

struct PolicyConfig {
  std::size_t hidden_width = 64;
  std::size_t hidden_layers = 2;
  Activation activation = Activation::tanh;
  double init_log_std = -0.5;
};

constexpr double kMinLogStd = -5.0;
constexpr double kMaxLogStd = 2.0;

struct ActionDistribution {
  ActionKind kind = ActionKind::discrete;
  std::vector<double> probs;    // discrete
  std::vector<double> log_probs;  // discrete
  std::vector<double> mean;     // continuous
  std::vector<double> std_dev;  // continuous

  // probability vector (discrete) or mean (continuous)
  const std::vector<double>& action_vector() const {
    return kind == ActionKind::discrete ? probs : mean;
  }
  double log_prob(const Action& a) const;
  double entropy() const;
};

struct PolicyOutput {
  ActionDistribution dist;
  double value = 0.0;
};

// Actor-critic over the fused feature: shared trunk, an actor head (logits,
// or mean plus state-independent log-std) and a scalar critic head.
class PolicyNet {
 public:
  PolicyNet() = default;
  PolicyNet(std::size_t feature_width, ActionSpace space, const PolicyConfig& cfg,
            std::mt19937_64& rng);
  static PolicyNet zeros(std::size_t feature_width, ActionSpace space, const PolicyConfig& cfg);

  std::size_t feature_width() const { return trunk_spec_.input_width(); }
  const ActionSpace& action_space() const { return space_; }
  const MlpSpec& trunk_spec() const { return trunk_spec_; }
  const MlpSpec& actor_spec() const { return actor_spec_; }
  const MlpSpec& critic_spec() const { return critic_spec_; }
  const ParameterSet& trunk() const { return trunk_; }
  const ParameterSet& actor() const { return actor_; }
  const ParameterSet& critic() const { return critic_; }
  const Tensor& log_std() const { return log_std_; }

  // trunk, actor, critic, then log_std for continuous spaces
  std::vector<Tensor> tensors() const;
  void assign(std::span<const Tensor> tensors);
  std::size_t parameter_count() const;
  bool same_architecture(const PolicyNet& other) const;

  PolicyOutput forward(std::span<const double> z) const;

  struct GraphHeads {
    Var actor;    // [B x |A|] logits or [B x d] means
    Var value;    // [B]
    Var log_std;  // clamped [d] (continuous only)
  };
  // Batched forward on a Graph; `leaves` follow tensors() order.
  GraphHeads apply(Graph& g, std::span<const Var> leaves, Var z, Var z_value) const;

  friend bool operator==(const PolicyNet&, const PolicyNet&) = default;

 private:
  ActionSpace space_;
  Activation activation_ = Activation::tanh;
  MlpSpec trunk_spec_, actor_spec_, critic_spec_;
  ParameterSet trunk_, actor_, critic_;
  Tensor log_std_;
};

PolicyOutput policy_forward(const PolicyNet& policy, std::span<const double> z);

// Frozen copy of the exploration policy used for action incongruity.
struct TargetPolicy {
  PolicyNet net;
  std::size_t steps_since_sync = 0;
  std::size_t copy_period = 2048;

  void tick(std::size_t steps = 1) { steps_since_sync += steps; }
  bool due() const { return steps_since_sync >= copy_period; }
};

void sync_target(const PolicyNet& policy, TargetPolicy& target);

// Mean squared deviation of a set of action vectors from their average.
double action_variance(std::span<const std::vector<double>> actions);
// action_variance of the policy's action vectors over all nonzero dropout masks.
double action_incongruity(const PolicyNet& target, const FeatureBank& features);

struct ActResult {
  Action action;
  double log_prob = 0.0;
  double value = 0.0;
};

// Samples from the policy at fuse(features, mask); the value is always taken
// at the full mask. `greedy` returns the argmax / mean action.
ActResult act(const PolicyNet& policy, const FeatureBank& features, const DropoutMask& mask,
              std::mt19937_64& rng, bool greedy = false);

}  // namespace semi
