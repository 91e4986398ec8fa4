#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "semi/alignment.hpp"
#include "semi/checkpoint.hpp"
#include "semi/envs.hpp"
#include "semi/fusion.hpp"
#include "semi/optim.hpp"
#include "semi/rewards.hpp"

namespace semi {

struct PpoConfig {
  std::size_t horizon = 256;  // steps per env instance per rollout
  std::size_t num_envs = 8;
  double discount = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.2;
  std::size_t epochs = 4;
  std::size_t minibatches = 8;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double lr = 3e-4;
  double max_grad_norm = 0.5;

  void validate() const;
};

// Per-channel reward values; disabled channels stay 0.
struct RewardChannels {
  double r_p = 0.0;
  double r_a = 0.0;
  double r_curio = 0.0;
  double r_disag = 0.0;
  double r_rnd = 0.0;
  double r_ext = 0.0;
};

struct Transition {
  std::size_t env_index = 0;
  std::size_t step = 0;
  MultiObs obs;
  DropoutMask mask = DropoutMask::full(1);
  std::vector<double> z;       // fused under `mask`, the policy input
  std::vector<double> z_full;  // fused under the full mask, the critic input
  Action action;
  double log_prob = 0.0;
  double value = 0.0;
  RewardChannels raw;
  RewardChannels normalized;
  bool r_p_ready = false;  // false while the negative pool is warming up
  double reward = 0.0;     // R_t
  bool done = false;
  StepInfo info;
  MultiObs next_obs;
  double advantage = 0.0;
  double ret = 0.0;
};

// Transitions of V env instances over T steps, stored instance-major.
struct RolloutBuffer {
  std::size_t horizon = 0;
  std::size_t num_envs = 0;
  std::vector<Transition> steps;
  std::vector<double> bootstrap_values;  // V(O_T) per instance, full mask

  RolloutBuffer() = default;
  RolloutBuffer(std::size_t horizon, std::size_t num_envs);

  std::size_t size() const { return steps.size(); }
  Transition& at(std::size_t env, std::size_t t) { return steps[env * horizon + t]; }
  const Transition& at(std::size_t env, std::size_t t) const { return steps[env * horizon + t]; }
};

// V env instances with automatic reset and per-instance RNG streams.
class VecEnv {
 public:
  VecEnv(std::vector<std::unique_ptr<Env>> envs, std::uint64_t seed);
  static VecEnv make(const std::string& preset, const EnvConfig& cfg, std::size_t count,
                     std::uint64_t seed);

  std::size_t size() const { return envs_.size(); }
  const EnvSpec& spec() const { return envs_.front()->spec(); }
  Env& env(std::size_t i) { return *envs_[i]; }
  const MultiObs& current(std::size_t i) const { return current_[i]; }
  std::mt19937_64& rng(std::size_t i) { return rngs_[i]; }

  struct Stepped {
    StepResult result;       // result.obs is the true next observation
    bool reset = false;      // the episode ended and the instance was reset
  };
  Stepped step(std::size_t i, const Action& action);

  // completed episodes, in completion order
  const std::vector<EpisodeLog>& episodes() const { return finished_; }

 private:
  std::uint64_t episode_seed(std::size_t i);

  std::vector<std::unique_ptr<Env>> envs_;
  std::vector<MultiObs> current_;
  std::vector<EpisodeLog> running_;
  std::vector<std::uint64_t> episode_counter_;
  std::vector<std::mt19937_64> rngs_;
  std::vector<EpisodeLog> finished_;
  std::uint64_t seed_;
};

enum class RaTimestep { current, next };

std::string to_string(RaTimestep t);
RaTimestep ra_timestep_from_string(const std::string& s);

struct RewardNorms {
  RunningNorm p, a, curio, disag, rnd;
};

// Everything that scores a transition. Frozen during collection.
struct RewardModels {
  RewardSpec spec;
  EncoderBank bank;
  EncodedPool pool;
  TemperatureConfig temperature;
  std::size_t warmup = 32;
  TargetPolicy target;
  RaTimestep ra_timestep = RaTimestep::next;
  std::optional<ForwardModel> curiosity;
  std::vector<ForwardModel> ensemble;
  std::optional<RndPair> rnd;
  RewardNorms norms;
};

// Runs `horizon` vectorized steps. Per step and instance (in index order):
// sample a mask, act, step, score r_p / r_a on the new observation, score the
// enabled baselines, normalize, assemble R_t, push the new observation into
// the negative pool. With `random_policy` actions are uniform.
RolloutBuffer collect_rollout(VecEnv& envs, const PolicyNet& policy, RewardModels& models,
                              std::size_t horizon, bool random_policy = false);

// A_t = sum_l (discount * lambda)^l delta_{t+l} for a single instance.
std::vector<double> gae_advantages(std::span<const double> rewards, std::span<const double> values,
                                   std::span<const std::uint8_t> dones, double bootstrap,
                                   double discount, double lambda);
void compute_gae(RolloutBuffer& buffer, double discount, double lambda);

// Shifts and scales to zero mean, unit (population) std.
void normalize_advantages(std::span<double> adv);

struct PpoBatch {
  Tensor z;       // [B x D]
  Tensor z_full;  // [B x D]
  std::vector<std::size_t> discrete_actions;
  Tensor continuous_actions;  // [B x d]
  std::vector<double> old_log_probs;
  std::vector<double> advantages;
  std::vector<double> returns;

  std::size_t size() const { return old_log_probs.size(); }
};

PpoBatch make_batch(const RolloutBuffer& buffer, std::span<const std::size_t> indices,
                    std::span<const double> advantages, const ActionSpace& space);

struct PpoLossWeights {
  double policy = 1.0;
  double value = 0.5;
  double entropy = 0.01;
};

struct PpoTerms {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double max_ratio_deviation = 0.0;
};

// policy * surrogate + value * mean (V - ret)^2 - entropy * mean H, over the
// policy's tensors. Scalar terms of the last evaluation land in *terms.
LossFn ppo_loss(const PolicyNet& arch, PpoBatch batch, double clip, PpoLossWeights weights,
                std::shared_ptr<PpoTerms> terms = nullptr);

struct PpoReport {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double grad_norm = 0.0;
  std::size_t updates = 0;
  // |ratio - 1| at the first minibatch of the first epoch
  double first_ratio_deviation = 0.0;
};

PpoReport ppo_update(PolicyNet& policy, AdamState& opt, const RolloutBuffer& buffer,
                     const PpoConfig& cfg, std::mt19937_64& rng);

struct AlignmentSettings {
  EncoderConfig encoder;
  TemperatureConfig temperature;
  std::size_t pool_capacity = 256;
  std::size_t warmup = 32;
  double lr = 1e-3;
  std::size_t minibatch = 64;
};

struct BaselineSettings {
  std::size_t ensemble_size = 5;
  std::size_t hidden_width = 64;
  std::size_t rnd_embed_width = 64;
  double lr = 1e-3;
  std::size_t minibatch = 64;
};

struct TrainConfig {
  std::string env_preset = "blipgrid-k1";
  EnvConfig env;
  RewardSpec reward;
  bool random_policy = false;
  std::uint64_t seed = 0;
  std::size_t total_steps = 200000;
  AlignmentSettings alignment;
  PolicyConfig policy;
  BaselineSettings baselines;
  PpoConfig ppo;
  std::size_t copy_period = 2048;  // env steps between target-policy syncs
  RaTimestep ra_timestep = RaTimestep::next;
  std::size_t metric_window = 100;

  void validate() const;
};

struct PhaseMetrics {
  std::size_t phase = 0;
  std::size_t step = 0;  // env steps so far
  std::size_t episodes = 0;
  std::optional<double> episodic_reward;  // windowed means over completed episodes
  std::optional<double> interaction_rate;
  std::optional<double> success_rate;
  std::optional<double> r_p_mean, r_a_mean, r_curio_mean, r_disag_mean, r_rnd_mean;
  std::optional<double> r_ext_mean, reward_mean;
  std::optional<double> alignment_loss, curiosity_loss, disagreement_loss, rnd_loss;
  std::optional<PpoReport> ppo;
  bool target_synced = false;
};

class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);

  const TrainConfig& config() const { return cfg_; }
  std::size_t steps_done() const { return steps_; }
  bool finished() const { return steps_ >= cfg_.total_steps; }

  PhaseMetrics initial_metrics() const;
  PhaseMetrics run_phase();

  const RolloutBuffer& last_rollout() const { return last_; }
  const std::vector<EpisodeLog>& episodes() const { return envs_.episodes(); }
  const PolicyNet& policy() const { return policy_; }
  const RewardModels& models() const { return models_; }

  // Encoders, policies, negative pool and baseline models. Enough to rescore
  // the next rollout's r_p and r_a offline.
  Checkpoint checkpoint() const;

 private:
  PhaseMetrics window_metrics() const;
  double train_alignment_epoch(const RolloutBuffer& buf);
  void train_baselines(const RolloutBuffer& buf, PhaseMetrics& m);

  TrainConfig cfg_;
  VecEnv envs_;
  PolicyNet policy_;
  RewardModels models_;
  AdamState policy_opt_, align_opt_, curio_opt_, rnd_opt_;
  std::vector<AdamState> ensemble_opts_;
  std::mt19937_64 update_rng_;
  RolloutBuffer last_;
  std::size_t steps_ = 0;
  std::size_t phase_ = 0;
};

// Rebuilds the reward models stored by Trainer::checkpoint.
struct ReplayModels {
  EncoderBank bank;
  TargetPolicy target;
  EncodedPool pool;
  TemperatureConfig temperature;
  std::size_t warmup = 32;
  RaTimestep ra_timestep = RaTimestep::next;
};

ReplayModels replay_models_from(const Checkpoint& ckpt);

}  // namespace semi
