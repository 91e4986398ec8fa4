#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "semi/alignment.hpp"
#include "semi/mlp.hpp"
#include "semi/optim.hpp"

namespace semi {

enum class IntrinsicComponent { semi_p, semi_a, curiosity, disagreement, rnd };

std::string to_string(IntrinsicComponent c);

// How the scalar training reward is assembled. Extrinsic reward enters with
// weight beta; beta = 0 is pure intrinsic training.
struct RewardSpec {
  std::set<IntrinsicComponent> components;
  double gamma_weight = 1.0;
  double beta_weight = 1.0;
  bool normalize = true;

  bool has(IntrinsicComponent c) const { return components.count(c) != 0; }
  bool uses_extrinsic() const { return beta_weight > 0.0; }
  void validate() const;
};

// r_p + gamma * r_a
double combine_intrinsic(double r_p, double r_a, double gamma);
// r_intrinsic + beta * r_extrinsic
double total_reward(double r_intrinsic, double r_extrinsic, double beta);
double sum_intrinsics(std::span<const double> values);

// Welford accumulators; normalization rescales only, the mean is untouched.
class RunningNorm {
 public:
  // Adds r to the statistics and returns r divided by the running std.
  // With fewer than two samples, or a std at or below 1e-8, the divisor is 1.
  double normalize(double r);
  double scale() const;

  std::size_t count() const { return count_; }
  double mean() const { return mean_; }
  double variance() const;

 private:
  std::size_t count_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

// MLP predicting the next fused feature from (z_t, encoded action).
struct ForwardModel {
  MlpSpec spec;
  ParameterSet params;

  static ForwardModel make(std::size_t feature_width, std::size_t action_width,
                           std::size_t hidden_width, std::mt19937_64& rng);
  std::vector<double> predict(std::span<const double> z, std::span<const double> action) const;
};

double curiosity_reward(const ForwardModel& model, std::span<const double> z,
                        std::span<const double> action, std::span<const double> z_next);

// Mean over feature dimensions of the population variance across members.
double disagreement_reward(std::span<const ForwardModel> ensemble, std::span<const double> z,
                           std::span<const double> action);

// Fixed random target network and a predictor trained to match it, both on
// the concatenated observation streams.
struct RndPair {
  MlpSpec spec;
  ParameterSet target;
  ParameterSet predictor;

  static RndPair make(std::size_t input_width, std::size_t hidden_width, std::size_t embed_width,
                      std::mt19937_64& rng);
};

std::vector<double> concat_streams(const MultiObs& obs);
double rnd_reward(const RndPair& pair, const MultiObs& obs);

// Mean squared prediction error over a batch; rows of `inputs` are z ++ action.
LossFn forward_model_loss(const MlpSpec& spec, Tensor inputs, Tensor targets);
// Sum of member losses for an ensemble laid out member after member.
LossFn ensemble_loss(const MlpSpec& spec, std::size_t members, Tensor inputs, Tensor targets);
// Predictor-vs-target loss; the target network is baked in as constants.
LossFn rnd_loss(const RndPair& pair, Tensor inputs);

double train_forward_model(ForwardModel& model, const Tensor& inputs, const Tensor& targets,
                           AdamState& opt);
double train_rnd(RndPair& pair, const Tensor& inputs, AdamState& opt);

}  // namespace semi
