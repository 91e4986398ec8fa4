#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "semi/alignment.hpp"
#include "semi/fusion.hpp"

namespace semi {

struct EnvSpec {
  std::string name;
  std::vector<std::size_t> modality_widths;
  ActionSpace action_space;
  std::size_t horizon = 1;
};

struct StepInfo {
  bool interaction = false;  // the agent touched an object this step
  bool success = false;
};

struct StepResult {
  MultiObs obs;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

class Env {
 public:
  virtual ~Env() = default;
  virtual const EnvSpec& spec() const = 0;
  // Re-randomizes the episode; reproducible from `episode_seed`.
  virtual MultiObs reset(std::uint64_t episode_seed) = 0;
  virtual StepResult step(const Action& action) = 0;
  virtual std::unique_ptr<Env> clone() const = 0;
};

enum class AudioMode {
  object_tones,   // each object has its own tone, heard on contact
  constant_tone,  // one fixed tone on every step regardless of events
  shared_tone,    // one tone for any contact, no object identity
};

struct BlipGridParams {
  std::size_t grid_size = 8;
  std::size_t objects = 1;
  std::size_t tone_width = 16;
  double noise = 0.05;
  std::size_t horizon = 64;
  AudioMode audio = AudioMode::object_tones;

  void validate() const;
};

enum class GridMove : std::size_t { up = 0, down = 1, left = 2, right = 3, stay = 4 };

// Grid world with a local occupancy patch ("visual") and contact-triggered
// tones ("audio"). Extrinsic reward is always 0.
class BlipGrid : public Env {
 public:
  static constexpr int kPatchRadius = 2;
  static constexpr std::size_t kPatchCells = 25;

  BlipGrid(const BlipGridParams& params, std::uint64_t env_seed);

  const EnvSpec& spec() const override { return spec_; }
  MultiObs reset(std::uint64_t episode_seed) override;
  StepResult step(const Action& action) override;
  std::unique_ptr<Env> clone() const override { return std::make_unique<BlipGrid>(*this); }

  const BlipGridParams& params() const { return params_; }
  std::array<int, 2> agent() const { return agent_; }
  const std::vector<std::array<int, 2>>& object_cells() const { return objects_; }
  const std::vector<std::vector<double>>& tones() const { return tones_; }
  // index of the object the agent is on or 4-adjacent to, or -1
  int touching() const;
  // test fixture: place agent and objects explicitly
  MultiObs place(std::array<int, 2> agent, std::vector<std::array<int, 2>> objects,
                 std::uint64_t noise_seed);
  MultiObs observe();
  // copy with a different audio mode; tones stay those of the env seed
  BlipGrid with_audio(AudioMode mode) const;

 private:
  std::vector<double> visual() const;
  std::vector<double> audio(int touched);

  BlipGridParams params_;
  EnvSpec spec_;
  std::vector<std::vector<double>> tones_;
  std::vector<double> shared_tone_;
  std::mt19937_64 episode_rng_;
  std::array<int, 2> agent_{0, 0};
  std::vector<std::array<int, 2>> objects_;
  std::size_t t_ = 0;
};

BlipGrid blipgrid_make(std::uint64_t seed, const BlipGridParams& params = {});
// Same grid with audio replaced by one fixed tone heard on every step.
BlipGrid constant_tone_variant(const BlipGrid& env);
// Same grid with a single shared tone on any contact.
BlipGrid trivial_assoc_variant(const BlipGrid& env);

struct SparseGoalParams {
  double goal_tolerance = 0.1;
  std::size_t horizon = 100;
  double damping = 0.9;
  double accel = 0.005;
  double radius = 0.05;  // agent and block radius
  double min_separation = 0.2;

  void validate() const;
};

// Point mass pushing a block towards a goal in the unit square. Modalities:
// proprio (position, velocity), vision (block and goal relative to agent),
// touch. Reward 0 when the block is within tolerance of the goal, else -1.
class SparseGoal : public Env {
 public:
  SparseGoal(const SparseGoalParams& params, std::uint64_t env_seed);

  const EnvSpec& spec() const override { return spec_; }
  MultiObs reset(std::uint64_t episode_seed) override;
  StepResult step(const Action& action) override;
  std::unique_ptr<Env> clone() const override { return std::make_unique<SparseGoal>(*this); }

  const SparseGoalParams& params() const { return params_; }
  std::array<double, 2> agent() const { return agent_; }
  std::array<double, 2> velocity() const { return vel_; }
  std::array<double, 2> block() const { return block_; }
  std::array<double, 2> goal() const { return goal_; }
  // test fixture
  MultiObs place(std::array<double, 2> agent, std::array<double, 2> block,
                 std::array<double, 2> goal);
  MultiObs observe() const;

 private:
  SparseGoalParams params_;
  EnvSpec spec_;
  std::array<double, 2> agent_{}, vel_{}, block_{}, goal_{};
  bool contact_ = false;
  std::size_t t_ = 0;
};

SparseGoal sparsegoal_make(std::uint64_t seed, const SparseGoalParams& params = {});

struct EpisodeLog {
  bool interacted = false;
  bool succeeded = false;
  double extrinsic_return = 0.0;
  std::size_t length = 0;
};

// Fraction of episodes with at least one interaction step.
double interaction_rate(std::span<const EpisodeLog> episodes);
double success_rate(std::span<const EpisodeLog> episodes);

struct EnvConfig {
  std::size_t grid_size = 8;
  std::size_t grid_horizon = 64;
  std::size_t tone_width = 16;
  double noise = 0.05;
  double goal_tolerance = 0.1;
  std::size_t sparse_horizon = 100;
};

const std::vector<std::string>& env_preset_names();
std::unique_ptr<Env> make_env(const std::string& preset, const EnvConfig& cfg, std::uint64_t seed);

}  // namespace semi
