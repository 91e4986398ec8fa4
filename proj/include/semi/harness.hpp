#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "semi/optim.hpp"
#include "semi/ppo.hpp"

namespace semi {

// Bad key, bad value or bad preset; `where` names the file line or flag.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& where, const std::string& what)
      : std::invalid_argument(where + ": " + what), where_(where) {}
  const std::string& where() const { return where_; }

 private:
  std::string where_;
};

const std::vector<std::string>& reward_preset_names();

struct RunConfig {
  TrainConfig train;
  std::string reward_preset = "semi-pa";
  std::filesystem::path output;  // empty: $SEMI_OUT (or ./runs) / <env>_<reward>_s<seed>
  bool deterministic = true;
  std::size_t checkpoint_every = 25;  // phases between checkpoints, 0 = final only
  bool dump_trajectory = true;        // rollout dump next to each periodic checkpoint
  std::optional<double> beta_override;

  // Applies the reward preset and preset-dependent defaults.
  void finalize();
  void validate() const;
};

// Sets the reward spec for a preset. Presets naming `extrinsic` default to
// beta 1, the rest to beta 0 (pure intrinsic).
void apply_reward_preset(const std::string& preset, TrainConfig& cfg);

struct Override {
  std::string key;
  std::string value;
  std::string where;  // for error messages
};

// Precedence: overrides > file > defaults. Unknown keys are rejected.
RunConfig parse_config(const std::optional<std::filesystem::path>& file,
                       const std::vector<Override>& overrides = {});
RunConfig parse_config_text(const std::string& text, const std::string& origin,
                            const std::vector<Override>& overrides = {});
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value,
                      const std::string& where);
std::vector<std::string> config_keys();
// Every key as `key = value`, reloadable by parse_config.
std::string serialize_config(const RunConfig& cfg);

std::filesystem::path default_output_root();
std::filesystem::path resolve_output_dir(const RunConfig& cfg);

struct RunSummary {
  std::size_t steps = 0;
  std::size_t episodes = 0;
  std::optional<double> final_interaction_rate;  // last metric window
  double overall_interaction_rate = 0.0;         // every completed episode
  std::optional<double> final_success_rate;
  std::optional<double> best_episodic_reward;
  std::optional<std::size_t> steps_to_threshold;  // windowed success >= 0.8
  std::optional<double> wall_clock_seconds;
};

struct RunResult {
  std::filesystem::path dir;
  RunSummary summary;
};

RunResult run(const RunConfig& cfg);

struct SweepResult {
  std::filesystem::path dir;
  std::vector<std::uint64_t> seeds;  // survivors
  std::vector<RunSummary> summaries;
  std::vector<std::pair<std::uint64_t, std::string>> failures;
};

// One run per seed under <out>/seed_<s>, then aggregate.csv and sweep.json.
SweepResult sweep(const RunConfig& base, const std::vector<std::uint64_t>& seeds);

double median(std::vector<double> xs);
// linear interpolation between closest ranks
double quantile(std::vector<double> xs, double q);

// step -> value for one metric of one run; null values are skipped
std::map<std::size_t, double> read_metric_series(const std::filesystem::path& run_dir,
                                                 const std::string& metric);
std::vector<std::string> available_metrics(const std::filesystem::path& run_dir);
// CSV with a step column, one column per run and a median column when there
// are several runs. Missing values are empty cells.
std::string export_plotdata(const std::vector<std::filesystem::path>& run_dirs,
                            const std::string& metric);

struct GradCheckCase {
  std::string name;
  LossFn loss;
  std::vector<Tensor> params;
};

struct GradCheckResult {
  std::string name;
  GradCheckReport report;
  bool passed = false;
};

std::vector<GradCheckCase> default_gradcheck_cases();
// A loss whose graph drops half of a product's gradient; must fail.
GradCheckCase corrupted_gradcheck_case();
std::vector<GradCheckResult> gradcheck_suite(const std::vector<GradCheckCase>& cases,
                                             double eps = 1e-5, double tol = 1e-4);

// Writes a rollout as JSON lines in collection order.
void write_trajectory(const std::filesystem::path& file, const RolloutBuffer& buffer,
                      const RewardSpec& spec, bool with_obs);

struct ReplayReport {
  std::size_t lines = 0;
  std::size_t r_p_checked = 0;
  std::size_t r_a_checked = 0;
  double max_r_p_error = 0.0;
  double max_r_a_error = 0.0;
  std::size_t mismatches = 0;
  bool passed(double tol = 1e-9) const {
    return mismatches == 0 && max_r_p_error <= tol && max_r_a_error <= tol;
  }
};

ReplayReport replay(const std::filesystem::path& checkpoint_dir,
                    const std::filesystem::path& trajectory, double tol = 1e-9);

}  // namespace semi
