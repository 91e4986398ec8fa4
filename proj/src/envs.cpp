#include "semi/envs.hpp"
#include "semi/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace semi {

namespace {

std::vector<double> unit_random_vector(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(n);
  double norm = 0.0;
  while (norm < 1e-6) {
    norm = 0.0;
    for (auto& x : v) {
      x = dist(rng);
      norm += x * x;
    }
    norm = std::sqrt(norm);
  }
  for (auto& x : v) x /= norm;
  return v;
}


}  // namespace

void BlipGridParams::validate() const {
  if (grid_size < 4) throw std::invalid_argument("blipgrid: grid size must be at least 4");
  if (objects < 1 || objects > grid_size) {
    throw std::invalid_argument("blipgrid: object count must be in 1..grid size");
  }
  if (tone_width < 1) throw std::invalid_argument("blipgrid: tone width must be positive");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw std::invalid_argument("blipgrid: noise must be >= 0");
  if (horizon < 1) throw std::invalid_argument("blipgrid: horizon must be positive");
}

BlipGrid::BlipGrid(const BlipGridParams& params, std::uint64_t env_seed) : params_(params) {
  params_.validate();
  spec_.name = "blipgrid";
  spec_.modality_widths = {kPatchCells * (params_.objects + 1), params_.tone_width};
  spec_.action_space = {ActionKind::discrete, 5};
  spec_.horizon = params_.horizon;
  auto tone_rng = derive_rng(env_seed, 0x70e5);
  for (std::size_t k = 0; k < params_.objects; ++k) {
    tones_.push_back(unit_random_vector(tone_rng, params_.tone_width));
  }
  shared_tone_ = unit_random_vector(tone_rng, params_.tone_width);
  reset(env_seed);
}

MultiObs BlipGrid::reset(std::uint64_t episode_seed) {
  episode_rng_ = derive_rng(episode_seed, 0xe915);
  const int g = static_cast<int>(params_.grid_size);
  std::vector<int> cells(static_cast<std::size_t>(g * g));
  for (int i = 0; i < g * g; ++i) cells[static_cast<std::size_t>(i)] = i;
  // partial Fisher-Yates: first K cells hold objects, the next one the agent
  for (std::size_t i = 0; i <= params_.objects; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, cells.size() - 1);
    std::swap(cells[i], cells[pick(episode_rng_)]);
  }
  objects_.clear();
  for (std::size_t k = 0; k < params_.objects; ++k) objects_.push_back({cells[k] % g, cells[k] / g});
  agent_ = {cells[params_.objects] % g, cells[params_.objects] / g};
  t_ = 0;
  return observe();
}

MultiObs BlipGrid::place(std::array<int, 2> agent, std::vector<std::array<int, 2>> objects,
                         std::uint64_t noise_seed) {
  if (objects.size() != params_.objects) throw std::invalid_argument("place: wrong object count");
  const int g = static_cast<int>(params_.grid_size);
  auto inside = [g](std::array<int, 2> c) { return c[0] >= 0 && c[0] < g && c[1] >= 0 && c[1] < g; };
  if (!inside(agent)) throw std::invalid_argument("place: agent outside grid");
  for (auto c : objects)
    if (!inside(c)) throw std::invalid_argument("place: object outside grid");
  episode_rng_ = derive_rng(noise_seed, 0xe915);
  agent_ = agent;
  objects_ = std::move(objects);
  t_ = 0;
  return observe();
}

int BlipGrid::touching() const {
  for (std::size_t k = 0; k < objects_.size(); ++k) {
    const int d = std::abs(objects_[k][0] - agent_[0]) + std::abs(objects_[k][1] - agent_[1]);
    if (d <= 1) return static_cast<int>(k);
  }
  return -1;
}

std::vector<double> BlipGrid::visual() const {
  const int g = static_cast<int>(params_.grid_size);
  const std::size_t channels = params_.objects + 1;
  std::vector<double> v(kPatchCells * channels, 0.0);
  for (int dy = -kPatchRadius; dy <= kPatchRadius; ++dy) {
    for (int dx = -kPatchRadius; dx <= kPatchRadius; ++dx) {
      const int x = agent_[0] + dx, y = agent_[1] + dy;
      const auto cell = static_cast<std::size_t>((dy + kPatchRadius) * 5 + (dx + kPatchRadius));
      if (x < 0 || x >= g || y < 0 || y >= g) {
        v[cell] = 1.0;
        continue;
      }
      for (std::size_t k = 0; k < objects_.size(); ++k) {
        if (objects_[k][0] == x && objects_[k][1] == y) v[(k + 1) * kPatchCells + cell] = 1.0;
      }
    }
  }
  return v;
}

std::vector<double> BlipGrid::audio(int touched) {
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> a(params_.tone_width);
  for (auto& x : a) x = params_.noise * noise(episode_rng_);
  const std::vector<double>* tone = nullptr;
  switch (params_.audio) {
    case AudioMode::object_tones:
      if (touched >= 0) tone = &tones_[static_cast<std::size_t>(touched)];
      break;
    case AudioMode::constant_tone: tone = &shared_tone_; break;
    case AudioMode::shared_tone:
      if (touched >= 0) tone = &shared_tone_;
      break;
  }
  if (tone) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += (*tone)[i];
  }
  return a;
}

MultiObs BlipGrid::observe() {
  MultiObs obs;
  obs.timestep = static_cast<std::int64_t>(t_);
  obs.streams.push_back(visual());
  obs.streams.push_back(audio(touching()));
  return obs;
}

StepResult BlipGrid::step(const Action& action) {
  if (action.index > 4) throw std::invalid_argument("blipgrid: action index out of range");
  if (t_ >= params_.horizon) throw std::logic_error("blipgrid: step after episode end");
  const int g = static_cast<int>(params_.grid_size);
  static constexpr int kDx[5] = {0, 0, -1, 1, 0};
  static constexpr int kDy[5] = {-1, 1, 0, 0, 0};
  agent_[0] = std::clamp(agent_[0] + kDx[action.index], 0, g - 1);
  agent_[1] = std::clamp(agent_[1] + kDy[action.index], 0, g - 1);
  ++t_;
  StepResult r;
  r.info.interaction = touching() >= 0;
  r.obs = observe();
  r.reward = 0.0;
  r.done = t_ >= params_.horizon;
  return r;
}

BlipGrid blipgrid_make(std::uint64_t seed, const BlipGridParams& params) {
  return BlipGrid(params, seed);
}

BlipGrid BlipGrid::with_audio(AudioMode mode) const {
  BlipGrid out = *this;
  out.params_.audio = mode;
  return out;
}

BlipGrid constant_tone_variant(const BlipGrid& env) {
  return env.with_audio(AudioMode::constant_tone);
}

BlipGrid trivial_assoc_variant(const BlipGrid& env) {
  return env.with_audio(AudioMode::shared_tone);
}

void SparseGoalParams::validate() const {
  if (!(goal_tolerance > 0.0)) throw std::invalid_argument("sparsegoal: goal tolerance must be positive");
  if (horizon < 1) throw std::invalid_argument("sparsegoal: horizon must be positive");
  if (!(damping >= 0.0 && damping < 1.0)) throw std::invalid_argument("sparsegoal: damping must be in [0,1)");
  if (!(accel > 0.0) || !(radius > 0.0)) throw std::invalid_argument("sparsegoal: accel and radius must be positive");
  if (!(min_separation >= 0.0 && min_separation < 0.5)) {
    throw std::invalid_argument("sparsegoal: min separation must be in [0, 0.5)");
  }
}

SparseGoal::SparseGoal(const SparseGoalParams& params, std::uint64_t env_seed) : params_(params) {
  params_.validate();
  spec_.name = "sparsegoal";
  spec_.modality_widths = {4, 4, 2};
  spec_.action_space = {ActionKind::continuous, 2};
  spec_.horizon = params_.horizon;
  reset(env_seed);
}

namespace {

double dist2d(std::array<double, 2> a, std::array<double, 2> b) {
  return std::hypot(a[0] - b[0], a[1] - b[1]);
}

}  // namespace

MultiObs SparseGoal::reset(std::uint64_t episode_seed) {
  auto rng = derive_rng(episode_seed, 0x5ea1);
  std::uniform_real_distribution<double> inner(0.15, 0.85);
  std::uniform_real_distribution<double> anywhere(0.05, 0.95);
  const double sep = params_.min_separation;
  do {
    goal_ = {inner(rng), inner(rng)};
    block_ = {inner(rng), inner(rng)};
  } while (dist2d(goal_, block_) < sep);
  do {
    agent_ = {anywhere(rng), anywhere(rng)};
  } while (dist2d(agent_, block_) < sep || dist2d(agent_, goal_) < sep);
  vel_ = {0.0, 0.0};
  contact_ = false;
  t_ = 0;
  return observe();
}

MultiObs SparseGoal::place(std::array<double, 2> agent, std::array<double, 2> block,
                           std::array<double, 2> goal) {
  for (auto p : {agent, block, goal})
    for (double c : p)
      if (!(c >= 0.0 && c <= 1.0)) throw std::invalid_argument("place: position outside unit square");
  agent_ = agent;
  block_ = block;
  goal_ = goal;
  vel_ = {0.0, 0.0};
  contact_ = false;
  t_ = 0;
  return observe();
}

MultiObs SparseGoal::observe() const {
  MultiObs obs;
  obs.timestep = static_cast<std::int64_t>(t_);
  const double vscale = (1.0 - params_.damping) / params_.accel;  // unit at terminal speed
  obs.streams.push_back({agent_[0], agent_[1], vel_[0] * vscale, vel_[1] * vscale});
  obs.streams.push_back({block_[0] - agent_[0], block_[1] - agent_[1], goal_[0] - agent_[0],
                         goal_[1] - agent_[1]});
  obs.streams.push_back(contact_ ? std::vector<double>{1.0, 0.0} : std::vector<double>{0.0, 1.0});
  return obs;
}

StepResult SparseGoal::step(const Action& action) {
  if (action.vector.size() != 2) throw std::invalid_argument("sparsegoal: action must be 2-D");
  for (double a : action.vector)
    if (!std::isfinite(a)) throw std::invalid_argument("sparsegoal: non-finite action");
  if (t_ >= params_.horizon) throw std::logic_error("sparsegoal: step after episode end");
  for (int i = 0; i < 2; ++i) {
    const double a = std::clamp(action.vector[static_cast<std::size_t>(i)], -1.0, 1.0);
    vel_[i] = params_.damping * vel_[i] + params_.accel * a;
    agent_[i] += vel_[i];
    if (agent_[i] < 0.0 || agent_[i] > 1.0) {
      agent_[i] = std::clamp(agent_[i], 0.0, 1.0);
      vel_[i] = 0.0;
    }
  }
  const double reach = 2.0 * params_.radius;
  const double d = dist2d(agent_, block_);
  contact_ = d < reach;
  if (contact_) {
    // push the block out along the centre line until the bodies just touch
    double ux = block_[0] - agent_[0], uy = block_[1] - agent_[1];
    if (d < 1e-12) {
      const double vn = std::hypot(vel_[0], vel_[1]);
      ux = vn > 0.0 ? vel_[0] / vn : 1.0;
      uy = vn > 0.0 ? vel_[1] / vn : 0.0;
    } else {
      ux /= d;
      uy /= d;
    }
    block_[0] = std::clamp(agent_[0] + ux * reach, 0.0, 1.0);
    block_[1] = std::clamp(agent_[1] + uy * reach, 0.0, 1.0);
  }
  ++t_;
  StepResult r;
  r.info.interaction = contact_;
  r.info.success = dist2d(block_, goal_) < params_.goal_tolerance;
  r.reward = r.info.success ? 0.0 : -1.0;
  r.done = t_ >= params_.horizon;
  r.obs = observe();
  return r;
}

SparseGoal sparsegoal_make(std::uint64_t seed, const SparseGoalParams& params) {
  return SparseGoal(params, seed);
}

double interaction_rate(std::span<const EpisodeLog> episodes) {
  if (episodes.empty()) throw std::invalid_argument("interaction_rate: no episodes");
  std::size_t n = 0;
  for (const auto& e : episodes) n += e.interacted ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(episodes.size());
}

double success_rate(std::span<const EpisodeLog> episodes) {
  if (episodes.empty()) throw std::invalid_argument("success_rate: no episodes");
  std::size_t n = 0;
  for (const auto& e : episodes) n += e.succeeded ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(episodes.size());
}

const std::vector<std::string>& env_preset_names() {
  static const std::vector<std::string> names{"blipgrid-k1", "blipgrid-k3", "sparsegoal",
                                              "blipgrid-k1-consttone", "blipgrid-k1-trivial"};
  return names;
}

std::unique_ptr<Env> make_env(const std::string& preset, const EnvConfig& cfg, std::uint64_t seed) {
  BlipGridParams bp;
  bp.grid_size = cfg.grid_size;
  bp.tone_width = cfg.tone_width;
  bp.noise = cfg.noise;
  bp.horizon = cfg.grid_horizon;
  if (preset == "blipgrid-k1" || preset == "blipgrid-k3") {
    bp.objects = preset == "blipgrid-k1" ? 1 : 3;
    return std::make_unique<BlipGrid>(blipgrid_make(seed, bp));
  }
  if (preset == "blipgrid-k1-consttone") {
    return std::make_unique<BlipGrid>(constant_tone_variant(blipgrid_make(seed, bp)));
  }
  if (preset == "blipgrid-k1-trivial") {
    return std::make_unique<BlipGrid>(trivial_assoc_variant(blipgrid_make(seed, bp)));
  }
  if (preset == "sparsegoal") {
    SparseGoalParams sp;
    sp.goal_tolerance = cfg.goal_tolerance;
    sp.horizon = cfg.sparse_horizon;
    return std::make_unique<SparseGoal>(sparsegoal_make(seed, sp));
  }
  throw std::invalid_argument("unknown env preset '" + preset + "'");
}

}  // namespace semi
