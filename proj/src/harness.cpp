#include "semi/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace semi {

using json = nlohmann::ordered_json;

namespace {

json opt(const std::optional<double>& x) { return x ? json(*x) : json(nullptr); }

json header_record(const RunConfig& cfg) {
  json h;
  h["kind"] = "header";
  h["schema"] = 1;
  h["env"] = cfg.train.env_preset;
  h["reward"] = cfg.reward_preset;
  h["seed"] = cfg.train.seed;
  h["total_steps"] = cfg.train.total_steps;
  h["num_envs"] = cfg.train.ppo.num_envs;
  h["horizon"] = cfg.train.ppo.horizon;
  h["metric_window"] = cfg.train.metric_window;
  return h;
}

json phase_record(const PhaseMetrics& m, const std::optional<double>& wall) {
  json r;
  r["kind"] = "phase";
  r["phase"] = m.phase;
  r["step"] = m.step;
  r["episodes"] = m.episodes;
  r["episodic_reward"] = opt(m.episodic_reward);
  r["interaction_rate"] = opt(m.interaction_rate);
  r["success_rate"] = opt(m.success_rate);
  r["r_p_mean"] = opt(m.r_p_mean);
  r["r_a_mean"] = opt(m.r_a_mean);
  r["r_curio_mean"] = opt(m.r_curio_mean);
  r["r_disag_mean"] = opt(m.r_disag_mean);
  r["r_rnd_mean"] = opt(m.r_rnd_mean);
  r["r_ext_mean"] = opt(m.r_ext_mean);
  r["reward_mean"] = opt(m.reward_mean);
  r["alignment_loss"] = opt(m.alignment_loss);
  r["curiosity_loss"] = opt(m.curiosity_loss);
  r["disagreement_loss"] = opt(m.disagreement_loss);
  r["rnd_loss"] = opt(m.rnd_loss);
  auto p = [&](auto field) -> std::optional<double> {
    if (!m.ppo) return std::nullopt;
    return (*m.ppo).*field;
  };
  r["policy_loss"] = opt(p(&PpoReport::policy_loss));
  r["value_loss"] = opt(p(&PpoReport::value_loss));
  r["entropy"] = opt(p(&PpoReport::entropy));
  r["clip_fraction"] = opt(p(&PpoReport::clip_fraction));
  r["approx_kl"] = opt(p(&PpoReport::approx_kl));
  r["target_synced"] = m.target_synced;
  r["wall_clock"] = opt(wall);
  return r;
}

void write_text(const std::filesystem::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << text;
}

json summary_json(const RunSummary& s) {
  json j;
  j["steps"] = s.steps;
  j["episodes"] = s.episodes;
  j["final_interaction_rate"] = opt(s.final_interaction_rate);
  j["overall_interaction_rate"] = s.overall_interaction_rate;
  j["final_success_rate"] = opt(s.final_success_rate);
  j["best_episodic_reward"] = opt(s.best_episodic_reward);
  j["steps_to_threshold"] = s.steps_to_threshold ? json(*s.steps_to_threshold) : json(nullptr);
  j["wall_clock_seconds"] = opt(s.wall_clock_seconds);
  return j;
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

RunResult run(const RunConfig& cfg) {
  cfg.validate();
  RunResult result;
  result.dir = resolve_output_dir(cfg);
  std::filesystem::create_directories(result.dir);
  write_text(result.dir / "config.txt", serialize_config(cfg));

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&]() -> std::optional<double> {
    if (cfg.deterministic) return std::nullopt;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  Trainer trainer(cfg.train);
  std::ofstream metrics(result.dir / "metrics.jsonl", std::ios::binary | std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot write metrics.jsonl in " + result.dir.string());
  metrics << header_record(cfg).dump() << "\n";

  RunSummary& s = result.summary;
  auto record = [&](const PhaseMetrics& m) {
    metrics << phase_record(m, elapsed()).dump() << "\n";
    metrics.flush();
    if (m.episodic_reward && (!s.best_episodic_reward || *m.episodic_reward > *s.best_episodic_reward)) {
      s.best_episodic_reward = m.episodic_reward;
    }
    if (!s.steps_to_threshold && m.success_rate && m.episodes >= cfg.train.metric_window &&
        *m.success_rate >= 0.8) {
      s.steps_to_threshold = m.step;
    }
    s.final_interaction_rate = m.interaction_rate;
    s.final_success_rate = m.success_rate;
  };
  record(trainer.initial_metrics());

  const auto ckpt_root = result.dir / "checkpoints";
  std::size_t phase = 0;
  try {
    while (!trainer.finished()) {
      ++phase;
      std::optional<std::filesystem::path> ckpt_dir;
      if (cfg.checkpoint_every > 0 && (phase - 1) % cfg.checkpoint_every == 0) {
        ckpt_dir = ckpt_root / ("phase_" + std::to_string(phase));
        trainer.checkpoint().save(*ckpt_dir);
      }
      const PhaseMetrics m = trainer.run_phase();
      if (ckpt_dir && cfg.dump_trajectory) {
        write_trajectory(*ckpt_dir / "trajectory.jsonl", trainer.last_rollout(), cfg.train.reward,
                         cfg.train.ra_timestep == RaTimestep::current);
      }
      record(m);
    }
  } catch (...) {
    try {
      trainer.checkpoint().save(ckpt_root / "abort");
    } catch (const std::exception& e) {
      std::cerr << "warning: abort checkpoint failed: " << e.what() << "\n";
    }
    throw;
  }
  trainer.checkpoint().save(ckpt_root / "final");

  s.steps = trainer.steps_done();
  s.episodes = trainer.episodes().size();
  if (!trainer.episodes().empty()) s.overall_interaction_rate = interaction_rate(trainer.episodes());
  s.wall_clock_seconds = elapsed();
  write_text(result.dir / "summary.json", summary_json(s).dump(2) + "\n");
  return result;
}

double quantile(std::vector<double> xs, double q) {
  if (xs.empty()) throw std::invalid_argument("quantile of an empty sample");
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

double median(std::vector<double> xs) { return quantile(std::move(xs), 0.5); }

namespace {

std::vector<json> read_records(const std::filesystem::path& run_dir) {
  std::ifstream in(run_dir / "metrics.jsonl");
  if (!in) throw std::runtime_error("no metrics.jsonl in " + run_dir.string());
  std::vector<json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    if (j.value("kind", "") == "phase") out.push_back(std::move(j));
  }
  return out;
}

const std::set<std::string> kNonMetric = {"kind", "phase", "step", "target_synced"};

}  // namespace

std::vector<std::string> available_metrics(const std::filesystem::path& run_dir) {
  std::vector<std::string> names;
  const auto recs = read_records(run_dir);
  if (recs.empty()) return names;
  for (const auto& [k, v] : recs.front().items()) {
    if (!kNonMetric.count(k)) names.push_back(k);
  }
  return names;
}

std::map<std::size_t, double> read_metric_series(const std::filesystem::path& run_dir,
                                                 const std::string& metric) {
  const auto names = available_metrics(run_dir);
  if (std::find(names.begin(), names.end(), metric) == names.end()) {
    std::string all;
    for (const auto& n : names) all += " " + n;
    throw std::invalid_argument("unknown metric '" + metric + "' (available:" + all + ")");
  }
  std::map<std::size_t, double> series;
  for (const auto& r : read_records(run_dir)) {
    const auto& v = r.at(metric);
    if (v.is_number()) series[r.at("step").get<std::size_t>()] = v.get<double>();
  }
  return series;
}

std::string export_plotdata(const std::vector<std::filesystem::path>& run_dirs,
                            const std::string& metric) {
  if (run_dirs.empty()) throw std::invalid_argument("export needs at least one run directory");
  std::vector<std::map<std::size_t, double>> series;
  std::set<std::size_t> steps;
  for (const auto& d : run_dirs) {
    series.push_back(read_metric_series(d, metric));
    for (const auto& [s, v] : series.back()) steps.insert(s);
  }
  const bool with_median = run_dirs.size() > 1;
  std::ostringstream out;
  out << "step";
  for (const auto& d : run_dirs) {
    auto name = d.filename().string();
    if (name.empty()) name = d.parent_path().filename().string();
    out << "," << name;
  }
  if (with_median) out << ",median";
  out << "\n";
  for (std::size_t step : steps) {
    out << step;
    std::vector<double> present;
    for (const auto& s : series) {
      out << ",";
      if (auto it = s.find(step); it != s.end()) {
        out << fmt(it->second);
        present.push_back(it->second);
      }
    }
    if (with_median) {
      out << ",";
      if (!present.empty()) out << fmt(median(present));
    }
    out << "\n";
  }
  return out.str();
}

SweepResult sweep(const RunConfig& base, const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw std::invalid_argument("sweep needs at least one seed");
  SweepResult res;
  res.dir = base.output.empty()
                ? default_output_root() / (base.train.env_preset + "_" + base.reward_preset + "_sweep")
                : base.output;
  std::filesystem::create_directories(res.dir);
  std::vector<std::filesystem::path> dirs;
  for (auto seed : seeds) {
    RunConfig cfg = base;
    cfg.train.seed = seed;
    cfg.output = res.dir / ("seed_" + std::to_string(seed));
    try {
      auto r = run(cfg);
      res.seeds.push_back(seed);
      res.summaries.push_back(r.summary);
      dirs.push_back(r.dir);
    } catch (const std::exception& e) {
      std::cerr << "warning: seed " << seed << " failed: " << e.what() << "\n";
      res.failures.emplace_back(seed, e.what());
    }
  }
  if (dirs.empty()) throw std::runtime_error("every seed of the sweep failed");

  // long format: one block of rows per metric
  std::ostringstream csv;
  csv << "metric,step";
  for (auto s : res.seeds) csv << ",seed_" << s;
  csv << ",median\n";
  for (const auto& metric : available_metrics(dirs.front())) {
    if (metric == "episodes") continue;
    std::vector<std::map<std::size_t, double>> series;
    std::set<std::size_t> steps;
    for (const auto& d : dirs) {
      series.push_back(read_metric_series(d, metric));
      for (const auto& [s, v] : series.back()) steps.insert(s);
    }
    for (std::size_t step : steps) {
      csv << metric << "," << step;
      std::vector<double> present;
      for (const auto& s : series) {
        csv << ",";
        if (auto it = s.find(step); it != s.end()) {
          csv << fmt(it->second);
          present.push_back(it->second);
        }
      }
      csv << ",";
      if (!present.empty()) csv << fmt(median(present));
      csv << "\n";
    }
  }
  write_text(res.dir / "aggregate.csv", csv.str());

  json j;
  j["seeds"] = res.seeds;
  json failed = json::array();
  for (const auto& [seed, what] : res.failures) failed.push_back({{"seed", seed}, {"error", what}});
  j["failures"] = failed;
  json runs = json::array();
  for (const auto& s : res.summaries) runs.push_back(summary_json(s));
  j["runs"] = runs;
  auto stat = [&](const std::string& name, auto get) {
    std::vector<double> xs;
    for (const auto& s : res.summaries) {
      if (auto v = get(s)) xs.push_back(*v);
    }
    if (xs.empty()) {
      j["aggregate"][name] = nullptr;
      return;
    }
    j["aggregate"][name] = {{"median", median(xs)}, {"q25", quantile(xs, 0.25)},
                            {"q75", quantile(xs, 0.75)}, {"n", xs.size()}};
  };
  stat("final_interaction_rate", [](const RunSummary& s) { return s.final_interaction_rate; });
  stat("overall_interaction_rate",
       [](const RunSummary& s) { return std::optional<double>(s.overall_interaction_rate); });
  stat("final_success_rate", [](const RunSummary& s) { return s.final_success_rate; });
  stat("best_episodic_reward", [](const RunSummary& s) { return s.best_episodic_reward; });
  const double budget_plus_one = static_cast<double>(base.train.total_steps + 1);
  stat("steps_to_threshold_or_budget", [&](const RunSummary& s) {
    return std::optional<double>(s.steps_to_threshold ? static_cast<double>(*s.steps_to_threshold)
                                                      : budget_plus_one);
  });
  write_text(res.dir / "sweep.json", j.dump(2) + "\n");
  return res;
}

void write_trajectory(const std::filesystem::path& file, const RolloutBuffer& buffer,
                      const RewardSpec& spec, bool with_obs) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  auto comp = [&](IntrinsicComponent c, double v) { return spec.has(c) ? json(v) : json(nullptr); };
  for (std::size_t t = 0; t < buffer.horizon; ++t) {
    for (std::size_t e = 0; e < buffer.num_envs; ++e) {
      const Transition& tr = buffer.at(e, t);
      json j;
      j["env"] = e;
      j["t"] = t;
      j["mask"] = tr.mask.bits();
      if (tr.action.vector.empty()) {
        j["action"] = tr.action.index;
      } else {
        j["action"] = tr.action.vector;
      }
      if (with_obs) j["obs"] = tr.obs.streams;
      j["obs_next"] = tr.next_obs.streams;
      j["obs_next_t"] = tr.next_obs.timestep;
      j["r_p"] = spec.has(IntrinsicComponent::semi_p) && tr.r_p_ready ? json(tr.raw.r_p) : json(nullptr);
      j["r_a"] = comp(IntrinsicComponent::semi_a, tr.raw.r_a);
      j["r_curio"] = comp(IntrinsicComponent::curiosity, tr.raw.r_curio);
      j["r_disag"] = comp(IntrinsicComponent::disagreement, tr.raw.r_disag);
      j["r_rnd"] = comp(IntrinsicComponent::rnd, tr.raw.r_rnd);
      j["r_ext"] = tr.raw.r_ext;
      j["R"] = tr.reward;
      j["done"] = tr.done;
      j["interaction"] = tr.info.interaction;
      j["success"] = tr.info.success;
      out << j.dump() << "\n";
    }
  }
}

ReplayReport replay(const std::filesystem::path& checkpoint_dir,
                    const std::filesystem::path& trajectory, double tol) {
  const Checkpoint ckpt = Checkpoint::load(checkpoint_dir);
  ReplayModels models = replay_models_from(ckpt);
  std::ifstream in(trajectory);
  if (!in) throw std::runtime_error("cannot open trajectory " + trajectory.string());
  ReplayReport rep;
  std::string line;
  auto to_obs = [](const json& streams, std::int64_t t) {
    MultiObs o;
    o.streams = streams.get<std::vector<std::vector<double>>>();
    o.timestep = t;
    return o;
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    ++rep.lines;
    MultiObs next = to_obs(j.at("obs_next"), j.value("obs_next_t", std::int64_t{0}));
    FeatureBank f = models.bank.encode(next);
    const auto rp = perceptual_incongruity(f, models.pool.features(), models.temperature,
                                           models.warmup);
    const json& lp = j.at("r_p");
    if (lp.is_number()) {
      ++rep.r_p_checked;
      if (!rp) {
        ++rep.mismatches;
      } else {
        rep.max_r_p_error = std::max(rep.max_r_p_error, std::abs(*rp - lp.get<double>()));
      }
    }
    const json& la = j.at("r_a");
    if (la.is_number()) {
      ++rep.r_a_checked;
      double ra = 0.0;
      if (models.ra_timestep == RaTimestep::next) {
        ra = action_incongruity(models.target.net, f);
      } else {
        ra = action_incongruity(models.target.net, models.bank.encode(to_obs(j.at("obs"), 0)));
      }
      rep.max_r_a_error = std::max(rep.max_r_a_error, std::abs(ra - la.get<double>()));
    }
    models.pool.push(std::move(next), std::move(f));
  }
  if (rep.max_r_p_error > tol || rep.max_r_a_error > tol) ++rep.mismatches;
  return rep;
}

}  // namespace semi
