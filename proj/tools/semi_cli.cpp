#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "semi/harness.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;
constexpr int kCheckFailed = 3;

struct RunFlags {
  std::string config;
  std::optional<std::string> env, reward, out;
  std::optional<std::size_t> steps;
  std::optional<std::uint64_t> seed;
  std::optional<double> gamma_weight, beta;
  std::vector<std::string> sets;
  bool nondeterministic = false;

  void add_to(CLI::App* cmd) {
    cmd->add_option("-c,--config", config, "config file (key = value lines)");
    cmd->add_option("--env", env, "env preset");
    cmd->add_option("--reward", reward, "reward preset");
    cmd->add_option("--steps", steps, "env-step budget");
    cmd->add_option("--seed", seed, "run seed");
    cmd->add_option("--out", out, "output directory");
    cmd->add_option("--gamma-weight", gamma_weight, "weight of action incongruity");
    cmd->add_option("--beta", beta, "weight of extrinsic reward");
    cmd->add_option("--set", sets, "any config key, as key=value")->take_all();
    cmd->add_flag("--nondeterministic", nondeterministic, "log wall-clock time in metrics");
  }

  semi::RunConfig parse() const {
    std::vector<semi::Override> o;
    auto put = [&](const std::string& key, const std::string& value, const std::string& flag) {
      o.push_back({key, value, "--" + flag});
    };
    auto num = [](double x) {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", x);
      return std::string(buf);
    };
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw semi::ConfigError("--set " + s, "expected key=value");
      o.push_back({s.substr(0, eq), s.substr(eq + 1), "--set " + s});
    }
    if (env) put("env", *env, "env");
    if (reward) put("reward", *reward, "reward");
    if (steps) put("steps", std::to_string(*steps), "steps");
    if (seed) put("seed", std::to_string(*seed), "seed");
    if (out) put("output", *out, "out");
    if (gamma_weight) put("reward.gamma_weight", num(*gamma_weight), "gamma-weight");
    if (beta) put("reward.beta_weight", num(*beta), "beta");
    if (nondeterministic) put("deterministic", "false", "nondeterministic");
    std::optional<std::filesystem::path> file;
    if (!config.empty()) file = config;
    return semi::parse_config(file, o);
  }
};

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::size_t start = 0;
  while (start < s.size()) {
    const auto end = s.find(',', start);
    const auto tok = s.substr(start, end == std::string::npos ? std::string::npos : end - start);
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(tok, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != tok.size()) throw semi::ConfigError("--seeds", "bad seed '" + tok + "'");
    out.push_back(v);
    if (end == std::string::npos) break;
    start = end + 1;
  }
  if (out.empty()) throw semi::ConfigError("--seeds", "no seeds given");
  return out;
}

void print_summary(const semi::RunSummary& s) {
  auto show = [](const std::optional<double>& x) { return x ? std::to_string(*x) : std::string("null"); };
  std::cout << "steps " << s.steps << ", episodes " << s.episodes
            << ", interaction rate (window) " << show(s.final_interaction_rate)
            << ", interaction rate (all) " << s.overall_interaction_rate
            << ", success rate " << show(s.final_success_rate) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semi: multisensory incongruity exploration experiments"};
  app.require_subcommand(1);

  RunFlags run_flags;
  auto* run_cmd = app.add_subcommand("run", "train one configuration");
  run_flags.add_to(run_cmd);

  RunFlags sweep_flags;
  std::string seeds = "0,1,2";
  auto* sweep_cmd = app.add_subcommand("sweep", "run several seeds and aggregate");
  sweep_flags.add_to(sweep_cmd);
  sweep_cmd->add_option("--seeds", seeds, "comma-separated seeds");

  std::vector<std::string> export_runs;
  std::string metric = "interaction_rate", export_out;
  auto* export_cmd = app.add_subcommand("export", "write one metric of several runs as CSV");
  export_cmd->add_option("runs", export_runs, "run directories")->required();
  export_cmd->add_option("--metric", metric, "metric name");
  export_cmd->add_option("-o,--output", export_out, "CSV file (default stdout)");

  bool inject_fault = false;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every loss");
  grad_cmd->add_flag("--inject-fault", inject_fault, "add a loss with a broken gradient");

  std::string ckpt_dir, traj_file;
  double tol = 1e-9;
  auto* replay_cmd = app.add_subcommand("replay", "recompute logged r_p and r_a from a checkpoint");
  replay_cmd->add_option("--checkpoint", ckpt_dir, "checkpoint directory")->required();
  replay_cmd->add_option("--trajectory", traj_file, "trajectory dump (default <checkpoint>/trajectory.jsonl)");
  replay_cmd->add_option("--tol", tol, "absolute tolerance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*run_cmd) {
      const auto cfg = run_flags.parse();
      const auto r = semi::run(cfg);
      std::cout << "run written to " << r.dir.string() << "\n";
      print_summary(r.summary);
      return kOk;
    }
    if (*sweep_cmd) {
      const auto cfg = sweep_flags.parse();
      const auto r = semi::sweep(cfg, parse_seeds(seeds));
      std::cout << "sweep written to " << r.dir.string() << " (" << r.seeds.size() << " runs, "
                << r.failures.size() << " failed)\n";
      return r.failures.empty() ? kOk : kRuntimeError;
    }
    if (*export_cmd) {
      std::vector<std::filesystem::path> dirs(export_runs.begin(), export_runs.end());
      const auto csv = semi::export_plotdata(dirs, metric);
      if (export_out.empty()) {
        std::cout << csv;
      } else {
        std::ofstream out(export_out);
        if (!out) throw std::runtime_error("cannot write " + export_out);
        out << csv;
      }
      return kOk;
    }
    if (*grad_cmd) {
      auto cases = semi::default_gradcheck_cases();
      if (inject_fault) cases.push_back(semi::corrupted_gradcheck_case());
      bool ok = true;
      for (const auto& r : semi::gradcheck_suite(cases)) {
        std::printf("%-28s %s  max rel err %.3e at index %zu (analytic %.6e, numeric %.6e)\n",
                    r.name.c_str(), r.passed ? "PASS" : "FAIL", r.report.max_rel_error,
                    r.report.worst_index, r.report.analytic, r.report.numeric);
        ok = ok && r.passed;
      }
      return ok ? kOk : kCheckFailed;
    }
    if (*replay_cmd) {
      const std::filesystem::path dir = ckpt_dir;
      const std::filesystem::path traj = traj_file.empty() ? dir / "trajectory.jsonl" : std::filesystem::path(traj_file);
      const auto rep = semi::replay(dir, traj, tol);
      std::printf("replayed %zu steps: r_p checked %zu (max err %.3e), r_a checked %zu (max err %.3e)\n",
                  rep.lines, rep.r_p_checked, rep.max_r_p_error, rep.r_a_checked, rep.max_r_a_error);
      if (!rep.passed(tol)) {
        std::printf("replay mismatch\n");
        return kCheckFailed;
      }
      return kOk;
    }
  } catch (const semi::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kOk;
}
