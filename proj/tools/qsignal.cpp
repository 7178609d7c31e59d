// Command-line experiment runner.

#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qsignal/experiment.hpp"

namespace {

struct Options {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::string> seed, alpha, gamma, t_s, t_max, cycles, sigma, out, n_cycles;
  std::string input, signal, mu_curve, ground_truth;
  bool dump_clusters = false;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "key=value configuration file");
  cmd->add_option("--set", o.sets, "override a configuration key (key=value), repeatable");
  cmd->add_option("--seed", o.seed, "random seed");
  cmd->add_option("--alpha", o.alpha, "DPMM concentration");
  cmd->add_option("--gamma", o.gamma, "free-flow factor (> 1)");
  cmd->add_option("--t-s", o.t_s, "stable-flow time T_s in seconds");
  cmd->add_option("--t-max", o.t_max, "mu curve length in seconds");
  cmd->add_option("--cycles", o.cycles, "learning cycles C");
  cmd->add_option("--sigma", o.sigma, "kernel bandwidth in seconds");
  cmd->add_option("--n-cycles", o.n_cycles, "number of signal cycles to run");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_flag("--dump-clusters", o.dump_clusters, "also write per-frame cluster centers");
}

qsignal::ExperimentConfig build_config(const Options& o) {
  qsignal::ExperimentConfig cfg;
  if (!o.config.empty()) cfg = qsignal::load_config(o.config);
  auto set = [&](const char* key, const std::optional<std::string>& v) {
    if (v) qsignal::apply_setting(cfg, key, *v);
  };
  set("seed", o.seed);
  set("alpha", o.alpha);
  set("gamma", o.gamma);
  set("t_s", o.t_s);
  set("t_max", o.t_max);
  set("cycles", o.cycles);
  set("sigma", o.sigma);
  set("n_cycles", o.n_cycles);
  set("out", o.out);
  for (const auto& s : o.sets) qsignal::apply_override(cfg, s);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Queue-based traffic signal duration prediction"};
  app.require_subcommand(1);
  Options o;

  auto* simulate = app.add_subcommand("simulate", "run the lane simulator and export observations");
  auto* learn = app.add_subcommand("learn-mu", "learn the departure-rate curve from a recorded stream");
  auto* predict = app.add_subcommand("predict", "replay a recorded stream through the adaptive controller");
  auto* closed = app.add_subcommand("closed-loop", "simulator, tracker and controller in one loop");
  auto* validate = app.add_subcommand("validate", "goodness-of-fit check of simulated gaps");
  for (auto* cmd : {simulate, learn, predict, closed, validate}) add_common(cmd, o);
  for (auto* cmd : {learn, predict}) {
    cmd->add_option("--input", o.input, "observation CSV")->required()->check(CLI::ExistingFile);
    cmd->add_option("--signal", o.signal, "signal timeline CSV")->required()->check(CLI::ExistingFile);
  }
  predict->add_option("--mu-curve", o.mu_curve, "previously learned mu curve")->check(CLI::ExistingFile);
  predict->add_option("--ground-truth", o.ground_truth, "simulator ground truth for the MAE report")
      ->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    const auto cfg = build_config(o);
    const auto* cmd = app.get_subcommands().front();
    const auto mode = qsignal::parse_mode(cmd->get_name());
    qsignal::ExperimentInputs in;
    if (!o.input.empty()) in.observations = o.input;
    if (!o.signal.empty()) in.signal = o.signal;
    if (!o.mu_curve.empty()) in.mu_curve = o.mu_curve;
    if (!o.ground_truth.empty()) in.ground_truth = o.ground_truth;
    in.dump_clusters = o.dump_clusters;

    const auto result = qsignal::run_experiment(cfg, mode, in, &std::cout);
    if (result.mae) {
      std::cout << "mae: " << result.mae->defined() << " cycles";
      if (result.mae->mean_pct) std::cout << ", mean " << qsignal::csv::fmt(*result.mae->mean_pct) << "%";
      if (result.mae->mean_true_pct)
        std::cout << ", against ground truth " << qsignal::csv::fmt(*result.mae->mean_true_pct) << "%";
      std::cout << '\n';
    }
    for (const auto& f : result.files) std::cout << "wrote " << f.string() << '\n';
  } catch (const qsignal::ConfigError& e) {
    std::cerr << "invalid configuration: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
