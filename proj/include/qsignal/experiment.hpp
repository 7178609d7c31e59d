#pragma once

// Experiment runner: flat key=value configuration, the five run modes and
// the CSV reports they leave in the output directory.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "qsignal/closed_loop.hpp"
#include "qsignal/csv.hpp"
#include "qsignal/error.hpp"
#include "qsignal/gof.hpp"
#include "qsignal/pipeline.hpp"
#include "qsignal/predictor.hpp"
#include "qsignal/rates.hpp"
#include "qsignal/simulator.hpp"

namespace qsignal {

enum class Mode { simulate, learn_mu, predict, closed_loop, validate };

inline Mode parse_mode(std::string_view s) {
  if (s == "simulate") return Mode::simulate;
  if (s == "learn-mu") return Mode::learn_mu;
  if (s == "predict") return Mode::predict;
  if (s == "closed-loop") return Mode::closed_loop;
  if (s == "validate") return Mode::validate;
  throw ConfigError("mode", "unknown mode '" + std::string(s) + "'");
}

struct ExperimentConfig {
  PredictorConfig predictor;
  sim::SimConfig sim;
  dpmm::Params dpmm;
  int n_cycles = 50;
  ControllerKind controller = ControllerKind::fixed;  // simulate mode only
  std::filesystem::path out = "out";

  void validate() const {
    predictor.validate();
    dpmm.validate();
    sim.validate();
    if (n_cycles < 1) throw ConfigError("n_cycles", "must be >= 1");
    if (out.empty()) throw ConfigError("out", "must not be empty");
  }

  ClosedLoopConfig closed_loop(ControllerKind kind) const {
    ClosedLoopConfig c;
    c.sim = sim;
    c.predictor = predictor;
    c.dpmm = dpmm;
    c.n_cycles = n_cycles;
    c.controller = kind;
    return c;
  }
};

namespace detail {

inline double number(std::string_view key, std::string_view v) {
  if (auto d = csv::to_double(v)) return *d;
  throw ConfigError(std::string(key), "expected a number (got '" + std::string(v) + "')");
}

inline std::int64_t integer(std::string_view key, std::string_view v) {
  if (auto i = csv::to_int(v)) return *i;
  throw ConfigError(std::string(key), "expected an integer (got '" + std::string(v) + "')");
}

inline bool boolean(std::string_view key, std::string_view v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw ConfigError(std::string(key), "expected a boolean (got '" + std::string(v) + "')");
}

inline Roi roi(std::string_view key, std::string_view v) {
  const auto f = csv::split(v);
  if (f.size() != 4) throw ConfigError(std::string(key), "expected x_min,y_min,x_max,y_max");
  try {
    return Roi(number(key, f[0]), number(key, f[1]), number(key, f[2]), number(key, f[3]));
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string(key), e.what());
  }
}

// "t:rate,t:rate,..."
inline std::vector<sim::RateStep> rate_steps(std::string_view key, std::string_view v) {
  std::vector<sim::RateStep> steps;
  if (csv::trim(v).empty()) return steps;
  for (const auto& item : csv::split(v)) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError(std::string(key), "expected t:rate pairs");
    steps.push_back({number(key, csv::trim(item.substr(0, colon))), number(key, csv::trim(item.substr(colon + 1)))});
  }
  return steps;
}

inline std::vector<double> numbers(std::string_view key, std::string_view v) {
  std::vector<double> out;
  if (csv::trim(v).empty()) return out;
  for (const auto& item : csv::split(v)) out.push_back(number(key, item));
  return out;
}

}  // namespace detail

/// Applies one key=value setting. Unknown keys and malformed values throw a
/// ConfigError naming the key.
inline void apply_setting(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
  using namespace detail;
  using Setter = std::function<void(ExperimentConfig&, std::string_view)>;
  static const std::map<std::string, Setter, std::less<>> setters = {
      {"alpha", [](auto& c, auto v) { c.dpmm.alpha = number("alpha", v); }},
      {"direction_weight", [](auto& c, auto v) { c.dpmm.direction_weight = number("direction_weight", v); }},
      {"ttl", [](auto& c, auto v) { c.dpmm.ttl = integer("ttl", v); }},
      {"bins", [](auto& c, auto v) { c.sim.direction_bins = static_cast<int>(integer("bins", v)); }},
      {"sigma", [](auto& c, auto v) { c.predictor.sigma = number("sigma", v); }},
      {"gamma", [](auto& c, auto v) { c.predictor.gamma = number("gamma", v); }},
      {"t_s", [](auto& c, auto v) { c.predictor.T_s = number("t_s", v); }},
      {"cycles", [](auto& c, auto v) { c.predictor.C = static_cast<int>(integer("cycles", v)); }},
      {"t_max", [](auto& c, auto v) { c.predictor.t_max = static_cast<int>(integer("t_max", v)); }},
      {"t_m_fixed", [](auto& c, auto v) { c.predictor.T_m_fixed = number("t_m_fixed", v); }},
      {"t_cycle", [](auto& c, auto v) { c.predictor.T_cycle = number("t_cycle", v); }},
      {"min_green", [](auto& c, auto v) { c.predictor.min_green = number("min_green", v); }},
      {"correction",
       [](auto& c, auto v) {
         if (v == "queue_clearance") c.predictor.correction = CorrectionBasis::queue_clearance;
         else if (v == "green_duration") c.predictor.correction = CorrectionBasis::green_duration;
         else throw ConfigError("correction", "expected queue_clearance or green_duration");
       }},
      {"lambda_source",
       [](auto& c, auto v) {
         if (v == "departure") c.predictor.lambda_source = LambdaSource::departure;
         else if (v == "arrival") c.predictor.lambda_source = LambdaSource::arrival;
         else throw ConfigError("lambda_source", "expected departure or arrival");
       }},
      {"lambda_true", [](auto& c, auto v) { c.sim.lambda_true = number("lambda_true", v); }},
      {"bus_fraction", [](auto& c, auto v) { c.sim.bus_fraction = number("bus_fraction", v); }},
      {"frame_rate", [](auto& c, auto v) { c.sim.frame_rate = number("frame_rate", v); }},
      {"obs_grid_spacing", [](auto& c, auto v) { c.sim.obs_grid_spacing = number("obs_grid_spacing", v); }},
      {"direction_noise_sd", [](auto& c, auto v) { c.sim.direction_noise_sd = number("direction_noise_sd", v); }},
      {"seed",
       [](auto& c, auto v) {
         const auto s = integer("seed", v);
         if (s < 0) throw ConfigError("seed", "must be >= 0");
         c.sim.seed = static_cast<std::uint64_t>(s);
       }},
      {"arrival_process",
       [](auto& c, auto v) {
         if (v == "poisson") c.sim.arrival_process = sim::ArrivalProcess::poisson;
         else if (v == "uniform") c.sim.arrival_process = sim::ArrivalProcess::uniform;
         else throw ConfigError("arrival_process", "expected poisson or uniform");
       }},
      {"arrivals", [](auto& c, auto v) { c.sim.arrivals_enabled = boolean("arrivals", v); }},
      {"rate_steps", [](auto& c, auto v) { c.sim.rate_steps = rate_steps("rate_steps", v); }},
      {"scripted_arrivals", [](auto& c, auto v) { c.sim.scripted_arrivals = numbers("scripted_arrivals", v); }},
      {"arrival_roi", [](auto& c, auto v) { c.sim.arrival_roi = roi("arrival_roi", v); }},
      {"departure_roi", [](auto& c, auto v) { c.sim.departure_roi = roi("departure_roi", v); }},
      {"lane_y", [](auto& c, auto v) { c.sim.lane_y = number("lane_y", v); }},
      {"stop_line_x", [](auto& c, auto v) { c.sim.stop_line_x = number("stop_line_x", v); }},
      {"lane_end_x", [](auto& c, auto v) { c.sim.lane_end_x = number("lane_end_x", v); }},
      {"min_gap", [](auto& c, auto v) { c.sim.min_gap = number("min_gap", v); }},
      {"car_length", [](auto& c, auto v) { c.sim.car.length = number("car_length", v); }},
      {"car_width", [](auto& c, auto v) { c.sim.car.width = number("car_width", v); }},
      {"car_speed", [](auto& c, auto v) { c.sim.car.cruise_speed = number("car_speed", v); }},
      {"car_start_headway", [](auto& c, auto v) { c.sim.car.start_headway = number("car_start_headway", v); }},
      {"bus_length", [](auto& c, auto v) { c.sim.bus.length = number("bus_length", v); }},
      {"bus_width", [](auto& c, auto v) { c.sim.bus.width = number("bus_width", v); }},
      {"bus_speed", [](auto& c, auto v) { c.sim.bus.cruise_speed = number("bus_speed", v); }},
      {"bus_start_headway", [](auto& c, auto v) { c.sim.bus.start_headway = number("bus_start_headway", v); }},
      {"n_cycles", [](auto& c, auto v) { c.n_cycles = static_cast<int>(integer("n_cycles", v)); }},
      {"controller",
       [](auto& c, auto v) {
         if (v == "fixed") c.controller = ControllerKind::fixed;
         else if (v == "adaptive") c.controller = ControllerKind::adaptive;
         else throw ConfigError("controller", "expected fixed or adaptive");
       }},
      {"out", [](auto& c, auto v) { c.out = std::string(v); }},
  };
  const auto it = setters.find(csv::trim(key));
  if (it == setters.end()) throw ConfigError(std::string(csv::trim(key)), "unknown configuration key");
  it->second(cfg, csv::trim(value));
}

// "key=value" as given on the command line.
inline void apply_override(ExperimentConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError(std::string(assignment), "expected key=value");
  apply_setting(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
}

/// Reads `key = value` lines on top of `cfg`. '#' starts a comment.
inline void read_config(std::istream& in, ExperimentConfig& cfg) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (csv::trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(lineno, "expected key = value");
    apply_setting(cfg, std::string_view(line).substr(0, eq), std::string_view(line).substr(eq + 1));
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open config file '" + path.string() + "'");
  ExperimentConfig cfg;
  read_config(in, cfg);
  return cfg;
}

// ---------------------------------------------------------------------------
// Reports

struct MaeRow {
  int c = 0;  // cycle the prediction was made for
  double T_q_e = 0.0;
  std::optional<double> T_q_a;     // clearance measured by the tracker in cycle c
  std::optional<double> T_q_true;  // simulator ground truth, when known
};

struct MaeSummary {
  std::vector<MaeRow> rows;
  std::optional<double> mean_pct;       // against the measured clearance
  std::optional<double> mean_true_pct;  // against ground truth

  std::size_t defined() const {
    std::size_t n = 0;
    for (const auto& r : rows) n += r.T_q_a && *r.T_q_a > 0.0;
    return n;
  }
};

inline std::optional<double> relative_error_pct(double estimate, std::optional<double> actual) {
  if (!actual || !(*actual > 0.0)) return std::nullopt;
  return std::abs(estimate - *actual) / *actual * 100.0;
}

/// Pairs each prediction made at cycle c with what cycle c + 1 measured.
inline MaeSummary mae_summary(std::span<const SignalCycleRecord> records,
                              std::span<const sim::CycleGroundTruth> truth = {}) {
  MaeSummary s;
  double sum = 0.0, sum_true = 0.0;
  int n = 0, n_true = 0;
  for (std::size_t i = 0; i + 1 < records.size(); ++i) {
    if (!records[i].prediction) continue;
    MaeRow row;
    row.c = records[i + 1].c;
    row.T_q_e = records[i].prediction->T_mq_next;
    row.T_q_a = records[i + 1].T_mq_measured;
    for (const auto& g : truth)
      if (g.cycle == row.c) row.T_q_true = g.clearance_true;
    if (auto e = relative_error_pct(row.T_q_e, row.T_q_a)) {
      sum += *e;
      ++n;
    }
    if (auto e = relative_error_pct(row.T_q_e, row.T_q_true)) {
      sum_true += *e;
      ++n_true;
    }
    s.rows.push_back(row);
  }
  if (n > 0) s.mean_pct = sum / n;
  if (n_true > 0) s.mean_true_pct = sum_true / n_true;
  return s;
}

inline constexpr std::string_view kMaeHeader = "c,T_q_e,T_q_a,abs_err,mae_pct,T_q_true,mae_true_pct";

inline void write_mae_report(std::ostream& out, const MaeSummary& s) {
  auto pct = [](std::optional<double> v) { return v ? csv::fmt(*v) : std::string("undefined"); };
  out << kMaeHeader << '\n';
  for (const auto& r : s.rows) {
    out << r.c << ',' << csv::fmt(r.T_q_e) << ',' << csv::fmt(r.T_q_a) << ',';
    if (r.T_q_a) out << csv::fmt(std::abs(r.T_q_e - *r.T_q_a));
    out << ',' << pct(relative_error_pct(r.T_q_e, r.T_q_a)) << ',' << csv::fmt(r.T_q_true) << ',';
    out << (r.T_q_true ? pct(relative_error_pct(r.T_q_e, r.T_q_true)) : std::string()) << '\n';
  }
  out << "mean,,,," << pct(s.mean_pct) << ",," << (s.mean_true_pct ? csv::fmt(*s.mean_true_pct) : "") << '\n';
}

inline MaeSummary emit_mae_report(std::ostream& out, std::span<const SignalCycleRecord> records,
                                  std::span<const sim::CycleGroundTruth> truth = {}) {
  auto s = mae_summary(records, truth);
  write_mae_report(out, s);
  return s;
}

inline std::vector<sim::CycleGroundTruth> read_ground_truth(std::istream& in) {
  csv::expect_header(in, sim::kGroundTruthHeader);
  std::vector<sim::CycleGroundTruth> out;
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (csv::trim(line).empty()) continue;
    const auto f = csv::split(line);
    if (f.size() != 4) throw ParseError(lineno, "expected 4 fields");
    sim::CycleGroundTruth g;
    g.cycle = static_cast<int>(csv::require_int(f[0], lineno, "cycle"));
    g.queue_vehicles = static_cast<int>(csv::require_int(f[1], lineno, "queue_len"));
    g.clearance_true = csv::require_double(f[2], lineno, "clearance_true");
    g.lambda_true_window = csv::require_double(f[3], lineno, "lambda_true_window");
    out.push_back(g);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Distribution check

struct GapSample {
  std::string name;
  std::vector<double> gaps;
};

inline constexpr std::size_t kMinGofSamples = 1000;
inline constexpr std::string_view kValidationHeader = "sample,n,mean,ks_statistic,critical_5pct,p_value,result";

struct TimeWindow {
  double start = 0.0;
  double end = 0.0;
};

/// Stable-flow part of each green: its closing T_s seconds, never earlier
/// than the moment the standing queue had cleared.
inline std::vector<TimeWindow> stable_windows(const SignalTimeline& timeline,
                                              std::span<const sim::CycleGroundTruth> truth, double T_s) {
  std::vector<TimeWindow> out;
  for (const auto& c : timeline.cycles()) {
    double start = c.t_s + std::max(0.0, c.green - T_s);
    for (const auto& g : truth)
      if (g.cycle == c.index) start = std::max(start, c.t_s + g.clearance_true);
    if (start < c.t_s + c.green) out.push_back({start, c.t_s + c.green});
  }
  return out;
}

/// Arrival gaps, and gaps between free-flow departures measured on the clock
/// that only runs inside stable windows (so window edges do not cut gaps).
inline std::vector<GapSample> distribution_samples(std::span<const double> arrivals,
                                                   std::span<const sim::VehicleRecord> vehicles,
                                                   std::span<const TimeWindow> windows) {
  GapSample a{"inter_arrival", {}};
  for (std::size_t i = 1; i < arrivals.size(); ++i) a.gaps.push_back(arrivals[i] - arrivals[i - 1]);

  std::vector<double> times;
  for (const auto& v : vehicles)
    if (v.departure_time && !v.stopped) times.push_back(*v.departure_time);
  std::sort(times.begin(), times.end());

  GapSample d{"inter_departure", {}};
  double elapsed = 0.0;  // stable time before the current window
  std::optional<double> prev;
  std::size_t k = 0;
  for (const auto& w : windows) {
    while (k < times.size() && times[k] < w.start) ++k;
    for (; k < times.size() && times[k] < w.end; ++k) {
      const double tau = elapsed + (times[k] - w.start);
      if (prev) d.gaps.push_back(tau - *prev);
      prev = tau;
    }
    elapsed += w.end - w.start;
  }
  return {a, d};
}

inline void write_validation(std::ostream& out, std::span<const GapSample> samples) {
  out << kValidationHeader << '\n';
  for (const auto& s : samples) {
    out << s.name << ',' << s.gaps.size() << ',';
    if (s.gaps.size() < 2) {
      out << ",,,,inconclusive\n";
      continue;
    }
    const auto r = gof::ks_exponential(s.gaps);
    const char* verdict = s.gaps.size() < kMinGofSamples ? "inconclusive" : (r.passes() ? "pass" : "fail");
    out << csv::fmt(r.mean) << ',' << csv::fmt(r.statistic) << ',' << csv::fmt(r.critical_5pct) << ','
        << csv::fmt(r.p_value) << ',' << verdict << '\n';
  }
}

// ---------------------------------------------------------------------------
// Offline processing of a recorded stream

/// Pools mu data points cycle by cycle exactly as the online controller does:
/// the first C cycles, and further cycles only while no point has been seen.
struct MuLearning {
  std::vector<MuDataPoint> points;
  std::optional<MuCurve> curve;
  int cycles_used = 0;
};

inline MuLearning learn_mu(std::span<const FlaggedTracklet> events, const SignalTimeline& timeline,
                           const PredictorConfig& config) {
  config.validate();
  MuLearning out;
  for (const auto& cyc : timeline.cycles()) {
    SignalTimeline one;
    one.append(cyc.t_s, cyc.green, cyc.red);
    const auto pts = mu_datapoints_from_cycles(events, one, 1);
    out.points.insert(out.points.end(), pts.begin(), pts.end());
    out.cycles_used = cyc.index;
    if (cyc.index >= config.C && !out.points.empty()) {
      out.curve = build_mu_curve(out.points, config.t_max, config.sigma);
      break;
    }
  }
  return out;
}

// Index of the last frame the simulator emits before the clock reaches t_end
// (Simulator::run_until steps while frame / frame_rate < t_end - 1e-9).
inline std::int64_t last_frame_before(double t_end, double frame_rate) {
  auto before = [&](std::int64_t k) { return static_cast<double>(k) / frame_rate < t_end - 1e-9; };
  auto k = static_cast<std::int64_t>(std::floor(t_end * frame_rate));
  while (k > 0 && !before(k - 1)) --k;
  while (before(k)) ++k;
  return k;
}

/// Runs the tracker over recorded frames, stopping after each signal cycle to
/// hand `on_cycle` the events seen so far. Frames up to the end of the last
/// cycle are processed, recorded or not.
template <class OnCycle>
void replay_stream(std::span<const FrameBatch> batches, const SignalTimeline& timeline, TrackletPipeline& pipeline,
                   double frame_rate, OnCycle&& on_cycle) {
  std::size_t next = 0;
  for (const auto& cyc : timeline.cycles()) {
    const std::int64_t last = last_frame_before(cyc.end(), frame_rate);
    while (next < batches.size() && batches[next].frame <= last) pipeline.process(batches[next++]);
    pipeline.advance_to(last);
    on_cycle(cyc, pipeline.flagged());
  }
  while (next < batches.size()) pipeline.process(batches[next++]);
}

// ---------------------------------------------------------------------------
// Modes

struct ExperimentInputs {
  std::optional<std::filesystem::path> observations;  // learn-mu, predict
  std::optional<std::filesystem::path> signal;        // learn-mu, predict
  std::optional<std::filesystem::path> mu_curve;      // predict
  std::optional<std::filesystem::path> ground_truth;  // predict
  bool dump_clusters = false;
};

struct ExperimentResult {
  std::vector<std::filesystem::path> files;
  std::optional<MaeSummary> mae;
};

namespace detail {

class OutputDir {
 public:
  explicit OutputDir(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

  template <class Fn>
  void write(const std::string& name, Fn&& fn) {
    const auto path = dir_ / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInput("cannot write '" + path.string() + "'");
    fn(out);
    if (!out) throw InvalidInput("error writing '" + path.string() + "'");
    files_.push_back(path);
  }

  std::vector<std::filesystem::path> files() const { return files_; }

 private:
  std::filesystem::path dir_;
  std::vector<std::filesystem::path> files_;
};

inline std::ifstream open_input(const std::optional<std::filesystem::path>& p, std::string_view what) {
  if (!p) throw InvalidInput(std::string(what) + " input file is required");
  std::ifstream in(*p, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + std::string(what) + " file '" + p->string() + "'");
  return in;
}

inline void print_cycle(std::ostream& log, const SignalCycleRecord& r) {
  log << "cycle " << r.c << ": T_m=" << csv::fmt(r.T_m) << " T_mr=" << csv::fmt(r.T_mr)
      << " T_mq=" << (r.T_mq_measured ? csv::fmt(*r.T_mq_measured) : "n/a") << " lambda_a=" << csv::fmt(r.lambda_a)
      << " mu_a=" << (r.mu_a ? csv::fmt(*r.mu_a) : "n/a") << " next=" << csv::fmt(r.T_m_commanded)
      << (r.learning ? " (learning)" : "") << (!r.measurement_available ? " (measurement unavailable)" : "")
      << '\n';
}

inline void print_cycle(std::ostream& log, const sim::CycleGroundTruth& g, const SignalCycle& c) {
  log << "cycle " << g.cycle << ": T_m=" << csv::fmt(c.green) << " T_mr=" << csv::fmt(c.red)
      << " queue=" << g.queue_vehicles << " clearance=" << csv::fmt(g.clearance_true) << " arrivals=" << g.arrivals
      << '\n';
}

}  // namespace detail

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, Mode mode, const ExperimentInputs& in = {},
                                       std::ostream* log = nullptr) {
  cfg.validate();
  detail::OutputDir dir(cfg.out);
  ExperimentResult result;

  switch (mode) {
    case Mode::simulate: {
      std::ostringstream obs, clusters;
      auto lc = cfg.closed_loop(cfg.controller);
      lc.observations_out = &obs;
      if (in.dump_clusters) lc.cluster_dump = &clusters;
      const auto r = run_closed_loop(lc);
      dir.write("observations.csv", [&](std::ostream& o) { o << obs.str(); });
      dir.write("ground_truth.csv", [&](std::ostream& o) { sim::write_ground_truth(o, r.ground_truth); });
      dir.write("signal.csv", [&](std::ostream& o) { write_signal_timeline(o, r.timeline); });
      if (in.dump_clusters)
        dir.write("clusters.csv", [&](std::ostream& o) { o << dpmm::kClusterDumpHeader << '\n' << clusters.str(); });
      if (!r.records.empty()) dir.write("cycle_log.csv", [&](std::ostream& o) { write_cycle_log(o, r.records); });
      if (log) {
        if (!r.records.empty())
          for (const auto& rec : r.records) detail::print_cycle(*log, rec);
        else
          for (const auto& g : r.ground_truth) detail::print_cycle(*log, g, r.timeline[g.cycle - 1]);
      }
      break;
    }

    case Mode::learn_mu: {
      auto obs_in = detail::open_input(in.observations, "observation");
      auto sig_in = detail::open_input(in.signal, "signal");
      const auto batches = read_observations(obs_in, cfg.sim.direction_bins);
      const auto timeline = read_signal_timeline(sig_in);
      TrackletPipeline pipeline(cfg.dpmm, tracker_seed(cfg.sim.seed), cfg.sim.arrival_roi, cfg.sim.departure_roi,
                                cfg.sim.frame_rate, cfg.sim.direction_bins);
      replay_stream(batches, timeline, pipeline, cfg.sim.frame_rate, [](const SignalCycle&, auto&&) {});
      pipeline.finish();
      const auto learned = learn_mu(pipeline.flagged(), timeline, cfg.predictor);
      if (!learned.curve) throw NoDataError("learn-mu: no queued departures in the recorded cycles");
      dir.write("mu_curve.csv", [&](std::ostream& o) { write_mu_curve(o, *learned.curve); });
      dir.write("mu_points.csv", [&](std::ostream& o) { write_mu_points(o, learned.points); });
      dir.write("tracklets.csv", [&](std::ostream& o) { write_tracklets(o, pipeline.registry()); });
      const auto greens = timeline.greens();
      dir.write("tracklet_summary.csv",
                [&](std::ostream& o) { write_tracklet_summary(o, pipeline.registry(), greens); });
      if (log)
        *log << "learned mu curve from " << learned.points.size() << " points over " << learned.cycles_used
             << " cycles\n";
      break;
    }

    case Mode::predict: {
      auto obs_in = detail::open_input(in.observations, "observation");
      auto sig_in = detail::open_input(in.signal, "signal");
      const auto batches = read_observations(obs_in, cfg.sim.direction_bins);
      const auto timeline = read_signal_timeline(sig_in);
      std::optional<AdaptiveController> controller;
      if (in.mu_curve) {
        auto mu_in = detail::open_input(in.mu_curve, "mu curve");
        controller.emplace(cfg.predictor, read_mu_curve(mu_in, cfg.predictor.sigma));
      } else {
        controller.emplace(cfg.predictor);
      }
      std::vector<sim::CycleGroundTruth> truth;
      if (in.ground_truth) {
        auto gt_in = detail::open_input(in.ground_truth, "ground truth");
        truth = read_ground_truth(gt_in);
      }
      TrackletPipeline pipeline(cfg.dpmm, tracker_seed(cfg.sim.seed), cfg.sim.arrival_roi, cfg.sim.departure_roi,
                                cfg.sim.frame_rate, cfg.sim.direction_bins);
      replay_stream(batches, timeline, pipeline, cfg.sim.frame_rate,
                    [&](const SignalCycle& cyc, std::vector<FlaggedTracklet> ev) {
                      const auto rec = controller->complete_cycle({cyc, std::move(ev)});
                      if (log) detail::print_cycle(*log, rec);
                    });
      const auto& records = controller->records();
      dir.write("cycle_log.csv", [&](std::ostream& o) { write_cycle_log(o, records); });
      dir.write("mae.csv", [&](std::ostream& o) { result.mae = emit_mae_report(o, records, truth); });
      if (controller->mu_curve())
        dir.write("mu_curve.csv", [&](std::ostream& o) { write_mu_curve(o, *controller->mu_curve()); });
      break;
    }

    case Mode::closed_loop: {
      std::ostringstream clusters;
      auto lc = cfg.closed_loop(ControllerKind::adaptive);
      if (in.dump_clusters) lc.cluster_dump = &clusters;
      const auto r = run_closed_loop(lc);
      dir.write("cycle_log.csv", [&](std::ostream& o) { write_cycle_log(o, r.records); });
      dir.write("ground_truth.csv", [&](std::ostream& o) { sim::write_ground_truth(o, r.ground_truth); });
      dir.write("signal.csv", [&](std::ostream& o) { write_signal_timeline(o, r.timeline); });
      if (r.curve) dir.write("mu_curve.csv", [&](std::ostream& o) { write_mu_curve(o, *r.curve); });
      dir.write("mu_points.csv", [&](std::ostream& o) { write_mu_points(o, r.points); });
      dir.write("mae.csv", [&](std::ostream& o) { result.mae = emit_mae_report(o, r.records, r.ground_truth); });
      dir.write("tracklets.csv", [&](std::ostream& o) { write_tracklets(o, r.registry); });
      const auto greens = r.timeline.greens();
      dir.write("tracklet_summary.csv", [&](std::ostream& o) { write_tracklet_summary(o, r.registry, greens); });
      if (in.dump_clusters)
        dir.write("clusters.csv", [&](std::ostream& o) { o << dpmm::kClusterDumpHeader << '\n' << clusters.str(); });
      if (log)
        for (const auto& rec : r.records) detail::print_cycle(*log, rec);
      break;
    }

    case Mode::validate: {
      // Only the simulator is needed here: the fixed plan, no tracker.
      sim::Simulator simulator(cfg.sim, cfg.predictor.T_cycle - cfg.predictor.T_m_fixed);
      for (int c = 0; c < cfg.n_cycles; ++c) {
        const auto& cyc = simulator.begin_cycle(cfg.predictor.T_m_fixed, cfg.predictor.T_cycle - cfg.predictor.T_m_fixed);
        simulator.run_until(cyc.end(), [](const FrameBatch&) {});
      }
      std::vector<sim::CycleGroundTruth> truth;
      for (int c = 1; c <= cfg.n_cycles; ++c) truth.push_back(simulator.ground_truth(c));
      const auto windows = stable_windows(simulator.timeline(), truth, cfg.predictor.T_s);
      const auto samples = distribution_samples(simulator.arrival_times(), simulator.vehicles(), windows);
      dir.write("validation.csv", [&](std::ostream& o) { write_validation(o, samples); });
      if (log)
        for (const auto& s : samples) *log << s.name << ": " << s.gaps.size() << " gaps\n";
      break;
    }
  }
  result.files = dir.files();
  return result;
}

}  // namespace qsignal
