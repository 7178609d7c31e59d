#pragma once

// Simulator, tracker and controller wired together, cycle by cycle.

#include <optional>
#include <ostream>
#include <vector>

#include "qsignal/dpmm.hpp"
#include "qsignal/pipeline.hpp"
#include "qsignal/predictor.hpp"
#include "qsignal/random.hpp"
#include "qsignal/rates.hpp"
#include "qsignal/simulator.hpp"

namespace qsignal {

enum class ControllerKind { adaptive, fixed };

struct ClosedLoopConfig {
  sim::SimConfig sim;
  PredictorConfig predictor;
  dpmm::Params dpmm;
  int n_cycles = 50;
  ControllerKind controller = ControllerKind::adaptive;
  // Optional sinks, written while the run progresses.
  std::ostream* observations_out = nullptr;
  std::ostream* cluster_dump = nullptr;

  double warmup_red() const { return predictor.T_cycle - predictor.T_m_fixed; }
};

// Seed of the sampler stream, shared by online and offline runs.
inline std::uint64_t tracker_seed(std::uint64_t seed) { return derive_seed(seed, 7); }

struct ClosedLoopResult {
  std::vector<SignalCycleRecord> records;  // empty for the fixed controller
  std::vector<sim::CycleGroundTruth> ground_truth;
  std::optional<MuCurve> curve;
  std::vector<MuDataPoint> points;
  SignalTimeline timeline;
  TrackletRegistry registry;
  std::vector<sim::VehicleRecord> vehicles;
  std::vector<double> arrival_times;
};

inline ClosedLoopResult run_closed_loop(const ClosedLoopConfig& cfg) {
  cfg.predictor.validate();
  cfg.dpmm.validate();
  if (cfg.n_cycles < 1) throw ConfigError("n_cycles", "must be >= 1");

  sim::Simulator simulator(cfg.sim, cfg.warmup_red());
  TrackletPipeline pipeline(cfg.dpmm, tracker_seed(cfg.sim.seed), cfg.sim.arrival_roi, cfg.sim.departure_roi,
                            cfg.sim.frame_rate, cfg.sim.direction_bins);
  pipeline.set_cluster_dump(cfg.cluster_dump);
  if (cfg.observations_out) write_observation_header(*cfg.observations_out);

  auto run_cycle = [&](double green, double red) {
    const SignalCycle cycle = simulator.begin_cycle(green, red);
    simulator.run_until(cycle.end(), [&](const FrameBatch& b) {
      if (cfg.observations_out) write_observations(*cfg.observations_out, b);
      pipeline.process(b);
    });
    return CycleEvents{cycle, pipeline.flagged()};
  };

  ClosedLoopResult out;
  if (cfg.controller == ControllerKind::adaptive) {
    AdaptiveController controller(cfg.predictor);
    out.records = adaptive_loop(run_cycle, controller, cfg.n_cycles);
    out.curve = controller.mu_curve();
    out.points = controller.mu_points();
  } else {
    for (int c = 0; c < cfg.n_cycles; ++c)
      run_cycle(cfg.predictor.T_m_fixed, cfg.predictor.T_cycle - cfg.predictor.T_m_fixed);
  }

  pipeline.finish();
  out.timeline = simulator.timeline();
  for (int c = 1; c <= cfg.n_cycles; ++c) out.ground_truth.push_back(simulator.ground_truth(c));
  out.registry = pipeline.registry();
  out.vehicles = simulator.vehicles();
  out.arrival_times = simulator.arrival_times();
  return out;
}

}  // namespace qsignal
