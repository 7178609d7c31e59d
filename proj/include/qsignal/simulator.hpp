#pragma once

// Seeded frame-stepped simulation of one signalized lane. Vehicles arrive by a
// Poisson clock, cruise at constant speed, stop at the stop line on red or
// behind the vehicle ahead, and restart a fixed start delay after the way
// ahead clears. Every moving vehicle emits a regular grid of flow samples over
// its footprint; stationary vehicles emit nothing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <string_view>
#include <vector>

#include "qsignal/csv.hpp"
#include "qsignal/error.hpp"
#include "qsignal/flowmodel.hpp"
#include "qsignal/random.hpp"
#include "qsignal/rates.hpp"

namespace qsignal::sim {

inline double exponential_from_uniform(double u, double rate) { return -std::log1p(-u) / rate; }

/// Inverse-CDF exponential draw.
inline double sample_interarrival(Rng& rng, double rate) {
  if (!(rate > 0.0) || !std::isfinite(rate)) throw InvalidInput("sample_interarrival: rate must be > 0");
  return exponential_from_uniform(uniform01(rng), rate);
}

enum class VehicleClass { car, bus };

struct VehicleSpec {
  VehicleClass cls = VehicleClass::car;
  double length = 12.0;        // px
  double width = 6.0;          // px
  double cruise_speed = 30.0;  // px/s
  double start_headway = 0.4;  // s, delay before restarting once the way ahead clears
};

enum class ArrivalProcess { poisson, uniform };

struct RateStep {
  double t = 0.0;
  double rate = 0.0;  // vehicles/s from t onward; 0 pauses arrivals
};

struct SimConfig {
  double lambda_true = 0.25;  // vehicles/s
  double bus_fraction = 0.1;
  double frame_rate = 20.0;
  Roi arrival_roi{40.0, 85.0, 80.0, 115.0};
  Roi departure_roi{705.0, 85.0, 745.0, 115.0};
  double obs_grid_spacing = 4.0;
  double direction_noise_sd = 0.1;  // rad
  std::uint64_t seed = 1;
  VehicleSpec car{VehicleClass::car, 12.0, 6.0, 30.0, 0.4};
  VehicleSpec bus{VehicleClass::bus, 28.0, 8.0, 30.0, 0.8};
  double lane_y = 100.0;
  double stop_line_x = 700.0;
  double lane_end_x = 800.0;
  double min_gap = 6.0;  // px between stopped vehicles
  double heading = 0.0;  // rad, direction of travel (+x)
  ArrivalProcess arrival_process = ArrivalProcess::poisson;
  bool arrivals_enabled = true;
  std::vector<RateStep> rate_steps;      // piecewise-constant rate changes, ascending t
  std::vector<double> scripted_arrivals; // when non-empty, replaces the arrival clock
  int direction_bins = kDefaultDirectionBins;

  void validate() const {
    if (!(lambda_true >= 0.0) || !std::isfinite(lambda_true)) throw ConfigError("lambda_true", "must be >= 0");
    if (!(bus_fraction >= 0.0 && bus_fraction <= 1.0)) throw ConfigError("bus_fraction", "must lie in [0, 1]");
    if (!(frame_rate > 0.0)) throw ConfigError("frame_rate", "must be > 0");
    if (!(obs_grid_spacing > 0.0)) throw ConfigError("obs_grid_spacing", "must be > 0");
    if (!(direction_noise_sd >= 0.0)) throw ConfigError("direction_noise_sd", "must be >= 0");
    if (direction_bins < 1) throw ConfigError("bins", "must be >= 1");
    if (bus.length < 2.0 * car.length) throw ConfigError("bus_length", "must be at least twice the car length");
    if (!(stop_line_x < lane_end_x)) throw ConfigError("stop_line_x", "must lie before lane_end_x");
    if (arrival_roi.overlaps(departure_roi)) throw ConfigError("roi", "Arrival-ROI and Departure-ROI must be disjoint");
    for (std::size_t i = 1; i < rate_steps.size(); ++i)
      if (rate_steps[i].t < rate_steps[i - 1].t) throw ConfigError("rate_steps", "must be in ascending time");
    for (const auto& s : rate_steps)
      if (!(s.rate >= 0.0)) throw ConfigError("rate_steps", "rates must be >= 0");
    if (!std::is_sorted(scripted_arrivals.begin(), scripted_arrivals.end()))
      throw ConfigError("scripted_arrivals", "must be ascending");
  }
};

struct VehicleRecord {
  int id = 0;
  VehicleClass cls = VehicleClass::car;
  double arrival_time = 0.0;         // scheduled arrival at the lane entry
  std::optional<double> spawn_time;  // entered the lane (later than arrival if blocked)
  std::optional<double> departure_time;  // center entered the Departure-ROI
  bool stopped = false;              // stood still before passing the stop line
  bool exited = false;
};

struct CycleGroundTruth {
  int cycle = 0;
  int queue_vehicles = 0;  // standing before the stop line at green onset
  int queue_buses = 0;
  double clearance_true = 0.0;  // last of those into the Departure-ROI, from t_s
  bool cleared = true;
  int arrivals = 0;
  int departures = 0;
  double lambda_true_window = 0.0;  // realized arrivals per second over the cycle
};

class Simulator {
 public:
  Simulator(SimConfig config, double warmup_red)
      : cfg_(std::move(config)),
        warmup_red_(warmup_red),
        arrival_rng_(derive_seed(cfg_.seed, 0)),
        class_rng_(derive_seed(cfg_.seed, 1)),
        noise_rng_(derive_seed(cfg_.seed, 2)) {
    cfg_.validate();
    if (!(warmup_red >= 0.0)) throw ConfigError("warmup_red", "must be >= 0");
    schedule_next_arrival(0.0);
  }

  const SimConfig& config() const { return cfg_; }
  const SignalTimeline& timeline() const { return timeline_; }
  std::int64_t frame() const { return frame_; }
  double time() const { return static_cast<double>(frame_) / cfg_.frame_rate; }
  double dt() const { return 1.0 / cfg_.frame_rate; }

  // Next cycle starts when the previous ends (or after the warm-up red).
  const SignalCycle& begin_cycle(double green, double red) {
    return timeline_.append_next(green, red, warmup_red_);
  }

  bool is_green(double t) const { return green_cycle_at(t) != nullptr; }

  const std::vector<VehicleRecord>& vehicles() const { return records_; }
  const std::vector<double>& arrival_times() const { return arrival_times_; }
  std::size_t spawned() const { return spawned_; }
  std::size_t exited() const { return exited_; }
  std::size_t present() const { return lane_.size(); }

  /// Advances one frame and returns the flow samples of the new frame.
  FrameBatch step() {
    const double t = time();
    const double dt = this->dt();
    const double t_next = static_cast<double>(frame_ + 1) / cfg_.frame_rate;
    const SignalCycle* green_cycle = green_cycle_at(t);
    if (green_cycle) record_onset(*green_cycle);

    while (next_arrival_ < t_next) {
      pending_.push_back(static_cast<int>(records_.size()));
      VehicleRecord rec;
      rec.id = static_cast<int>(records_.size());
      rec.cls = uniform01(class_rng_) < cfg_.bus_fraction ? VehicleClass::bus : VehicleClass::car;
      rec.arrival_time = next_arrival_;
      records_.push_back(rec);
      arrival_times_.push_back(next_arrival_);
      schedule_next_arrival(next_arrival_);
    }
    spawn_pending(t);

    FrameBatch batch{frame_ + 1, {}};
    const auto& dep = cfg_.departure_roi;
    for (std::size_t i = 0; i < lane_.size(); ++i) {
      auto& v = lane_[i];
      const VehicleSpec& spec = spec_of(v);
      double limit = std::numeric_limits<double>::infinity();
      if (i > 0) limit = lane_[i - 1].front - spec_of(lane_[i - 1]).length - cfg_.min_gap;
      if (!green_cycle && v.front <= cfg_.stop_line_x + 1e-9) limit = std::min(limit, cfg_.stop_line_x);

      const double old_front = v.front;
      if (!v.moving) {
        if (limit > v.front + 1e-9) {
          if (!v.release_at) v.release_at = t + spec.start_headway;
          if (t_next >= *v.release_at - 1e-9) {
            v.moving = true;
            v.release_at.reset();
          }
        } else {
          v.release_at.reset();
        }
      }
      if (v.moving) {
        const double target = std::min(v.front + spec.cruise_speed * dt, limit);
        if (target <= v.front + 1e-9) {
          v.moving = false;
        } else {
          v.front = target;
        }
      }

      auto& rec = records_[static_cast<std::size_t>(v.id)];
      const bool displaced = v.front > old_front;
      if (!displaced && v.front <= cfg_.stop_line_x) rec.stopped = true;
      const double old_c = old_front - spec.length / 2.0;
      const double new_c = v.front - spec.length / 2.0;
      if (!rec.departure_time && old_c < dep.x_min() && new_c >= dep.x_min())
        rec.departure_time = t + dt * (dep.x_min() - old_c) / (new_c - old_c);
      if (displaced) emit(v, spec, batch);
    }

    while (!lane_.empty() && lane_.front().front - spec_of(lane_.front()).length > cfg_.lane_end_x) {
      records_[static_cast<std::size_t>(lane_.front().id)].exited = true;
      lane_.pop_front();
      ++exited_;
    }
    ++frame_;
    return batch;
  }

  // Runs until the simulation clock reaches `t_end`, forwarding every frame.
  template <class Sink>
  void run_until(double t_end, Sink&& sink) {
    while (time() < t_end - 1e-9) sink(step());
  }

  CycleGroundTruth ground_truth(int cycle) const {
    const auto& cyc = timeline_[static_cast<std::size_t>(cycle - 1)];
    CycleGroundTruth gt;
    gt.cycle = cycle;
    if (auto it = onset_queue_.find(cycle); it != onset_queue_.end()) {
      gt.queue_vehicles = static_cast<int>(it->second.size());
      for (int id : it->second) {
        const auto& r = records_[static_cast<std::size_t>(id)];
        if (r.cls == VehicleClass::bus) ++gt.queue_buses;
        if (r.departure_time && *r.departure_time < cyc.end()) {
          gt.clearance_true = std::max(gt.clearance_true, *r.departure_time - cyc.t_s);
        } else {
          gt.cleared = false;
        }
      }
    }
    if (!gt.cleared) gt.clearance_true = cyc.green;
    for (double a : arrival_times_)
      if (cyc.contains(a)) ++gt.arrivals;
    for (const auto& r : records_)
      if (r.departure_time && cyc.contains(*r.departure_time)) ++gt.departures;
    gt.lambda_true_window = gt.arrivals / cyc.duration();
    return gt;
  }

 private:
  struct Vehicle {
    int id = 0;
    VehicleClass cls = VehicleClass::car;
    double front = 0.0;
    bool moving = true;
    std::optional<double> release_at;
  };

  const VehicleSpec& spec_of(const Vehicle& v) const { return v.cls == VehicleClass::bus ? cfg_.bus : cfg_.car; }

  const SignalCycle* green_cycle_at(double t) const {
    for (const auto& c : timeline_.cycles())
      if (t >= c.t_s && t < c.t_s + c.green) return &c;
    return nullptr;
  }

  void record_onset(const SignalCycle& c) {
    if (onset_queue_.contains(c.index)) return;
    auto& q = onset_queue_[c.index];
    for (const auto& v : lane_)
      if (!v.moving && v.front <= cfg_.stop_line_x + 1e-9) q.push_back(v.id);
  }

  double rate_at(double t, double* next_change) const {
    double rate = cfg_.lambda_true;
    *next_change = std::numeric_limits<double>::infinity();
    for (const auto& s : cfg_.rate_steps) {
      if (s.t <= t) {
        rate = s.rate;
      } else {
        *next_change = s.t;
        break;
      }
    }
    return rate;
  }

  void schedule_next_arrival(double from) {
    next_arrival_ = std::numeric_limits<double>::infinity();
    if (!cfg_.arrivals_enabled) return;
    if (!cfg_.scripted_arrivals.empty()) {
      if (script_pos_ < cfg_.scripted_arrivals.size()) next_arrival_ = cfg_.scripted_arrivals[script_pos_++];
      return;
    }
    double t0 = from;
    while (std::isfinite(t0)) {
      double boundary = 0.0;
      const double rate = rate_at(t0, &boundary);
      if (rate > 0.0) {
        const double gap = cfg_.arrival_process == ArrivalProcess::poisson ? sample_interarrival(arrival_rng_, rate)
                                                                           : 1.0 / rate;
        if (t0 + gap < boundary) {
          next_arrival_ = t0 + gap;
          return;
        }
      }
      t0 = boundary;
    }
  }

  void spawn_pending(double t) {
    while (!pending_.empty()) {
      const int id = pending_.front();
      auto& rec = records_[static_cast<std::size_t>(id)];
      Vehicle v{id, rec.cls, 0.0, true, {}};
      const VehicleSpec& spec = spec_of(v);
      double front = spec.cruise_speed * (t - rec.arrival_time);
      if (!lane_.empty()) {
        const double limit = lane_.back().front - spec_of(lane_.back()).length - cfg_.min_gap;
        if (limit < std::min(front, 0.0)) return;
        front = std::min(front, limit);
      }
      v.front = front;
      rec.spawn_time = t;
      lane_.push_back(v);
      pending_.pop_front();
      ++spawned_;
    }
  }

  void emit(const Vehicle& v, const VehicleSpec& spec, FrameBatch& batch) {
    const double s = cfg_.obs_grid_spacing;
    const auto nx = static_cast<int>(std::floor(spec.length / s + 1e-9)) + 1;
    const auto ny = static_cast<int>(std::floor(spec.width / s + 1e-9)) + 1;
    const double rear = v.front - spec.length;
    const double y0 = cfg_.lane_y - spec.width / 2.0;
    std::normal_distribution<double> noise(0.0, cfg_.direction_noise_sd);
    for (int i = 0; i < nx; ++i)
      for (int j = 0; j < ny; ++j) {
        const double angle = cfg_.heading + (cfg_.direction_noise_sd > 0.0 ? noise(noise_rng_) : 0.0);
        batch.observations.push_back(make_observation(batch.frame, rear + i * s, y0 + j * s, angle, cfg_.direction_bins));
      }
  }

  SimConfig cfg_;
  double warmup_red_;
  Rng arrival_rng_, class_rng_, noise_rng_;
  SignalTimeline timeline_;
  std::deque<Vehicle> lane_;
  std::deque<int> pending_;
  std::vector<VehicleRecord> records_;
  std::vector<double> arrival_times_;
  std::map<int, std::vector<int>> onset_queue_;
  double next_arrival_ = std::numeric_limits<double>::infinity();
  std::size_t script_pos_ = 0;
  std::int64_t frame_ = 0;
  std::size_t spawned_ = 0;
  std::size_t exited_ = 0;
};

inline constexpr std::string_view kGroundTruthHeader = "cycle,queue_len,clearance_true,lambda_true_window";

inline void write_ground_truth(std::ostream& out, std::span<const CycleGroundTruth> rows) {
  out << kGroundTruthHeader << '\n';
  for (const auto& g : rows)
    out << g.cycle << ',' << g.queue_vehicles << ',' << csv::fmt(g.clearance_true) << ','
        << csv::fmt(g.lambda_true_window) << '\n';
}

}  // namespace qsignal::sim
