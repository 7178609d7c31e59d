#pragma once

// Arrival/departure rate measurement from flagged tracklets and the learned
// departure-rate curve (departure rate as a function of queue clearance time).

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "qsignal/csv.hpp"
#include "qsignal/error.hpp"
#include "qsignal/tracklets.hpp"

namespace qsignal {

struct MuDataPoint {
  double t_p = 0.0;    // queue clearance time, s
  double mu_tp = 0.0;  // departure rate, clusters/s
};

struct MuCurve {
  std::vector<double> values;  // values[t - 1] = mu(t), t = 1..t_max
  double sigma = 1.0;
  int t_max = 0;

  double at(int t) const { return values.at(static_cast<std::size_t>(t - 1)); }
};

struct SignalCycle {
  int index = 0;       // 1-based
  double t_s = 0.0;    // green onset, s
  double green = 0.0;  // T_m^c
  double red = 0.0;    // T_mr^c

  double duration() const { return green + red; }
  double end() const { return t_s + green + red; }
  bool contains(double t) const { return t >= t_s && t < end(); }
};

class SignalTimeline {
 public:
  const std::vector<SignalCycle>& cycles() const { return cycles_; }
  std::size_t size() const { return cycles_.size(); }
  bool empty() const { return cycles_.empty(); }
  const SignalCycle& operator[](std::size_t i) const { return cycles_.at(i); }
  const SignalCycle& back() const { return cycles_.back(); }

  const SignalCycle& append(double t_s, double green, double red) {
    if (!(green > 0.0) || !(red > 0.0)) throw InvalidInput("signal cycle durations must be > 0");
    if (!cycles_.empty() && t_s < cycles_.back().end() - 1e-9)
      throw InvalidInput("signal cycles must be ordered and non-overlapping");
    cycles_.push_back({static_cast<int>(cycles_.size()) + 1, t_s, green, red});
    return cycles_.back();
  }

  // Appends a cycle starting right where the previous one ended.
  const SignalCycle& append_next(double green, double red, double first_start = 0.0) {
    return append(cycles_.empty() ? first_start : cycles_.back().end(), green, red);
  }

  std::vector<GreenInterval> greens() const {
    std::vector<GreenInterval> g;
    for (const auto& c : cycles_) g.push_back({c.t_s, c.t_s + c.green});
    return g;
  }

  static SignalTimeline fixed(double first_start, double green, double cycle_length, int n) {
    SignalTimeline tl;
    for (int i = 0; i < n; ++i) tl.append_next(green, cycle_length - green, first_start);
    return tl;
  }

 private:
  std::vector<SignalCycle> cycles_;
};

/// Tracklets whose Departure-ROI entry falls inside the cycle, ordered by
/// departure time (ties by label).
inline std::vector<FlaggedTracklet> departures_in_cycle(std::span<const FlaggedTracklet> events,
                                                        const SignalCycle& cycle) {
  std::vector<FlaggedTracklet> out;
  for (const auto& e : events)
    if (e.t_d && cycle.contains(*e.t_d)) out.push_back(e);
  std::sort(out.begin(), out.end(), [](const FlaggedTracklet& a, const FlaggedTracklet& b) {
    return *a.t_d != *b.t_d ? *a.t_d < *b.t_d : a.label < b.label;
  });
  return out;
}

// Index of the first departure that also carries an arrival flag.
inline std::optional<std::size_t> first_through_tracklet(std::span<const FlaggedTracklet> ordered) {
  for (std::size_t i = 0; i < ordered.size(); ++i)
    if (ordered[i].t_a) return i;
  return std::nullopt;
}

/// Data points (t_l, l / (t_l - t_s)) for every queued departure preceding the
/// first through-tracklet, pooled over the first `cycles` cycles. A cycle
/// without a through-tracklet cannot delimit its queue and contributes nothing.
inline std::vector<MuDataPoint> mu_datapoints_from_cycles(std::span<const FlaggedTracklet> events,
                                                          const SignalTimeline& timeline, int cycles) {
  if (cycles < 1) throw InvalidInput("mu_datapoints_from_cycles: cycles must be >= 1");
  if (timeline.size() < static_cast<std::size_t>(cycles))
    throw InvalidInput("mu_datapoints_from_cycles: timeline has " + std::to_string(timeline.size()) +
                       " cycles, need " + std::to_string(cycles));
  std::vector<MuDataPoint> points;
  for (int c = 0; c < cycles; ++c) {
    const auto& cycle = timeline[static_cast<std::size_t>(c)];
    const auto ordered = departures_in_cycle(events, cycle);
    const auto through = first_through_tracklet(ordered);
    if (!through) continue;
    for (std::size_t l = 1; l <= *through; ++l) {
      const double t_l = *ordered[l - 1].t_d;
      if (!(t_l > cycle.t_s))
        throw DataError("departure at " + csv::fmt(t_l) + " does not follow green onset " + csv::fmt(cycle.t_s));
      const double elapsed = t_l - cycle.t_s;
      points.push_back({elapsed, static_cast<double>(l) / elapsed});
    }
  }
  return points;
}

/// Gaussian-kernel (Nadaraya-Watson) estimate of mu at time t.
inline double kernel_mu(std::span<const MuDataPoint> points, double sigma, double t) {
  if (points.empty()) throw NoDataError("kernel_mu: no data points");
  if (!(sigma > 0.0)) throw InvalidInput("kernel_mu: sigma must be > 0");
  // Shifting every exponent by the smallest squared distance leaves the ratio
  // unchanged and keeps the nearest point's weight at 1, so far-away t cannot
  // underflow to 0/0.
  double d2_min = std::numeric_limits<double>::infinity();
  for (const auto& p : points) d2_min = std::min(d2_min, (p.t_p - t) * (p.t_p - t));
  double num = 0.0, den = 0.0;
  for (const auto& p : points) {
    const double k = std::exp(-((p.t_p - t) * (p.t_p - t) - d2_min) / (2.0 * sigma * sigma));
    num += k * p.mu_tp;
    den += k;
  }
  return num / den;
}

inline MuCurve build_mu_curve(std::span<const MuDataPoint> points, int t_max, double sigma) {
  if (t_max < 1) throw InvalidInput("build_mu_curve: t_max must be >= 1");
  MuCurve curve{{}, sigma, t_max};
  curve.values.reserve(static_cast<std::size_t>(t_max));
  for (int t = 1; t <= t_max; ++t) curve.values.push_back(kernel_mu(points, sigma, t));
  return curve;
}

/// Green-onset-relative departure time of the last queued tracklet before the
/// first through-tracklet; 0 when the through-tracklet leads, or when the cycle
/// saw no departures at all (nothing queued).
inline double measure_queue_clearance(std::span<const FlaggedTracklet> events, const SignalCycle& cycle) {
  const auto ordered = departures_in_cycle(events, cycle);
  if (ordered.empty()) return 0.0;
  const auto through = first_through_tracklet(ordered);
  if (!through)
    throw MeasurementUnavailable("cycle " + std::to_string(cycle.index) +
                                 ": no departing tracklet carries an arrival flag");
  if (*through == 0) return 0.0;
  return *ordered[*through - 1].t_d - cycle.t_s;
}

// Departure-ROI entries per second over [window_start, window_start + T_s).
inline double measure_lambda(std::span<const FlaggedTracklet> events, double window_start, double T_s) {
  if (!(T_s > 0.0)) throw InvalidInput("measure_lambda: T_s must be > 0");
  const auto n = std::count_if(events.begin(), events.end(), [&](const FlaggedTracklet& e) {
    return e.t_d && *e.t_d >= window_start && *e.t_d < window_start + T_s;
  });
  return static_cast<double>(n) / T_s;
}

// Same count taken at the Arrival-ROI.
inline double measure_lambda_arrival(std::span<const FlaggedTracklet> events, double window_start, double T_s) {
  if (!(T_s > 0.0)) throw InvalidInput("measure_lambda_arrival: T_s must be > 0");
  const auto n = std::count_if(events.begin(), events.end(), [&](const FlaggedTracklet& e) {
    return e.t_a && *e.t_a >= window_start && *e.t_a < window_start + T_s;
  });
  return static_cast<double>(n) / T_s;
}

inline double lookup_mu(const MuCurve& curve, double T_mq) {
  if (curve.values.empty()) throw NoDataError("lookup_mu: curve is empty");
  const double r = std::round(T_mq);
  const int t = static_cast<int>(std::clamp(r, 1.0, static_cast<double>(curve.t_max)));
  return curve.at(t);
}

inline constexpr std::string_view kMuCurveHeader = "t,mu";
inline constexpr std::string_view kMuPointsHeader = "t_p,mu_tp";
inline constexpr std::string_view kSignalHeader = "cycle,t_s,T_m,T_mr";

inline void write_mu_curve(std::ostream& out, const MuCurve& curve) {
  out << kMuCurveHeader << '\n';
  for (int t = 1; t <= curve.t_max; ++t) out << t << ',' << csv::fmt(curve.at(t)) << '\n';
}

inline MuCurve read_mu_curve(std::istream& in, double sigma = 1.0) {
  csv::expect_header(in, kMuCurveHeader);
  MuCurve curve;
  curve.sigma = sigma;
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (csv::trim(line).empty()) continue;
    auto f = csv::split(line);
    if (f.size() != 2) throw ParseError(lineno, "expected 2 fields");
    const auto t = csv::require_int(f[0], lineno, "t");
    if (t != static_cast<std::int64_t>(curve.values.size()) + 1) throw ParseError(lineno, "t must run 1, 2, ...");
    curve.values.push_back(csv::require_double(f[1], lineno, "mu"));
  }
  if (curve.values.empty()) throw NoDataError("mu curve file has no rows");
  curve.t_max = static_cast<int>(curve.values.size());
  return curve;
}

inline void write_mu_points(std::ostream& out, std::span<const MuDataPoint> points) {
  out << kMuPointsHeader << '\n';
  for (const auto& p : points) out << csv::fmt(p.t_p) << ',' << csv::fmt(p.mu_tp) << '\n';
}

inline void write_signal_timeline(std::ostream& out, const SignalTimeline& tl) {
  out << kSignalHeader << '\n';
  for (const auto& c : tl.cycles())
    out << c.index << ',' << csv::fmt(c.t_s) << ',' << csv::fmt(c.green) << ',' << csv::fmt(c.red) << '\n';
}

inline SignalTimeline read_signal_timeline(std::istream& in) {
  csv::expect_header(in, kSignalHeader);
  SignalTimeline tl;
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (csv::trim(line).empty()) continue;
    auto f = csv::split(line);
    if (f.size() != 4) throw ParseError(lineno, "expected 4 fields");
    const double t_s = csv::require_double(f[1], lineno, "t_s");
    const double g = csv::require_double(f[2], lineno, "T_m");
    const double r = csv::require_double(f[3], lineno, "T_mr");
    try {
      tl.append(t_s, g, r);
    } catch (const InvalidInput& e) {
      throw ParseError(lineno, e.what());
    }
  }
  return tl;
}

}  // namespace qsignal
