#pragma once

// Next-cycle green-time prediction for a single approach and the closed-loop
// controller that learns the departure-rate curve over a few fixed-time
// cycles before it starts predicting.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "qsignal/csv.hpp"
#include "qsignal/error.hpp"
#include "qsignal/rates.hpp"

namespace qsignal {

// What the error-correction term is scaled by. The worked QMUL example uses
// the measured queue clearance time; the printed formula uses the green time.
enum class CorrectionBasis { queue_clearance, green_duration };
enum class LambdaSource { departure, arrival };

struct PredictorConfig {
  double gamma = 2.0;
  double T_s = 20.0;
  int C = 4;
  int t_max = 12;
  double T_m_fixed = 55.0;
  double T_cycle = 94.0;
  double min_green = 5.0;
  double sigma = 1.0;
  CorrectionBasis correction = CorrectionBasis::queue_clearance;
  LambdaSource lambda_source = LambdaSource::departure;

  void validate() const {
    if (!(gamma > 1.0)) throw ConfigError("gamma", "must satisfy gamma > 1 (got " + csv::fmt(gamma) + ")");
    if (!(T_s > 0.0)) throw ConfigError("t_s", "must be > 0");
    if (C < 1) throw ConfigError("cycles", "must be >= 1");
    if (t_max < 1) throw ConfigError("t_max", "must be >= 1");
    if (!(sigma > 0.0)) throw ConfigError("sigma", "must be > 0");
    if (!(min_green > 0.0)) throw ConfigError("min_green", "must be > 0");
    if (!(T_cycle > 0.0)) throw ConfigError("t_cycle", "must be > 0");
    if (!(T_m_fixed > 0.0) || !(T_m_fixed < T_cycle))
      throw ConfigError("t_m_fixed", "must satisfy 0 < t_m_fixed < t_cycle");
  }
};

struct RateEstimate {
  double mu_e = 0.0;
  double lambda_e = 0.0;
};

// Measured rates of this cycle serve as the estimates for the next one.
inline RateEstimate estimate_next_rates(double mu_a, double lambda_a) { return {mu_a, lambda_a}; }

inline double predict_queue_clearance(double lambda_e, double T_mr, double mu_e) {
  if (!(mu_e > 0.0)) throw DegenerateService("predict_queue_clearance: departure rate must be > 0");
  return lambda_e * T_mr / mu_e;
}

inline double predict_free_flow(double T_mq_next, double gamma, double T_s) {
  if (!(gamma > 1.0)) throw ConfigError("gamma", "must satisfy gamma > 1 (got " + csv::fmt(gamma) + ")");
  return T_mq_next * gamma + T_s;
}

// Relative arrival-rate surprise scaled by `basis` seconds; zero without traffic.
inline double correction_term(double lambda_a, double lambda_e, double basis) {
  if (lambda_a == 0.0) return 0.0;
  return (lambda_a - lambda_e) / lambda_a * basis;
}

struct DurationComponents {
  double T_mq = 0.0;
  double T_mf = 0.0;
  double delta_t = 0.0;

  double sum() const { return T_mq + T_mf + delta_t; }
};

inline double predict_signal_duration(const DurationComponents& c, double min_green) {
  return std::max(c.sum(), min_green);
}

// Fixed cycle length with a strictly positive red remainder.
inline bool check_criteria(double T_m_next, const PredictorConfig& config) { return T_m_next < config.T_cycle; }

// Acceptance rule for a prediction. A throughput objective over several
// approaches would plug in here; the default is the single-approach rule.
using CriteriaFn = std::function<bool(double T_m_next, const PredictorConfig&)>;

struct Prediction {
  double T_mq_next = 0.0;
  double T_mf_next = 0.0;
  double delta_t = 0.0;
  double T_m_next = 0.0;  // after the min_green floor
};

struct SignalCycleRecord {
  int c = 0;
  double T_m = 0.0;
  double T_mr = 0.0;
  std::optional<double> T_mq_measured;
  double lambda_a = 0.0;
  std::optional<double> mu_a;
  double lambda_e = 0.0;  // estimate that was in force during this cycle
  std::optional<RateEstimate> next_estimate;
  std::optional<Prediction> prediction;
  double T_m_commanded = 0.0;  // green actually scheduled for cycle c + 1
  bool criteria = false;
  bool learning = false;
  bool measurement_available = true;
};

struct CycleEvents {
  SignalCycle cycle;
  std::vector<FlaggedTracklet> tracklets;
};

/// Cycle-by-cycle controller. Feed each completed cycle to complete_cycle();
/// green_for_next_cycle() is the duration to schedule next.
class AdaptiveController {
 public:
  explicit AdaptiveController(PredictorConfig config, CriteriaFn criteria = check_criteria)
      : config_(config), criteria_(std::move(criteria)), next_green_(config.T_m_fixed) {
    config_.validate();
  }

  // Uses a previously learned curve and skips learning from data points.
  AdaptiveController(PredictorConfig config, MuCurve curve, CriteriaFn criteria = check_criteria)
      : AdaptiveController(config, std::move(criteria)) {
    curve_ = std::move(curve);
  }

  const PredictorConfig& config() const { return config_; }
  double green_for_next_cycle() const { return next_green_; }
  const std::optional<MuCurve>& mu_curve() const { return curve_; }
  const std::vector<MuDataPoint>& mu_points() const { return points_; }
  const std::vector<SignalCycleRecord>& records() const { return records_; }

  SignalCycleRecord complete_cycle(const CycleEvents& ev) {
    const auto& cyc = ev.cycle;
    SignalCycleRecord rec;
    rec.c = static_cast<int>(records_.size()) + 1;
    rec.T_m = cyc.green;
    rec.T_mr = cyc.red;
    rec.learning = rec.c <= config_.C || !curve_;

    try {
      rec.T_mq_measured = measure_queue_clearance(ev.tracklets, cyc);
    } catch (const MeasurementUnavailable&) {
      rec.measurement_available = false;
    }
    rec.lambda_a = measure_rate(ev.tracklets, cyc, rec.T_mq_measured);
    // Only a cycle that got past its queue measured stable flow, so only such
    // cycles move the arrival-rate estimate.
    rec.lambda_e = lambda_estimate_.value_or(rec.lambda_a);
    if (rec.measurement_available) lambda_estimate_ = rec.lambda_a;

    // Learning runs for C cycles, and on past C until a queue has been seen.
    if (!curve_) {
      auto pts = mu_datapoints_from_cycles(ev.tracklets, single_cycle(cyc), 1);
      points_.insert(points_.end(), pts.begin(), pts.end());
      if (rec.c >= config_.C && !points_.empty()) curve_ = build_mu_curve(points_, config_.t_max, config_.sigma);
    }

    rec.T_m_commanded = cyc.green;
    if (rec.c >= config_.C && curve_ && rec.measurement_available) {
      rec.mu_a = lookup_mu(*curve_, *rec.T_mq_measured);
      const auto est = estimate_next_rates(*rec.mu_a, rec.lambda_a);
      rec.next_estimate = est;
      Prediction p;
      p.T_mq_next = predict_queue_clearance(est.lambda_e, cyc.red, est.mu_e);
      p.T_mf_next = predict_free_flow(p.T_mq_next, config_.gamma, config_.T_s);
      const double basis =
          config_.correction == CorrectionBasis::queue_clearance ? *rec.T_mq_measured : cyc.green;
      p.delta_t = correction_term(rec.lambda_a, rec.lambda_e, basis);
      p.T_m_next = predict_signal_duration({p.T_mq_next, p.T_mf_next, p.delta_t}, config_.min_green);
      rec.prediction = p;
      rec.criteria = criteria_(p.T_m_next, config_);
      if (rec.criteria) rec.T_m_commanded = p.T_m_next;
    } else if (rec.c < config_.C || !curve_ || !rec.measurement_available) {
      // Still learning, or the queue outlasted the green: back to the fixed plan.
      rec.T_m_commanded = config_.T_m_fixed;
    }

    next_green_ = rec.T_m_commanded;
    records_.push_back(rec);
    return rec;
  }

 private:
  static SignalTimeline single_cycle(const SignalCycle& c) {
    SignalTimeline tl;
    tl.append(c.t_s, c.green, c.red);
    return tl;
  }

  // Stable segment: the closing T_s seconds of green, cut back so that it
  // starts no earlier than the measured queue clearance. A green that never
  // got past its queue is counted whole.
  double measure_rate(std::span<const FlaggedTracklet> events, const SignalCycle& cyc,
                      std::optional<double> T_mq) const {
    const double end = cyc.t_s + cyc.green;
    double start = end - std::min(config_.T_s, cyc.green);
    if (T_mq) start = std::max(start, cyc.t_s + *T_mq);
    if (!(end - start > 0.0)) start = cyc.t_s;
    const double window = end - start;
    return config_.lambda_source == LambdaSource::departure ? measure_lambda(events, start, window)
                                                            : measure_lambda_arrival(events, start, window);
  }

  PredictorConfig config_;
  CriteriaFn criteria_;
  std::optional<MuCurve> curve_;
  std::vector<MuDataPoint> points_;
  std::vector<SignalCycleRecord> records_;
  std::optional<double> lambda_estimate_;
  double next_green_;
};

/// Drives a controller against a cycle source for n cycles. The source is
/// called as source(green, red) and must return the events of the cycle it
/// ran with those durations.
template <class Source>
std::vector<SignalCycleRecord> adaptive_loop(Source&& source, AdaptiveController& controller, int n_cycles) {
  std::vector<SignalCycleRecord> out;
  for (int i = 0; i < n_cycles; ++i) {
    const double green = controller.green_for_next_cycle();
    const double red = controller.config().T_cycle - green;
    CycleEvents ev = source(green, red);
    out.push_back(controller.complete_cycle(ev));
  }
  return out;
}

inline constexpr std::string_view kCycleLogHeader =
    "c,T_m,T_mr,T_mq_measured,lambda_a,mu_a,T_mq_pred,T_mf_pred,delta_t,T_m_next,criteria";

inline void write_cycle_log(std::ostream& out, std::span<const SignalCycleRecord> records) {
  out << kCycleLogHeader << '\n';
  for (const auto& r : records) {
    out << r.c << ',' << csv::fmt(r.T_m) << ',' << csv::fmt(r.T_mr) << ',' << csv::fmt(r.T_mq_measured) << ','
        << csv::fmt(r.lambda_a) << ',' << csv::fmt(r.mu_a) << ',';
    if (r.prediction)
      out << csv::fmt(r.prediction->T_mq_next) << ',' << csv::fmt(r.prediction->T_mf_next) << ','
          << csv::fmt(r.prediction->delta_t) << ',';
    else
      out << ",,,";
    out << csv::fmt(r.T_m_commanded) << ',' << (r.criteria ? 1 : 0) << '\n';
  }
}

}  // namespace qsignal
