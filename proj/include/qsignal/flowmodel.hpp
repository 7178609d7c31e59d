#pragma once

// Observation and region-of-interest data model, plus the observation CSV
// reader/writer shared by the simulator exporter and the offline pipeline.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "qsignal/csv.hpp"
#include "qsignal/error.hpp"

namespace qsignal {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr int kDefaultDirectionBins = 8;

struct QuantizedDirection {
  int bin = 0;
  std::array<double, 2> unit{1.0, 0.0};
};

/// Maps an angle (radians, any real) to one of `bins` equal sectors centered
/// on multiples of 2*pi/bins, returning the sector index and its center
/// direction.
inline QuantizedDirection quantize_direction(double angle, int bins) {
  if (bins < 1) throw InvalidInput("quantize_direction: bins must be >= 1");
  if (!std::isfinite(angle)) throw InvalidInput("quantize_direction: angle is not finite");
  const double width = kTwoPi / bins;
  double reduced = std::fmod(angle, kTwoPi);
  if (reduced < 0.0) reduced += kTwoPi;
  auto bin = static_cast<int>(std::floor((reduced + width / 2.0) / width)) % bins;
  const double center = bin * width;
  return {bin, {std::cos(center), std::sin(center)}};
}

struct ObservationPoint {
  std::int64_t frame = 0;
  double x = 0.0;
  double y = 0.0;
  double angle = 0.0;  // raw flow angle as ingested, radians
  int direction_bin = 0;
  std::array<double, 2> direction_vec{1.0, 0.0};

  friend bool operator==(const ObservationPoint&, const ObservationPoint&) = default;
};

inline ObservationPoint make_observation(std::int64_t frame, double x, double y, double angle,
                                         int bins = kDefaultDirectionBins) {
  if (frame < 0) throw InvalidInput("observation frame must be >= 0");
  if (!std::isfinite(x) || !std::isfinite(y)) throw InvalidInput("observation position is not finite");
  auto q = quantize_direction(angle, bins);
  return {frame, x, y, angle, q.bin, q.unit};
}

struct FrameBatch {
  std::int64_t frame = 0;
  std::vector<ObservationPoint> observations;

  friend bool operator==(const FrameBatch&, const FrameBatch&) = default;
};

// Axis-aligned rectangle; containment is closed on all sides.
class Roi {
 public:
  Roi(double x_min, double y_min, double x_max, double y_max)
      : x_min_(x_min), y_min_(y_min), x_max_(x_max), y_max_(y_max) {
    if (!(x_min < x_max) || !(y_min < y_max)) throw InvalidInput("Roi requires x_min < x_max and y_min < y_max");
  }

  double x_min() const { return x_min_; }
  double y_min() const { return y_min_; }
  double x_max() const { return x_max_; }
  double y_max() const { return y_max_; }

  bool contains(double x, double y) const {
    return x >= x_min_ && x <= x_max_ && y >= y_min_ && y <= y_max_;
  }

  bool overlaps(const Roi& o) const {
    return x_min_ <= o.x_max_ && o.x_min_ <= x_max_ && y_min_ <= o.y_max_ && o.y_min_ <= y_max_;
  }

  friend bool operator==(const Roi&, const Roi&) = default;

 private:
  double x_min_, y_min_, x_max_, y_max_;
};

enum class RoiCrossing { none, entered, exited };

inline RoiCrossing roi_crossing_test(std::array<double, 2> prev, std::array<double, 2> cur, const Roi& roi) {
  const bool was_in = roi.contains(prev[0], prev[1]);
  const bool is_in = roi.contains(cur[0], cur[1]);
  if (!was_in && is_in) return RoiCrossing::entered;
  if (was_in && !is_in) return RoiCrossing::exited;
  return RoiCrossing::none;
}

inline constexpr std::string_view kObservationHeader = "frame,x,y,angle_rad";

/// Parses an observation stream. Rows of equal frame are grouped into one
/// batch; a frame index lower than its predecessor is an OrderingError.
inline std::vector<FrameBatch> read_observations(std::istream& in, int bins = kDefaultDirectionBins) {
  csv::expect_header(in, kObservationHeader);
  std::vector<FrameBatch> batches;
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (csv::trim(line).empty()) continue;
    auto f = csv::split(line);
    if (f.size() != 4) throw ParseError(lineno, "expected 4 fields, got " + std::to_string(f.size()));
    const auto frame = csv::require_int(f[0], lineno, "frame");
    const double x = csv::require_double(f[1], lineno, "x");
    const double y = csv::require_double(f[2], lineno, "y");
    const double angle = csv::require_double(f[3], lineno, "angle_rad");
    if (frame < 0) throw ParseError(lineno, "negative frame index");
    if (!batches.empty() && frame < batches.back().frame)
      throw OrderingError("line " + std::to_string(lineno) + ": frame " + std::to_string(frame) +
                          " follows frame " + std::to_string(batches.back().frame));
    ObservationPoint obs;
    try {
      obs = make_observation(frame, x, y, angle, bins);
    } catch (const InvalidInput& e) {
      throw ParseError(lineno, e.what());
    }
    if (batches.empty() || batches.back().frame != frame) batches.push_back({frame, {}});
    batches.back().observations.push_back(obs);
  }
  return batches;
}

inline std::vector<FrameBatch> load_observations(const std::string& path, int bins = kDefaultDirectionBins) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open observation file '" + path + "'");
  return read_observations(in, bins);
}

inline void write_observation_header(std::ostream& out) { out << kObservationHeader << '\n'; }

inline void write_observations(std::ostream& out, const FrameBatch& batch) {
  for (const auto& o : batch.observations)
    out << o.frame << ',' << csv::fmt(o.x) << ',' << csv::fmt(o.y) << ',' << csv::fmt(o.angle) << '\n';
}

inline void save_observations(std::ostream& out, std::span<const FrameBatch> batches) {
  write_observation_header(out);
  for (const auto& b : batches) write_observations(out, b);
}

inline void save_observations(const std::string& path, std::span<const FrameBatch> batches) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write observation file '" + path + "'");
  save_observations(out, batches);
}

}  // namespace qsignal
