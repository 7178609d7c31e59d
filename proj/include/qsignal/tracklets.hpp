#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <ostream>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "qsignal/csv.hpp"
#include "qsignal/dpmm.hpp"
#include "qsignal/error.hpp"
#include "qsignal/flowmodel.hpp"

namespace qsignal {

using dpmm::Label;

struct TrackPoint {
  double x = 0.0;
  double y = 0.0;
  int bin = 0;
  double t = 0.0;  // seconds
};

struct Tracklet {
  Label label = 0;
  std::vector<TrackPoint> points;
  std::optional<double> t_a;  // first entry into the Arrival-ROI
  std::optional<double> t_d;  // first entry into the Departure-ROI
  bool closed = false;

  std::size_t length() const { return points.size(); }
};

enum class TrackletKind { FreeFlow, Queuing, QueueClearing };

inline std::string_view to_string(TrackletKind k) {
  switch (k) {
    case TrackletKind::FreeFlow: return "free_flow";
    case TrackletKind::Queuing: return "queuing";
    case TrackletKind::QueueClearing: return "queue_clearing";
  }
  return "?";
}

enum class RoiKind { arrival, departure };

struct RoiEvent {
  Label label = 0;
  RoiKind kind = RoiKind::arrival;
  double t = 0.0;
};

// Flags only: the view of a tracklet the rate estimators consume.
struct FlaggedTracklet {
  Label label = 0;
  std::optional<double> t_a;
  std::optional<double> t_d;
};

class TrackletRegistry {
 public:
  const std::map<Label, Tracklet>& tracklets() const { return tracklets_; }

  const Tracklet* find(Label l) const {
    auto it = tracklets_.find(l);
    return it == tracklets_.end() ? nullptr : &it->second;
  }

  /// Appends the center of every live cluster at time t. Labels absent from
  /// the registry start new tracklets.
  void extend(const std::map<Label, dpmm::ClusterState>& clusters, double t, int bins = kDefaultDirectionBins) {
    for (const auto& [label, c] : clusters) {
      auto [it, inserted] = tracklets_.try_emplace(label);
      auto& tr = it->second;
      if (inserted) tr.label = label;
      if (tr.closed) continue;
      if (!tr.points.empty() && !(t > tr.points.back().t))
        throw InvalidInput("extend_tracklets: time does not advance for label " + std::to_string(label));
      const double angle = std::atan2(c.mean[3], c.mean[2]);
      tr.points.push_back({c.mean[0], c.mean[1], quantize_direction(angle, bins).bin, t});
      pending_.insert(label);
    }
  }

  void close(std::span<const Label> labels) {
    for (Label l : labels)
      if (auto it = tracklets_.find(l); it != tracklets_.end()) it->second.closed = true;
  }

  void close_all() {
    for (auto& [l, tr] : tracklets_) tr.closed = true;
  }

  /// Scans consecutive centers not yet examined and sets t_a / t_d on the
  /// first entry into each ROI. Returns the newly set flags.
  std::vector<RoiEvent> flag_roi_events(const Roi& arrival, const Roi& departure) {
    if (arrival.overlaps(departure)) throw ConfigError("roi", "Arrival-ROI and Departure-ROI must be disjoint");
    std::vector<RoiEvent> events;
    for (Label label : pending_) {
      auto& tr = tracklets_.at(label);
      auto& scanned = scanned_[label];
      for (std::size_t i = std::max<std::size_t>(scanned, 1); i < tr.points.size(); ++i) {
        const auto& a = tr.points[i - 1];
        const auto& b = tr.points[i];
        if (!tr.t_a && roi_crossing_test({a.x, a.y}, {b.x, b.y}, arrival) == RoiCrossing::entered) {
          tr.t_a = b.t;
          events.push_back({label, RoiKind::arrival, b.t});
        }
        if (!tr.t_d && roi_crossing_test({a.x, a.y}, {b.x, b.y}, departure) == RoiCrossing::entered) {
          tr.t_d = b.t;
          events.push_back({label, RoiKind::departure, b.t});
        }
      }
      scanned = tr.points.size();
    }
    pending_.clear();
    return events;
  }

  std::vector<FlaggedTracklet> flagged() const {
    std::vector<FlaggedTracklet> out;
    for (const auto& [l, tr] : tracklets_)
      if (tr.t_a || tr.t_d) out.push_back({l, tr.t_a, tr.t_d});
    return out;
  }

 private:
  std::map<Label, Tracklet> tracklets_;
  std::map<Label, std::size_t> scanned_;
  std::set<Label> pending_;  // labels with points not yet scanned for ROI entries
};

struct GreenInterval {
  double start = 0.0;
  double end = 0.0;
};

struct StationaryRule {
  double v_stop = 0.5;  // px/s
  double window = 1.0;  // s
};

/// Labels a closed tracklet by whether it stood still while the signal was red
/// and whether it then departed after the following green onset.
inline TrackletKind classify_tracklet(const Tracklet& tr, std::span<const GreenInterval> greens,
                                      StationaryRule rule = {}) {
  if (greens.empty()) throw ConfigError("signal", "classification needs a signal schedule");
  if (!tr.closed) throw InvalidInput("classify_tracklet: tracklet " + std::to_string(tr.label) + " is still open");

  auto in_green = [&](double t) {
    return std::any_of(greens.begin(), greens.end(), [t](const GreenInterval& g) { return t >= g.start && t < g.end; });
  };

  std::optional<double> stopped_in_red;
  const auto& p = tr.points;
  std::size_t j = 0;
  for (std::size_t i = 0; i < p.size() && !stopped_in_red; ++i) {
    j = std::max(j, i + 1);
    while (j < p.size() && p[j].t - p[i].t < rule.window - 1e-9) ++j;
    if (j >= p.size()) break;
    const double dt = p[j].t - p[i].t;
    const double speed = std::hypot(p[j].x - p[i].x, p[j].y - p[i].y) / dt;
    if (speed < rule.v_stop && !in_green(p[i].t)) stopped_in_red = p[i].t;
  }
  if (!stopped_in_red) return TrackletKind::FreeFlow;

  std::optional<double> next_green;
  for (const auto& g : greens)
    if (g.start > *stopped_in_red && (!next_green || g.start < *next_green)) next_green = g.start;
  if (tr.t_d && next_green && *tr.t_d >= *next_green) return TrackletKind::QueueClearing;
  return TrackletKind::Queuing;
}

inline constexpr std::string_view kTrackletHeader = "label,t,x,y,bin";
inline constexpr std::string_view kTrackletSummaryHeader = "label,t_a,t_d,kind";

inline void write_tracklets(std::ostream& out, const TrackletRegistry& reg) {
  out << kTrackletHeader << '\n';
  for (const auto& [l, tr] : reg.tracklets())
    for (const auto& pt : tr.points)
      out << l << ',' << csv::fmt(pt.t) << ',' << csv::fmt(pt.x) << ',' << csv::fmt(pt.y) << ',' << pt.bin << '\n';
}

// Closed tracklets only; open ones have no kind yet.
inline void write_tracklet_summary(std::ostream& out, const TrackletRegistry& reg,
                                   std::span<const GreenInterval> greens) {
  out << kTrackletSummaryHeader << '\n';
  for (const auto& [l, tr] : reg.tracklets()) {
    if (!tr.closed) continue;
    out << l << ',' << csv::fmt(tr.t_a) << ',' << csv::fmt(tr.t_d) << ',' << to_string(classify_tracklet(tr, greens))
        << '\n';
  }
}

}  // namespace qsignal
