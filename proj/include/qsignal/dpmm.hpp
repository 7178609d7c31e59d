#pragma once

// Streaming temporal Dirichlet process mixture over optical-flow samples.
//
// Each frame receives exactly one Gibbs sweep. The cluster state left by the
// previous frame is the prior for the current one, so labels persist from
// frame to frame and trace out tracklets. An observation is keyed by its pixel
// slot; a slot seen again replaces its earlier assignment (the earlier value is
// excluded when the slot is re-evaluated). Slots that are not re-observed keep
// their last assignment, which is what keeps a stopped object's cluster alive
// while it emits no flow. Once a cluster has absorbed observations from the
// current frame, its observations from earlier frames are released.

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <map>
#include <ostream>
#include <set>
#include <vector>

#include "qsignal/csv.hpp"
#include "qsignal/error.hpp"
#include "qsignal/flowmodel.hpp"
#include "qsignal/random.hpp"

namespace qsignal::dpmm {

using Label = std::int64_t;
using Feature = std::array<double, 4>;  // (x, y, w*cos, w*sin)

struct Params {
  double alpha = 3e-7;
  double direction_weight = 10.0;  // pixels per unit of direction vector
  std::int64_t ttl = 30;           // frames a cluster may go without updates

  void validate() const {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha", "must be finite and > 0");
    if (!(direction_weight >= 0.0) || !std::isfinite(direction_weight))
      throw ConfigError("direction_weight", "must be finite and >= 0");
    if (ttl < 1) throw ConfigError("ttl", "must be >= 1");
  }
};

inline Feature feature_of(const ObservationPoint& o, double direction_weight) {
  return {o.x, o.y, direction_weight * o.direction_vec[0], direction_weight * o.direction_vec[1]};
}

inline double euclidean(const Feature& a, const Feature& b) {
  double s = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) s += (a[d] - b[d]) * (a[d] - b[d]);
  return std::sqrt(s);
}

struct ClusterState {
  Label label = 0;
  Feature mean{};
  Feature variance{};  // per dimension; diagnostics only
  std::int64_t count = 0;
  std::int64_t last_update_frame = 0;
  Feature sum{};
  Feature sum_sq{};

  void add(const Feature& f) {
    ++count;
    for (std::size_t d = 0; d < f.size(); ++d) {
      sum[d] += f[d];
      sum_sq[d] += f[d] * f[d];
    }
    refresh();
  }

  void remove(const Feature& f) {
    --count;
    for (std::size_t d = 0; d < f.size(); ++d) {
      sum[d] -= f[d];
      sum_sq[d] -= f[d] * f[d];
    }
    refresh();
  }

  // Mean with one member feature taken out; requires count >= 2.
  Feature mean_without(const Feature& f) const {
    Feature m{};
    const double n = static_cast<double>(count - 1);
    for (std::size_t d = 0; d < f.size(); ++d) m[d] = (sum[d] - f[d]) / n;
    return m;
  }

  std::array<double, 2> center() const { return {mean[0], mean[1]}; }

 private:
  void refresh() {
    if (count <= 0) {
      mean = {};
      variance = {};
      return;
    }
    const double n = static_cast<double>(count);
    for (std::size_t d = 0; d < mean.size(); ++d) {
      mean[d] = sum[d] / n;
      variance[d] = std::max(0.0, sum_sq[d] / n - mean[d] * mean[d]);
    }
  }
};

struct SlotKey {
  std::int64_t x = 0;
  std::int64_t y = 0;
  auto operator<=>(const SlotKey&) const = default;
};

inline SlotKey slot_of(const ObservationPoint& o) { return {std::llround(o.x), std::llround(o.y)}; }

struct SlotEntry {
  Feature feature{};
  Label label = 0;
  std::int64_t frame = 0;
};

// Normalized conditional over the K existing clusters (label order) followed
// by the new-cluster branch.
struct AssignmentProbabilities {
  std::vector<Label> labels;
  std::vector<double> probabilities;  // size labels.size() + 1

  double new_cluster() const { return probabilities.back(); }
};

class ModelState {
 public:
  explicit ModelState(Params params = {}, std::uint64_t seed = 0) : params_(params), rng_(seed) {
    params_.validate();
  }

  const Params& params() const { return params_; }
  double alpha() const { return params_.alpha; }
  const std::map<Label, ClusterState>& clusters() const { return clusters_; }
  const std::map<SlotKey, SlotEntry>& assignments() const { return slots_; }
  std::int64_t total_count() const { return total_count_; }
  std::int64_t frame() const { return frame_; }

  AssignmentProbabilities assignment_probabilities(const ObservationPoint& obs) const {
    return probabilities_for(slot_of(obs), checked_feature(obs));
  }

  /// One Gibbs sweep over the batch in stream order. Returns the sampled
  /// label of each observation.
  std::vector<Label> sweep(const FrameBatch& batch) {
    if (batch.frame < frame_)
      throw OrderingError("gibbs sweep: frame " + std::to_string(batch.frame) + " precedes model frame " +
                          std::to_string(frame_));
    frame_ = batch.frame;
    std::vector<Label> labels;
    labels.reserve(batch.observations.size());
    std::set<Label> touched;

    for (const auto& obs : batch.observations) {
      if (obs.frame != batch.frame) throw InvalidInput("observation frame differs from its batch frame");
      const auto key = slot_of(obs);
      const auto f = checked_feature(obs);
      const auto probs = probabilities_for(key, f);

      const std::size_t pick = sample_index(probs.probabilities);
      Label label = pick < probs.labels.size() ? probs.labels[pick] : next_label_;

      if (auto it = slots_.find(key); it != slots_.end()) detach(it);
      if (pick >= probs.labels.size()) {
        ClusterState c;
        c.label = next_label_++;
        clusters_.emplace(c.label, c);
      }
      auto& cluster = clusters_.at(label);
      cluster.add(f);
      cluster.last_update_frame = frame_;
      slots_[key] = SlotEntry{f, label, frame_};
      ++total_count_;
      touched.insert(label);
      labels.push_back(label);
    }

    std::vector<std::map<SlotKey, SlotEntry>::iterator> superseded;
    for (auto it = slots_.begin(); it != slots_.end(); ++it)
      if (it->second.frame < frame_ && touched.contains(it->second.label)) superseded.push_back(it);
    for (auto it : superseded) detach(it);
    return labels;
  }

  /// Removes clusters idle for more than `ttl` frames together with their
  /// retained slots. Also reports clusters emptied during earlier sweeps.
  std::vector<Label> retire_stale(std::int64_t ttl) {
    if (ttl < 1) throw InvalidInput("retire_stale_clusters: ttl must be >= 1");
    std::vector<Label> closed = std::move(emptied_);
    emptied_.clear();
    std::set<Label> stale;
    for (const auto& [label, c] : clusters_)
      if (c.last_update_frame < frame_ - ttl) stale.insert(label);
    if (stale.empty()) return closed;
    for (auto it = slots_.begin(); it != slots_.end();) {
      if (stale.contains(it->second.label)) {
        --total_count_;
        it = slots_.erase(it);
      } else {
        ++it;
      }
    }
    for (Label l : stale) {
      clusters_.erase(l);
      closed.push_back(l);
    }
    return closed;
  }

  std::vector<Label> retire_stale() { return retire_stale(params_.ttl); }

 private:
  Feature checked_feature(const ObservationPoint& obs) const {
    auto f = feature_of(obs, params_.direction_weight);
    for (double v : f)
      if (!std::isfinite(v)) throw InvalidInput("observation feature is not finite");
    return f;
  }

  AssignmentProbabilities probabilities_for(const SlotKey& key, const Feature& f) const {
    const SlotEntry* self = nullptr;
    if (auto it = slots_.find(key); it != slots_.end()) self = &it->second;

    const double n_minus = static_cast<double>(total_count_ - (self ? 1 : 0));
    const double denom = n_minus + params_.alpha;
    AssignmentProbabilities out;
    out.labels.reserve(clusters_.size());
    out.probabilities.reserve(clusters_.size() + 1);
    double total = 0.0;
    for (const auto& [label, c] : clusters_) {
      const bool owns = self && self->label == label;
      const std::int64_t n_k = c.count - (owns ? 1 : 0);
      double w = 0.0;
      if (n_k > 0) {
        const Feature center = owns ? c.mean_without(self->feature) : c.mean;
        w = std::exp(-euclidean(f, center)) * static_cast<double>(n_k) / denom;
      }
      out.labels.push_back(label);
      out.probabilities.push_back(w);
      total += w;
    }
    const double w_new = params_.alpha / denom;
    out.probabilities.push_back(w_new);
    total += w_new;
    for (double& p : out.probabilities) p /= total;
    return out;
  }

  std::size_t sample_index(const std::vector<double>& p) {
    const double u = uniform01(rng_);
    double cum = 0.0;
    std::size_t last_positive = p.size() - 1;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i] <= 0.0) continue;
      last_positive = i;
      cum += p[i];
      if (u < cum) return i;
    }
    return last_positive;
  }

  void detach(std::map<SlotKey, SlotEntry>::iterator it) {
    auto cit = clusters_.find(it->second.label);
    cit->second.remove(it->second.feature);
    if (cit->second.count == 0) {
      emptied_.push_back(cit->first);
      clusters_.erase(cit);
    }
    --total_count_;
    slots_.erase(it);
  }

  Params params_;
  Rng rng_;
  std::map<Label, ClusterState> clusters_;
  std::map<SlotKey, SlotEntry> slots_;
  std::vector<Label> emptied_;
  std::int64_t total_count_ = 0;
  std::int64_t frame_ = 0;
  Label next_label_ = 1;
};

inline AssignmentProbabilities conditional_assignment_probabilities(const ObservationPoint& obs,
                                                                    const ModelState& model) {
  return model.assignment_probabilities(obs);
}

inline std::vector<Label> gibbs_frame_sweep(ModelState& model, const FrameBatch& batch) { return model.sweep(batch); }

inline std::vector<Label> retire_stale_clusters(ModelState& model, std::int64_t ttl) {
  return model.retire_stale(ttl);
}

inline constexpr std::string_view kClusterDumpHeader = "frame,label,mean_x,mean_y,count";

inline void write_cluster_dump(std::ostream& out, const ModelState& model) {
  for (const auto& [label, c] : model.clusters())
    out << model.frame() << ',' << label << ',' << csv::fmt(c.mean[0]) << ',' << csv::fmt(c.mean[1]) << ','
        << c.count << '\n';
}

}  // namespace qsignal::dpmm
