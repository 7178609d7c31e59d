#pragma once

#include <cstdint>
#include <ostream>
#include <vector>

#include "qsignal/dpmm.hpp"
#include "qsignal/flowmodel.hpp"
#include "qsignal/tracklets.hpp"

namespace qsignal {

// Observation frames in, flagged tracklets out. Frames missing from the input
// (no moving pixels) are replayed as empty frames so that cluster retirement
// and tracklet timing match a frame-by-frame online feed exactly.
class TrackletPipeline {
 public:
  TrackletPipeline(dpmm::Params params, std::uint64_t seed, Roi arrival, Roi departure, double frame_rate,
                   int bins = kDefaultDirectionBins)
      : model_(params, seed), arrival_(arrival), departure_(departure), frame_rate_(frame_rate), bins_(bins) {
    if (arrival_.overlaps(departure_)) throw ConfigError("roi", "Arrival-ROI and Departure-ROI must be disjoint");
    if (!(frame_rate > 0.0)) throw ConfigError("frame_rate", "must be > 0");
  }

  void set_cluster_dump(std::ostream* out) { dump_ = out; }

  void process(const FrameBatch& batch) {
    if (batch.frame <= last_frame_)
      throw OrderingError("pipeline: frame " + std::to_string(batch.frame) + " is not after frame " +
                          std::to_string(last_frame_));
    advance_to(batch.frame - 1);
    step(batch);
  }

  // Processes empty frames through `frame` inclusive.
  void advance_to(std::int64_t frame) {
    while (last_frame_ < frame) step(FrameBatch{last_frame_ + 1, {}});
  }

  void finish() { registry_.close_all(); }

  const dpmm::ModelState& model() const { return model_; }
  const TrackletRegistry& registry() const { return registry_; }
  std::vector<FlaggedTracklet> flagged() const { return registry_.flagged(); }
  std::int64_t last_frame() const { return last_frame_; }
  double frame_time(std::int64_t frame) const { return static_cast<double>(frame) / frame_rate_; }

 private:
  void step(const FrameBatch& batch) {
    model_.sweep(batch);
    const auto closed = model_.retire_stale();
    registry_.close(closed);
    registry_.extend(model_.clusters(), frame_time(batch.frame), bins_);
    registry_.flag_roi_events(arrival_, departure_);
    if (dump_) dpmm::write_cluster_dump(*dump_, model_);
    last_frame_ = batch.frame;
  }

  dpmm::ModelState model_;
  TrackletRegistry registry_;
  Roi arrival_;
  Roi departure_;
  double frame_rate_;
  int bins_;
  std::ostream* dump_ = nullptr;
  std::int64_t last_frame_ = -1;
};

}  // namespace qsignal
