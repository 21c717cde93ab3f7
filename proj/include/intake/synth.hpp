#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "intake/pipeline.hpp"

namespace intake {

struct CountRange {
  std::size_t min = 0;
  std::size_t max = 0;
};

struct SynthConfig {
  std::uint64_t seed = 0;
  double fps = 24.0;
  double duration_seconds = 60.0;
  CountRange eat_count{6, 10};
  CountRange drink_count{1, 3};
  CountRange eat_frames{36, 72};    // gesture length in frames
  CountRange drink_frames{72, 120};
  std::size_t min_gap_frames = 12;  // idle frames before, between and after gestures
  double jitter_px = 0.6;
  double keypoint_dropout = 0.01;
  double frame_size = 140.0;

  void validate() const;
};

struct ScheduledGesture {
  int class_id = 0;
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
  int hand = 1;         // 0 = left, 1 = right
};

struct SyntheticSequence {
  SkeletonSequence sequence;  // pixel coordinates, labels attached
  std::vector<ScheduledGesture> events;
};

/// Idle hand-tip to lower-lip distance in pixels for the baseline pose at 140 x 140.
double idle_tip_distance();
/// A hand tip closer than this to the lower lip counts as an approach.
inline constexpr double kApproachRadiusPx = 20.0;

/// Raises std::invalid_argument when the events cannot fit with min_gap_frames gaps.
SyntheticSequence generate_sequence(const SynthConfig& config, const std::string& source_id = "synthetic");

/// Index-tip to lower-lip distance (pixels) for `hand` at frame t, or -1 if either point is zeroed.
double tip_to_lip_distance(const SkeletonSequence& seq, std::size_t t, int hand);

}  // namespace intake
