#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace intake {

/// Half-open frame interval [start, end) of one gesture class (1 = eat, 2 = drink).
struct GestureSegment {
  int class_id = 0;
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - start; }
  bool operator==(const GestureSegment&) const = default;
};

/// Maximal runs of identical nonzero labels, in temporal order.
std::vector<GestureSegment> frames_to_segments(std::span<const int> labels);

double iou(const GestureSegment& a, const GestureSegment& b);

struct MatchCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  MatchCounts& operator+=(const MatchCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  bool operator==(const MatchCounts&) const = default;
};

/// Predictions in temporal order each claim the unmatched ground truth with the
/// largest IoU (earliest on ties); a claim at IoU >= k is a TP, anything else an FP.
/// Unclaimed ground truths are FNs. Both lists must be same-class and non-overlapping;
/// k must lie in (0, 1].
MatchCounts match_segments(std::vector<GestureSegment> gt, std::vector<GestureSegment> pred, double k);

struct Metrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

Metrics f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn);
inline Metrics f1_from_counts(const MatchCounts& c) { return f1_from_counts(c.tp, c.fp, c.fn); }

inline const std::vector<double> kDefaultIouThresholds = {0.1, 0.25, 0.5};
inline const std::vector<int> kScoredClasses = {1, 2};

struct EvalEntry {
  int class_id = 0;
  double k = 0.0;
  MatchCounts counts;
  Metrics metrics;
};

struct EvalReport {
  std::vector<EvalEntry> entries;  // class-major, thresholds in the given order

  const EvalEntry& at(int class_id, double k) const;
  EvalEntry& at(int class_id, double k);
  std::vector<double> thresholds() const;

  /// Sums raw counts entry by entry and recomputes metrics from the sums.
  EvalReport& operator+=(const EvalReport& other);
};

/// Builds a report from raw counts; metrics recomputed.
EvalReport report_from_counts(std::vector<EvalEntry> entries);

EvalReport evaluate(std::span<const int> gt_frames, std::span<const int> pred_frames,
                    const std::vector<double>& ks = kDefaultIouThresholds);

std::string class_name(int class_id);
std::string threshold_key(double k);

/// {"eat": {"0.1": {"tp": .., "fp": .., "fn": .., "precision": .., "recall": .., "f1": ..}}, ...}
nlohmann::json report_to_json(const EvalReport& report);
/// Aligned table: gesture, k, TP, FP, FN, precision, recall, F1 (percent).
std::string report_to_table(const EvalReport& report);

}  // namespace intake
