#include "intake/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

namespace intake {

std::vector<GestureSegment> frames_to_segments(std::span<const int> labels) {
  std::vector<GestureSegment> segments;
  std::size_t t = 0;
  while (t < labels.size()) {
    const int c = labels[t];
    std::size_t end = t + 1;
    while (end < labels.size() && labels[end] == c) ++end;
    if (c != 0) segments.push_back({c, t, end});
    t = end;
  }
  return segments;
}

double iou(const GestureSegment& a, const GestureSegment& b) {
  const std::size_t lo = std::max(a.start, b.start), hi = std::min(a.end, b.end);
  const std::size_t inter = hi > lo ? hi - lo : 0;
  const std::size_t uni = a.length() + b.length() - inter;
  return uni == 0 ? 0.0 : double(inter) / double(uni);
}

namespace {

void sort_and_check(std::vector<GestureSegment>& segs, const char* which) {
  std::sort(segs.begin(), segs.end(),
            [](const GestureSegment& a, const GestureSegment& b) { return a.start < b.start || (a.start == b.start && a.end < b.end); });
  for (std::size_t i = 0; i < segs.size(); ++i) {
    if (segs[i].end <= segs[i].start) throw std::invalid_argument(std::string(which) + " segment is empty");
    if (i > 0 && segs[i].start < segs[i - 1].end)
      throw std::invalid_argument(std::string(which) + " segments overlap");
  }
}

}  // namespace

MatchCounts match_segments(std::vector<GestureSegment> gt, std::vector<GestureSegment> pred, double k) {
  if (!(k > 0.0 && k <= 1.0)) throw std::invalid_argument("IoU threshold must lie in (0, 1]");
  sort_and_check(gt, "ground-truth");
  sort_and_check(pred, "predicted");
  MatchCounts counts;
  std::vector<bool> matched(gt.size(), false);
  // gt is sorted and disjoint, so only segments overlapping p can score above zero;
  // first_live skips ground truths that end before the current prediction starts.
  std::size_t first_live = 0;
  for (const auto& p : pred) {
    while (first_live < gt.size() && gt[first_live].end <= p.start) ++first_live;
    double best = 0.0;
    std::size_t best_index = gt.size();
    for (std::size_t g = first_live; g < gt.size() && gt[g].start < p.end; ++g) {
      if (matched[g]) continue;
      const double v = iou(gt[g], p);
      if (v > best) {
        best = v;
        best_index = g;
      }
    }
    if (best_index < gt.size() && best >= k) {
      matched[best_index] = true;
      ++counts.tp;
    } else {
      ++counts.fp;
    }
  }
  counts.fn = gt.size() - counts.tp;
  return counts;
}

Metrics f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  Metrics m;
  if (tp + fp > 0) m.precision = double(tp) / double(tp + fp);
  if (tp + fn > 0) m.recall = double(tp) / double(tp + fn);
  if (m.precision + m.recall > 0.0) m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

const EvalEntry& EvalReport::at(int class_id, double k) const {
  for (const auto& e : entries)
    if (e.class_id == class_id && e.k == k) return e;
  throw std::out_of_range("no report entry for class " + std::to_string(class_id) + " at k=" + threshold_key(k));
}

EvalEntry& EvalReport::at(int class_id, double k) {
  return const_cast<EvalEntry&>(static_cast<const EvalReport&>(*this).at(class_id, k));
}

std::vector<double> EvalReport::thresholds() const {
  std::vector<double> ks;
  for (const auto& e : entries)
    if (std::find(ks.begin(), ks.end(), e.k) == ks.end()) ks.push_back(e.k);
  return ks;
}

EvalReport& EvalReport::operator+=(const EvalReport& other) {
  if (entries.empty()) {
    *this = other;
    return *this;
  }
  if (other.entries.size() != entries.size()) throw std::invalid_argument("reports cover different entries");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].class_id != other.entries[i].class_id || entries[i].k != other.entries[i].k)
      throw std::invalid_argument("reports cover different entries");
    entries[i].counts += other.entries[i].counts;
    entries[i].metrics = f1_from_counts(entries[i].counts);
  }
  return *this;
}

EvalReport report_from_counts(std::vector<EvalEntry> entries) {
  EvalReport r;
  r.entries = std::move(entries);
  for (auto& e : r.entries) e.metrics = f1_from_counts(e.counts);
  return r;
}

EvalReport evaluate(std::span<const int> gt_frames, std::span<const int> pred_frames, const std::vector<double>& ks) {
  if (gt_frames.size() != pred_frames.size())
    throw std::invalid_argument("ground truth has " + std::to_string(gt_frames.size()) + " frames, prediction has " +
                                std::to_string(pred_frames.size()));
  const auto gt_all = frames_to_segments(gt_frames);
  const auto pred_all = frames_to_segments(pred_frames);
  EvalReport report;
  for (int c : kScoredClasses) {
    std::vector<GestureSegment> gt, pred;
    for (const auto& s : gt_all)
      if (s.class_id == c) gt.push_back(s);
    for (const auto& s : pred_all)
      if (s.class_id == c) pred.push_back(s);
    for (double k : ks) {
      EvalEntry e{c, k, match_segments(gt, pred, k), {}};
      e.metrics = f1_from_counts(e.counts);
      report.entries.push_back(e);
    }
  }
  return report;
}

std::string class_name(int class_id) {
  switch (class_id) {
    case 0: return "none";
    case 1: return "eat";
    case 2: return "drink";
  }
  return "class" + std::to_string(class_id);
}

std::string threshold_key(double k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", k);
  return buf;
}

nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json doc = nlohmann::json::object();
  for (const auto& e : report.entries) {
    doc[class_name(e.class_id)][threshold_key(e.k)] = {
        {"tp", e.counts.tp},           {"fp", e.counts.fp},         {"fn", e.counts.fn},
        {"precision", e.metrics.precision}, {"recall", e.metrics.recall}, {"f1", e.metrics.f1},
    };
  }
  return doc;
}

std::string report_to_table(const EvalReport& report) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-8s %5s %7s %7s %7s %10s %8s %8s\n", "gesture", "k", "TP", "FP", "FN",
                "precision", "recall", "F1");
  out += buf;
  for (const auto& e : report.entries) {
    std::snprintf(buf, sizeof buf, "%-8s %5s %7zu %7zu %7zu %9.2f%% %7.2f%% %7.2f%%\n", class_name(e.class_id).c_str(),
                  threshold_key(e.k).c_str(), e.counts.tp, e.counts.fp, e.counts.fn, 100.0 * e.metrics.precision,
                  100.0 * e.metrics.recall, 100.0 * e.metrics.f1);
    out += buf;
  }
  return out;
}

}  // namespace intake
