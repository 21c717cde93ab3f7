#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "eval_oracle.hpp"
#include "intake/eval.hpp"
#include "intake/rng.hpp"

using namespace intake;

TEST_CASE("frames to segments") {
  CHECK(frames_to_segments(std::vector<int>{0, 1, 1, 0, 2, 2, 2}) ==
        std::vector<GestureSegment>{{1, 1, 3}, {2, 4, 7}});
  CHECK(frames_to_segments(std::vector<int>(9, 0)).empty());
  CHECK(frames_to_segments(std::vector<int>{1, 1, 2, 2}) == std::vector<GestureSegment>{{1, 0, 2}, {2, 2, 4}});
  CHECK(frames_to_segments(std::vector<int>{}).empty());
  CHECK(frames_to_segments(std::vector<int>{2}) == std::vector<GestureSegment>{{2, 0, 1}});
}

TEST_CASE("temporal iou") {
  CHECK(iou({1, 3, 9}, {1, 3, 9}) == 1.0);
  CHECK(iou({1, 0, 5}, {1, 5, 9}) == 0.0);
  CHECK(iou({1, 0, 10}, {1, 5, 15}) == doctest::Approx(5.0 / 15.0).epsilon(1e-15));
  CHECK(iou({1, 0, 10}, {1, 2, 4}) == doctest::Approx(0.2));
}

TEST_CASE("greedy segment matching") {
  SUBCASE("shifted prediction") {
    auto c = match_segments({{1, 10, 20}}, {{1, 12, 22}}, 0.5);
    CHECK(c == MatchCounts{1, 0, 0});
  }
  SUBCASE("oversegmentation") {
    auto c = match_segments({{1, 0, 30}}, {{1, 0, 10}, {1, 12, 28}}, 0.25);
    CHECK(c == MatchCounts{1, 1, 0});
  }
  SUBCASE("merge") {
    auto c = match_segments({{1, 0, 10}, {1, 20, 30}}, {{1, 0, 30}}, 0.5);
    CHECK(c == MatchCounts{0, 1, 2});
  }
  SUBCASE("ties go to the earlier ground truth") {
    // [5,20) overlaps each ground truth by 5 frames, IoU 5/20 both
    auto c = match_segments({{1, 0, 10}, {1, 15, 25}}, {{1, 5, 20}, {1, 20, 25}}, 0.25);
    // first prediction claims [0,10); the second claims [15,25) at IoU 0.5.
    // Claiming [15,25) first would leave the second prediction an FP.
    CHECK(c == MatchCounts{2, 0, 0});
  }
  SUBCASE("input order does not matter") {
    auto a = match_segments({{1, 0, 10}, {1, 20, 30}}, {{1, 21, 29}, {1, 1, 9}}, 0.5);
    auto b = match_segments({{1, 20, 30}, {1, 0, 10}}, {{1, 1, 9}, {1, 21, 29}}, 0.5);
    CHECK(a == b);
    CHECK(a == MatchCounts{2, 0, 0});
  }
  SUBCASE("overlapping lists are rejected") {
    CHECK_THROWS_AS(match_segments({{1, 0, 10}, {1, 5, 12}}, {}, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(match_segments({}, {{1, 0, 10}, {1, 9, 12}}, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(match_segments({}, {}, 0.0), std::invalid_argument);
  }
}

TEST_CASE("f1 from counts reproduces the published smartphone table") {
  struct Row {
    std::size_t tp, fp, fn;
    double f1_percent;
  };
  const Row rows[] = {{705, 109, 132, 85.40}, {693, 114, 139, 84.56}, {625, 149, 172, 79.57},
                      {40, 10, 28, 67.80},    {38, 11, 29, 65.52},    {35, 11, 32, 61.95}};
  for (const auto& r : rows) {
    // independent form: F1 = 2TP / (2TP + FP + FN)
    const double direct = 200.0 * double(r.tp) / double(2 * r.tp + r.fp + r.fn);
    const double f1 = 100.0 * f1_from_counts(r.tp, r.fp, r.fn).f1;
    CHECK(std::abs(f1 - direct) < 1e-9);
    CHECK(std::abs(f1 - r.f1_percent) < 0.01);
  }
  const Metrics zero = f1_from_counts(0, 0, 0);
  CHECK(zero.precision == 0.0);
  CHECK(zero.recall == 0.0);
  CHECK(zero.f1 == 0.0);
  CHECK(f1_from_counts(0, 3, 0).f1 == 0.0);
}

TEST_CASE("evaluate") {
  std::vector<int> gt{0, 1, 1, 1, 0, 0, 2, 2, 0, 1, 1, 0};
  SUBCASE("perfect prediction") {
    auto r = evaluate(gt, gt);
    CHECK(r.entries.size() == 6);
    for (const auto& e : r.entries) CHECK(e.metrics.f1 == 1.0);
  }
  SUBCASE("length mismatch") {
    CHECK_THROWS_AS(evaluate(gt, std::vector<int>(11, 0)), std::invalid_argument);
  }
  SUBCASE("json and table") {
    auto r = evaluate(gt, std::vector<int>(12, 0));
    auto doc = report_to_json(r);
    CHECK(doc["eat"]["0.25"]["fn"] == 2);
    CHECK(doc["drink"]["0.5"]["tp"] == 0);
    auto table = report_to_table(r);
    CHECK(table.find("drink") != std::string::npos);
    CHECK(table.find("0.25") != std::string::npos);
  }
  SUBCASE("pooling sums counts before computing metrics") {
    auto a = evaluate(gt, gt);
    auto b = evaluate(gt, std::vector<int>(12, 0));
    EvalReport pooled;
    pooled += a;
    pooled += b;
    const auto& e = pooled.at(1, 0.5);
    CHECK(e.counts == MatchCounts{2, 0, 2});
    CHECK(e.metrics.f1 == doctest::Approx(2.0 / 3.0));
  }
}

TEST_CASE("matcher agrees with the brute-force oracle on random timelines") {
  RngStream rng(2024);
  const std::vector<double> ks{0.1, 0.25, 0.5, 0.75};
  for (int trial = 0; trial < 2000; ++trial) {
    auto pair = oracle::random_timeline_pair(rng, 160, 8);
    auto report = evaluate(pair.gt, pair.pred, ks);
    for (int c : kScoredClasses) {
      const std::size_t n_gt = oracle::count_runs(pair.gt, c), n_pred = oracle::count_runs(pair.pred, c);
      std::size_t prev_tp = n_gt + 1;
      for (double k : ks) {
        const auto& e = report.at(c, k);
        CHECK(e.counts == oracle::brute_force_counts(pair.gt, pair.pred, c, k));
        CHECK(e.counts.tp + e.counts.fn == n_gt);
        CHECK(e.counts.tp + e.counts.fp == n_pred);
        CHECK(e.counts.tp <= prev_tp);
        prev_tp = e.counts.tp;
      }
    }
  }
}
