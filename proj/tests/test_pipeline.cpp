#include "doctest.h"

#include <cmath>
#include <sstream>

#include "intake/pipeline.hpp"
#include "test_support.hpp"

using namespace intake;
using intake::testing::as_vector;

namespace {

std::string keypoint_line(int frame, double conf, std::size_t count = kFullNodeCount, double x = 10.0) {
  std::string s = "{\"frame\": " + std::to_string(frame) + ", \"kp\": [";
  for (std::size_t v = 0; v < count; ++v) {
    if (v) s += ", ";
    s += "[" + std::to_string(x + double(v)) + ", 20.5, " + std::to_string(conf) + "]";
  }
  return s + "]}\n";
}

SkeletonSequence labeled_sequence(std::size_t t_total, double fps) {
  SkeletonSequence seq;
  seq.fps = fps;
  seq.source_id = "seq";
  seq.frames = Tensor({t_total, 2, 3});
  std::vector<int> labels(t_total);
  for (std::size_t t = 0; t < t_total; ++t) {
    labels[t] = int((t / 7 + t / 13) % 3);
    seq.frames[t * 6] = double(t);
  }
  seq.labels = labels;
  return seq;
}

Tensor one_hot_windows(const WindowBatch& batch) {
  Tensor p({batch.size(), batch.window_length, kClassCount});
  for (std::size_t i = 0; i < batch.labels.size(); ++i) p[i * kClassCount + batch.labels[i]] = 1.0;
  return p;
}

}  // namespace

TEST_CASE("keypoint loading") {
  SUBCASE("confident keypoints pass through") {
    std::istringstream in(keypoint_line(0, 0.9) + keypoint_line(1, 0.9));
    auto seq = parse_keypoints(in, 0.3);
    CHECK(seq.frame_count() == 2);
    CHECK(seq.node_count() == 23);
    CHECK(seq.frames.at({1, 4, 0}) == 14.0);
    CHECK(seq.frames.at({1, 4, 1}) == 20.5);
    CHECK(seq.frames.at({1, 4, 2}) == 0.9);
  }
  SUBCASE("low confidence is zeroed") {
    std::istringstream in(keypoint_line(0, 0.1));
    auto seq = parse_keypoints(in, 0.3);
    for (double v : seq.frames.values()) CHECK(v == 0.0);
  }
  SUBCASE("gaps are filled and frames sorted") {
    std::istringstream in(keypoint_line(8, 0.9) + keypoint_line(6, 0.9));
    auto seq = parse_keypoints(in, 0.3);
    CHECK(seq.frame_count() == 9);
    for (std::size_t t : {0u, 1u, 5u, 7u})
      for (std::size_t i = 0; i < 69; ++i) CHECK(seq.frames[t * 69 + i] == 0.0);
    CHECK(seq.frames.at({6, 0, 2}) == 0.9);
    CHECK(seq.frames.at({8, 0, 2}) == 0.9);
  }
  SUBCASE("malformed line reports its number") {
    std::istringstream in(keypoint_line(0, 0.9) + "{\"frame\": 1, \"kp\": [\n");
    try {
      parse_keypoints(in);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
  SUBCASE("wrong keypoint count names the frame") {
    std::istringstream in(keypoint_line(0, 0.9) + keypoint_line(5, 0.9, 17));
    try {
      parse_keypoints(in);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("frame 5") != std::string::npos);
      CHECK(std::string(e.what()).find("17") != std::string::npos);
    }
  }
  SUBCASE("round trip through the writer") {
    std::istringstream in(keypoint_line(0, 0.9) + keypoint_line(2, 0.5));
    auto seq = parse_keypoints(in);
    std::ostringstream out;
    write_keypoints(out, seq);
    std::istringstream again(out.str());
    auto back = parse_keypoints(again);
    CHECK(back.frames.storage() == seq.frames.storage());
  }
}

TEST_CASE("label loading") {
  SUBCASE("empty file") {
    std::istringstream in("");
    CHECK(parse_labels(in, 4) == std::vector<int>{0, 0, 0, 0});
  }
  SUBCASE("sparse rows") {
    std::istringstream in("frame,label\n3,1\n4,1\n");
    CHECK(parse_labels(in, 6) == std::vector<int>{0, 0, 0, 1, 1, 0});
  }
  SUBCASE("errors") {
    std::istringstream dup("frame,label\n3,1\n3,2\n");
    CHECK_THROWS_AS(parse_labels(dup, 6), ParseError);
    std::istringstream bad("frame,label\n3,5\n");
    CHECK_THROWS_AS(parse_labels(bad, 6), ParseError);
    std::istringstream late("frame,label\n6,1\n");
    CHECK_THROWS_AS(parse_labels(late, 6), ParseError);
    std::istringstream junk("frame,label\n2,x\n");
    CHECK_THROWS_AS(parse_labels(junk, 6), ParseError);
  }
  SUBCASE("writer round trip") {
    std::vector<int> labels{0, 2, 2, 1, 0};
    std::ostringstream out;
    write_labels(out, labels);
    std::istringstream in(out.str());
    CHECK(parse_labels(in, 5) == labels);
  }
}

TEST_CASE("coordinate normalization") {
  SkeletonSequence seq;
  seq.frames = Tensor({1, 3, 3}, {70, 70, 0.8, 0, 0, 0, 140, 140, 0.9});
  auto n = normalize_coordinates(seq, 140, 140);
  CHECK(as_vector(n.frames) == std::vector<double>{0.5, 0.5, 0.8, 0, 0, 0, 1.0, 1.0, 0.9});
  CHECK(n.normalized);
  CHECK(n.out_of_range == 0);
  CHECK_THROWS_AS(normalize_coordinates(n, 140, 140), std::logic_error);
  CHECK_THROWS_AS(normalize_coordinates(seq, 0, 140), std::invalid_argument);

  SkeletonSequence wide;
  wide.frames = Tensor({1, 2, 3}, {150, 10, 0.9, -1, 10, 0.9});
  CHECK(normalize_coordinates(wide, 140, 140).out_of_range == 2);
}

TEST_CASE("node selection follows the topology") {
  SkeletonSequence seq;
  seq.frames = Tensor({2, 23, 3});
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t v = 0; v < 23; ++v) seq.frames.at({t, v, 0}) = double(100 * t + v);
  auto mouth = select_nodes(seq, build_topology({BodyPart::mouth}));
  CHECK(mouth.node_count() == 4);
  CHECK(mouth.frames.at({1, 0, 0}) == 109.0);
  CHECK(mouth.frames.at({1, 3, 0}) == 112.0);
}

TEST_CASE("window lengths") {
  CHECK(window_length(24, 6) == 144);
  CHECK(window_length(10, 6) == 60);
  CHECK_THROWS_AS(window_length(24, 0), std::invalid_argument);
}

TEST_CASE("inference windows tile and pad") {
  auto seq = labeled_sequence(300, 24);
  auto batch = make_windows(seq, Mode::infer);
  REQUIRE(batch.size() == 3);
  CHECK(batch.window_length == 144);
  CHECK(batch.origin[2].start == 288);
  std::size_t masked = 0;
  for (std::size_t t = 0; t < 144; ++t) masked += batch.valid_mask[2 * 144 + t] == 0;
  CHECK(masked == 132);
  for (std::size_t t = 0; t < 144; ++t) CHECK(batch.valid_mask[t] == 1);
  CHECK(batch.windows.at({2, 11, 0, 0}) == 299.0);
  CHECK(batch.windows.at({2, 12, 0, 0}) == 0.0);
  CHECK(stitch_predictions(one_hot_windows(batch), batch.origin, 300).size() == 300);

  SkeletonSequence one;
  one.frames = Tensor({1, 2, 3});
  CHECK_THROWS_AS(make_windows(one, Mode::infer), std::invalid_argument);
}

TEST_CASE("training windows slide with half-window stride and cover the tail") {
  auto seq = labeled_sequence(300, 24);
  auto batch = make_windows(seq, Mode::train);
  std::vector<std::size_t> starts;
  for (const auto& o : batch.origin) starts.push_back(o.start);
  CHECK(starts == std::vector<std::size_t>{0, 72, 144, 156});
  for (auto m : batch.valid_mask) CHECK(m == 1);
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (std::size_t t = 0; t < 144; ++t) CHECK(batch.labels[i * 144 + t] == (*seq.labels)[starts[i] + t]);

  auto short_seq = labeled_sequence(100, 24);
  auto padded = make_windows(short_seq, Mode::train);
  CHECK(padded.size() == 1);
  CHECK(padded.valid_mask[99] == 1);
  CHECK(padded.valid_mask[100] == 0);
}

TEST_CASE("windowing then stitching one-hot labels is the identity") {
  for (double fps : {24.0, 10.0}) {
    for (std::size_t t_total : {143u, 144u, 145u, 300u}) {
      auto seq = labeled_sequence(t_total, fps);
      auto batch = make_windows(seq, Mode::infer);
      const std::size_t t_win = window_length(fps, 6.0);
      CHECK(batch.size() == (t_total + t_win - 1) / t_win);
      CHECK(stitch_predictions(one_hot_windows(batch), batch.origin, t_total) == *seq.labels);
    }
  }
}

TEST_CASE("stitching") {
  SUBCASE("ties break toward the lower class") {
    Tensor p({1, 2, 3}, {0.4, 0.4, 0.2, 0.2, 0.4, 0.4});
    CHECK(stitch_predictions(p, {{"a", 0}}, 2) == std::vector<int>{0, 1});
  }
  SUBCASE("uncovered frames are an error") {
    Tensor p({1, 2, 3}, 1.0 / 3.0);
    CHECK_THROWS_AS(stitch_predictions(p, {{"a", 0}}, 3), std::invalid_argument);
  }
}

TEST_CASE("prediction csv") {
  Tensor p({2, 3}, {0.1234567, 0.5, 0.3765433, 1.0, 0.0, 0.0});
  std::ostringstream out;
  write_predictions(out, {1, 0}, p);
  CHECK(out.str() == "frame,label,p_none,p_eat,p_drink\n0,1,0.123457,0.500000,0.376543\n1,0,1.000000,0.000000,0.000000\n");
  std::istringstream in(out.str());
  auto table = parse_predictions(in);
  CHECK(table.labels == std::vector<int>{1, 0});
  CHECK(table.probabilities.at({0, 0}) == 0.123457);
}

TEST_CASE("window batches gather and append") {
  auto seq = labeled_sequence(300, 24);
  auto batch = make_windows(seq, Mode::train);
  auto picked = gather_windows(batch, {3, 1});
  CHECK(picked.origin[0].start == 156);
  CHECK(picked.windows.at({1, 0, 0, 0}) == 72.0);
  WindowBatch all;
  append_windows(all, picked);
  append_windows(all, batch);
  CHECK(all.size() == 6);
  CHECK(all.windows.at({2, 5, 0, 0}) == 5.0);
  CHECK(all.labels.size() == 6 * 144);
}
