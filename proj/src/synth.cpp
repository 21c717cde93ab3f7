#include "intake/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "intake/rng.hpp"

namespace intake {

namespace {

struct Point {
  double x = 0.0, y = 0.0;
  Point operator+(Point o) const { return {x + o.x, y + o.y}; }
  Point operator-(Point o) const { return {x - o.x, y - o.y}; }
  Point operator*(double s) const { return {x * s, y * s}; }
};

Point lerp(Point a, Point b, double p) { return a + (b - a) * p; }

double smoothstep(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

// Baseline seated pose in a 140 x 140 frame, canonical local order.
// The subject faces the camera, so their left side is on the image right.
constexpr std::array<Point, kFullNodeCount> kBasePose = {{
    {70, 42},  {75, 37},  {65, 37},  {81, 40},  {59, 40},   // nose, eyes, ears
    {92, 76},  {48, 76},  {100, 102}, {40, 102},            // shoulders, elbows
    {66, 52},  {74, 52},  {70, 50},  {70, 54},              // mouth corners, lips
    {92, 118}, {89, 115}, {86, 113}, {86, 118}, {81, 117},  // left hand
    {48, 118}, {51, 115}, {54, 113}, {54, 118}, {59, 117},  // right hand
}};

constexpr std::size_t kLowerLip = 12;
constexpr std::size_t kFaceEnd = 13;  // nodes [0, 13) are face, arms and mouth
constexpr std::size_t kHandRoot[2] = {13, 18};
constexpr std::size_t kElbow[2] = {7, 8};
constexpr std::size_t kIndexTip[2] = {17, 22};

// Offsets of the five hand points from the hand root, for the left hand.
// The right hand mirrors x.
constexpr std::array<Point, 5> kRestShape = {{{0, 0}, {-3, -3}, {-6, -5}, {-6, 0}, {-11, -1}}};
constexpr std::array<Point, 5> kCupShape = {{{0, 0}, {-2, -6}, {-4, -11}, {-5, -1}, {-9, -3}}};

Point mirror(Point p, int hand) { return hand == 0 ? p : Point{-p.x, p.y}; }

struct EventMotion {
  double progress = 0.0;  // 0 at rest, 1 at the mouth
  double hold_phase = -1.0;  // in [0, 1] during the hold, else negative
  std::size_t hold_frame = 0;
};

EventMotion event_motion(const ScheduledGesture& e, std::size_t t) {
  const std::size_t d = e.end - e.start;
  const double approach_fraction = e.class_id == kDrink ? 0.18 : 0.15;
  const std::size_t a = std::max<std::size_t>(1, std::size_t(std::lround(approach_fraction * double(d))));
  const std::size_t r = a;
  const std::size_t hold = d > a + r ? d - a - r : 0;
  const std::size_t k = t - e.start;
  EventMotion m;
  if (k < a) {
    m.progress = smoothstep(double(k + 1) / double(a + 1));
  } else if (k < a + hold) {
    m.progress = 1.0;
    m.hold_frame = k - a;
    m.hold_phase = hold > 1 ? double(k - a) / double(hold - 1) : 0.5;
  } else {
    m.progress = smoothstep(double(e.end - t) / double(r + 1));
  }
  return m;
}

void check_range(const CountRange& r, const char* name, bool allow_zero) {
  if (r.min > r.max) throw std::invalid_argument(std::string(name) + ": min exceeds max");
  if (!allow_zero && r.min == 0) throw std::invalid_argument(std::string(name) + " must be positive");
}

}  // namespace

void SynthConfig::validate() const {
  if (fps <= 0.0) throw std::invalid_argument("fps must be positive");
  if (duration_seconds <= 0.0) throw std::invalid_argument("duration_seconds must be positive");
  check_range(eat_count, "eat_count", true);
  check_range(drink_count, "drink_count", true);
  check_range(eat_frames, "eat_frames", false);
  check_range(drink_frames, "drink_frames", false);
  if (min_gap_frames < 1) throw std::invalid_argument("min_gap_frames must be at least 1");
  if (jitter_px < 0.0) throw std::invalid_argument("jitter_px must be non-negative");
  if (keypoint_dropout < 0.0 || keypoint_dropout >= 1.0) throw std::invalid_argument("keypoint_dropout must be in [0, 1)");
  if (frame_size <= 0.0) throw std::invalid_argument("frame_size must be positive");
}

double idle_tip_distance() {
  const Point d = kBasePose[kIndexTip[0]] - kBasePose[kLowerLip];
  return std::hypot(d.x, d.y);
}

double tip_to_lip_distance(const SkeletonSequence& seq, std::size_t t, int hand) {
  const std::size_t v = seq.node_count();
  const double* f = seq.frames.data() + t * v * 3;
  const double* tip = f + 3 * kIndexTip[hand];
  const double* lip = f + 3 * kLowerLip;
  if (tip[2] == 0.0 || lip[2] == 0.0) return -1.0;
  return std::hypot(tip[0] - lip[0], tip[1] - lip[1]);
}

SyntheticSequence generate_sequence(const SynthConfig& config, const std::string& source_id) {
  config.validate();
  const RngStream root(config.seed);
  RngStream schedule_rng = root.split(1);
  RngStream style_rng = root.split(2);
  RngStream noise_rng = root.split(3);

  const auto total = static_cast<std::size_t>(std::llround(config.fps * config.duration_seconds));
  if (total < 2) throw std::invalid_argument("sequence shorter than 2 frames");

  // schedule
  auto draw = [&](const CountRange& r) { return r.min + std::size_t(schedule_rng.below(r.max - r.min + 1)); };
  std::vector<ScheduledGesture> events;
  const std::size_t n_eat = draw(config.eat_count), n_drink = draw(config.drink_count);
  for (std::size_t i = 0; i < n_eat; ++i) events.push_back({kEat, 0, 0, 1});
  for (std::size_t i = 0; i < n_drink; ++i) events.push_back({kDrink, 0, 0, 1});
  for (std::size_t i = events.size(); i > 1; --i) std::swap(events[i - 1], events[schedule_rng.below(i)]);
  std::size_t needed = 0;
  std::vector<std::size_t> lengths;
  for (auto& e : events) {
    lengths.push_back(draw(e.class_id == kEat ? config.eat_frames : config.drink_frames));
    needed += lengths.back();
    e.hand = schedule_rng.uniform() < 0.7 ? 1 : 0;
  }
  const std::size_t n = events.size();
  needed += (n + 1) * config.min_gap_frames;
  if (needed > total)
    throw std::invalid_argument("infeasible schedule: " + std::to_string(n) + " gestures need " +
                                std::to_string(needed) + " frames, sequence has " + std::to_string(total));
  // spread the slack over the n + 1 gaps
  const std::size_t slack = total - needed;
  std::vector<double> weights(n + 1);
  double weight_sum = 0.0;
  for (double& w : weights) weight_sum += (w = schedule_rng.uniform(0.2, 1.0));
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto extra = std::size_t(std::floor(double(slack) * weights[i] / weight_sum));
    cursor += config.min_gap_frames + extra;
    events[i].start = cursor;
    events[i].end = cursor + lengths[i];
    cursor = events[i].end;
  }

  // per-sequence style: body sway phases and idle hand drift
  const double phase_body_x = style_rng.uniform(0, 2 * std::numbers::pi);
  const double phase_body_y = style_rng.uniform(0, 2 * std::numbers::pi);
  const double phase_hand[2] = {style_rng.uniform(0, 2 * std::numbers::pi), style_rng.uniform(0, 2 * std::numbers::pi)};
  const double scale = config.frame_size / 140.0;

  SyntheticSequence out;
  out.events = events;
  SkeletonSequence& seq = out.sequence;
  seq.fps = config.fps;
  seq.source_id = source_id;
  seq.frames = Tensor({total, kFullNodeCount, 3});
  std::vector<int> labels(total, kNone);
  for (const auto& e : events) std::fill(labels.begin() + e.start, labels.begin() + e.end, e.class_id);

  std::size_t next_event = 0;
  for (std::size_t t = 0; t < total; ++t) {
    const double secs = double(t) / config.fps;
    const Point sway{1.5 * std::sin(2 * std::numbers::pi * secs / 7.0 + phase_body_x),
                     1.0 * std::sin(2 * std::numbers::pi * secs / 5.0 + phase_body_y)};
    std::array<Point, kFullNodeCount> pose = kBasePose;

    std::array<Point, 2> root_pos, elbow_pos;
    std::array<std::array<Point, 5>, 2> shape;
    for (int h = 0; h < 2; ++h) {
      const Point drift{2.0 * std::sin(2 * std::numbers::pi * secs / 3.3 + phase_hand[h]),
                        1.5 * std::sin(2 * std::numbers::pi * secs / 4.1 + 1.3 * phase_hand[h])};
      root_pos[h] = kBasePose[kHandRoot[h]] + drift;
      elbow_pos[h] = kBasePose[kElbow[h]] + drift * 0.4;
      for (std::size_t k = 0; k < 5; ++k) shape[h][k] = mirror(kRestShape[k], h);
    }

    while (next_event < events.size() && events[next_event].end <= t) ++next_event;
    double head_lift = 0.0;
    if (next_event < events.size() && events[next_event].start <= t) {
      const ScheduledGesture& e = events[next_event];
      const int h = e.hand;
      const EventMotion m = event_motion(e, t);
      const bool drink = e.class_id == kDrink;
      const auto& target_shape = drink ? kCupShape : kRestShape;
      for (std::size_t k = 0; k < 5; ++k)
        shape[h][k] = lerp(mirror(kRestShape[k], h), mirror(target_shape[k], h), m.progress);
      Point raise{0, 0};
      Point bite{0, 0};
      if (m.hold_phase >= 0.0) {
        if (drink) {
          const double r = std::sin(std::numbers::pi * m.hold_phase);
          raise = Point{h == 0 ? 12.0 : -12.0, -16.0} * r;
          head_lift = 2.5 * r;
        } else {
          bite.y = 1.2 * std::sin(2 * std::numbers::pi * double(m.hold_frame) / (0.5 * config.fps));
        }
      }
      const Point tip_target = kBasePose[kLowerLip] + Point{0, drink ? 3.0 : 2.0} + Point{0, -head_lift};
      const Point root_target = tip_target - shape[h][4];
      const Point rest_root = root_pos[h];
      root_pos[h] = lerp(rest_root, root_target, m.progress) + bite;
      elbow_pos[h] = elbow_pos[h] + (root_pos[h] - rest_root) * 0.4 + raise;
    }

    for (std::size_t v = 0; v < kFaceEnd; ++v) pose[v] = pose[v] + sway;
    for (std::size_t v = 0; v < 5; ++v) pose[v].y -= head_lift;  // head tilts back while drinking
    for (std::size_t v = 9; v < kFaceEnd; ++v) pose[v].y -= head_lift;
    for (int h = 0; h < 2; ++h) {
      pose[kElbow[h]] = elbow_pos[h] + sway;
      for (std::size_t k = 0; k < 5; ++k) pose[kHandRoot[h] + k] = root_pos[h] + shape[h][k] + sway;
    }

    double* f = seq.frames.data() + t * kFullNodeCount * 3;
    for (std::size_t v = 0; v < kFullNodeCount; ++v) {
      const double jx = config.jitter_px * noise_rng.normal();
      const double jy = config.jitter_px * noise_rng.normal();
      const double conf = noise_rng.uniform(0.85, 1.0);
      if (noise_rng.uniform() < config.keypoint_dropout) continue;  // stays (0, 0, 0)
      f[3 * v] = scale * pose[v].x + jx;
      f[3 * v + 1] = scale * pose[v].y + jy;
      f[3 * v + 2] = conf;
    }
  }
  seq.labels = std::move(labels);
  return out;
}

}  // namespace intake
