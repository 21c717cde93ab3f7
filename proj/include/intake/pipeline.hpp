#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "intake/graph.hpp"
#include "intake/layers.hpp"
#include "intake/tensor.hpp"

namespace intake {

enum GestureLabel : int { kNone = 0, kEat = 1, kDrink = 2 };
inline constexpr std::size_t kClassCount = 3;

/// One person's keypoints over time: frames is [T, V, 3] holding (x, y, confidence).
struct SkeletonSequence {
  Tensor frames;
  double fps = 24.0;
  std::optional<std::vector<int>> labels;
  std::string source_id;
  bool normalized = false;
  std::size_t out_of_range = 0;  // keypoints outside [0, 1.05 * dim] seen by normalize_coordinates

  std::size_t frame_count() const { return frames.empty() ? 0 : frames.dim(0); }
  std::size_t node_count() const { return frames.empty() ? 0 : frames.dim(1); }
};

/// Parse error carrying the 1-based line number of the offending input.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& message, std::size_t line)
      : std::runtime_error(message), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

inline constexpr double kDefaultConfidenceThreshold = 0.3;

/// Reads JSON Lines of {"frame": i, "kp": [[x, y, c] x V]}. Keypoints with
/// confidence below the threshold become (0, 0, 0); frames are sorted and gaps
/// (including leading ones) are filled with all-zero frames.
SkeletonSequence parse_keypoints(std::istream& in, double confidence_threshold = kDefaultConfidenceThreshold,
                                 double fps = 24.0, std::size_t expected_nodes = kFullNodeCount);
SkeletonSequence load_keypoints(const std::filesystem::path& path,
                                double confidence_threshold = kDefaultConfidenceThreshold, double fps = 24.0,
                                std::size_t expected_nodes = kFullNodeCount);
void write_keypoints(std::ostream& out, const SkeletonSequence& seq);

/// CSV "frame,label"; unlisted frames are 0.
std::vector<int> parse_labels(std::istream& in, std::size_t total_frames);
std::vector<int> load_labels(const std::filesystem::path& path, std::size_t total_frames);
void write_labels(std::ostream& out, const std::vector<int>& labels);

/// Divides x by width and y by height; zeroed keypoints stay zero.
SkeletonSequence normalize_coordinates(const SkeletonSequence& seq, double frame_width, double frame_height);

/// Keeps the columns of the canonical 23-node layout that belong to `topology`.
SkeletonSequence select_nodes(const SkeletonSequence& seq, const SkeletonTopology& topology);

struct WindowOrigin {
  std::string sequence_id;
  std::size_t start = 0;
};

struct WindowBatch {
  Tensor windows;                       // [N, T_win, V, 3]
  std::vector<int> labels;              // [N * T_win]
  std::vector<std::uint8_t> valid_mask; // [N * T_win], 0 on zero-padded frames
  std::vector<WindowOrigin> origin;
  std::size_t window_length = 0;

  std::size_t size() const { return origin.size(); }
};

struct WindowOptions {
  double window_seconds = 6.0;
  double train_stride_fraction = 0.5;
};

std::size_t window_length(double fps, double window_seconds);

/// Train mode slides with stride round(T_win * fraction) and adds a final
/// window aligned to the sequence end; infer mode tiles disjoint windows and
/// zero-pads the last one.
WindowBatch make_windows(const SkeletonSequence& seq, Mode mode, const WindowOptions& options = {});

/// Gathers the listed windows into a new batch.
WindowBatch gather_windows(const WindowBatch& batch, const std::vector<std::size_t>& indices);
void append_windows(WindowBatch& into, const WindowBatch& from);

/// Per-frame probabilities [T_total, C] from disjoint infer-mode windows.
Tensor stitch_probabilities(const Tensor& window_probs, const std::vector<WindowOrigin>& origins,
                            std::size_t total_frames);
/// Argmax per frame; ties go to the lower class index.
std::vector<int> argmax_frames(const Tensor& frame_probs);
std::vector<int> stitch_predictions(const Tensor& window_probs, const std::vector<WindowOrigin>& origins,
                                    std::size_t total_frames);

/// CSV "frame,label,p_none,p_eat,p_drink" with 6-decimal probabilities.
void write_predictions(std::ostream& out, const std::vector<int>& labels, const Tensor& frame_probs);

struct PredictionTable {
  std::vector<int> labels;
  Tensor probabilities;  // [T, C]
};

PredictionTable parse_predictions(std::istream& in);
PredictionTable load_predictions(const std::filesystem::path& path);

}  // namespace intake
