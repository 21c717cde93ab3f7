#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "intake/checkpoint.hpp"
#include "intake/eval.hpp"
#include "intake/pipeline.hpp"
#include "intake/run_config.hpp"

namespace intake {

/// File naming shared by the dataset writer and the loaders:
/// <id>.keypoints.jsonl, <id>.labels.csv, <id>.pred.csv.
inline constexpr const char* kKeypointSuffix = ".keypoints.jsonl";
inline constexpr const char* kLabelSuffix = ".labels.csv";
inline constexpr const char* kPredictionSuffix = ".pred.csv";

/// File name up to the first '.'.
std::string sequence_id(const std::filesystem::path& path);
std::filesystem::path sibling_labels(const std::filesystem::path& keypoints);

/// Directories expand to their *.keypoints.jsonl files (sorted); files pass through.
std::vector<std::filesystem::path> expand_inputs(const std::vector<std::string>& inputs);

/// Load, normalize and select the topology's nodes; attach labels when `with_labels`.
SkeletonSequence prepare_sequence(const std::filesystem::path& keypoints, const RunConfig& config,
                                  const SkeletonTopology& topology, bool with_labels);
/// The same steps for an in-memory pixel-space sequence.
SkeletonSequence prepare_sequence(const SkeletonSequence& raw, const RunConfig& config,
                                  const SkeletonTopology& topology);

struct SequencePrediction {
  std::string id;
  std::vector<int> labels;
  Tensor probabilities;  // [T, 3]
};

SequencePrediction predict_sequence(const ModelParams& params, const ModelConfig& config,
                                    const PartitionedAdjacency& adjacency, const SkeletonSequence& seq,
                                    double window_seconds, std::size_t batch_size);

/// Mean F1 over the gesture classes that occur in the ground truth or the
/// prediction; 1 when neither has any gesture.
double segment_f1(const EvalReport& report, double k = 0.5);

struct EvaluationSummary {
  double loss = 0.0;  // combined loss over valid frames, infer mode
  EvalReport report;  // pooled over sequences
  double f1 = 0.0;    // segment_f1 at k = 0.5
};

EvaluationSummary evaluate_sequences(const ModelParams& params, const ModelConfig& config,
                                     const PartitionedAdjacency& adjacency,
                                     const std::vector<SkeletonSequence>& sequences, double window_seconds,
                                     std::size_t batch_size);

struct TrainOptions {
  std::filesystem::path out_dir;              // empty: keep everything in memory
  std::optional<std::filesystem::path> resume;
  std::function<void(const nlohmann::json&)> on_epoch;
};

struct TrainResult {
  Checkpoint best;
  Checkpoint final;
  std::vector<nlohmann::json> log;
};

/// Trains on labeled, prepared sequences. Per epoch: shuffled train-mode
/// windows, minibatch Adam, then validation on float32-rounded weights.
TrainResult train_model(const RunConfig& config, const std::vector<SkeletonSequence>& train,
                        const std::vector<SkeletonSequence>& val, const TrainOptions& options);

/// Loads config.train_files / val_files and calls train_model.
TrainResult train_from_files(const RunConfig& config, const TrainOptions& options);

}  // namespace intake
