#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "intake/eval.hpp"
#include "intake/run_config.hpp"
#include "intake/synth.hpp"
#include "intake/training.hpp"

namespace intake {

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthRequest {
  std::size_t count = 20;
  std::uint64_t seed = 0;
  std::string prefix = "seq";
  SynthConfig base;  // seed field is replaced per sequence
};

/// Seed of sequence `index` in a dataset generated from `seed`.
std::uint64_t dataset_sequence_seed(std::uint64_t seed, std::size_t index);

/// Writes <id>.keypoints.jsonl and <id>.labels.csv per sequence plus
/// manifest.json; returns the manifest.
nlohmann::json cmd_synth(const SynthRequest& request, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

/// Writes out_dir/metrics.jsonl, out_dir/best/ and out_dir/final/.
TrainResult cmd_train(const RunConfig& config, const std::filesystem::path& out_dir,
                      const std::optional<std::filesystem::path>& resume = std::nullopt);

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

struct PredictRequest {
  std::filesystem::path checkpoint;
  std::vector<std::string> inputs;  // keypoint files or directories
  std::size_t batch_size = 64;
};

/// One <id>.pred.csv per input in out_dir; returns the written paths.
std::vector<std::filesystem::path> cmd_predict(const PredictRequest& request, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalRequest {
  std::vector<std::string> ground_truth;  // label files or directories
  std::vector<std::string> predictions;   // prediction files or directories
  std::vector<double> thresholds = kDefaultIouThresholds;
};

struct EvalOutcome {
  std::vector<std::pair<std::string, EvalReport>> per_sequence;  // sorted by id
  EvalReport pooled;
};

EvalOutcome cmd_eval(const EvalRequest& request);
nlohmann::json eval_to_json(const EvalOutcome& outcome);

// ---------------------------------------------------------------------------
// inspect-graph
// ---------------------------------------------------------------------------

/// Topology, hop distances from the root and per-partition row sums.
nlohmann::json cmd_inspect_graph(const std::set<BodyPart>& parts, std::optional<int> root_source = std::nullopt);

// ---------------------------------------------------------------------------

/// Command-line entry point. On failure writes one line
/// `error: {"command": ..., "kind": ..., "message": ...}` to `err` and
/// returns nonzero.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace intake
