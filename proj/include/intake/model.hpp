#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "intake/graph.hpp"
#include "intake/layers.hpp"
#include "intake/losses.hpp"
#include "intake/lstm.hpp"
#include "intake/optim.hpp"
#include "intake/rng.hpp"
#include "intake/tensor.hpp"

namespace intake {

enum class TcnMode { basic, dilated };

std::string_view to_string(TcnMode mode);
TcnMode parse_tcn_mode(std::string_view name);

struct BlockConfig {
  std::size_t out_channels = 64;
  std::size_t dilation = 1;
  double dropout_rate = 0.15;
  std::size_t temporal_kernel = 3;  // odd
};

/// Architecture description. `blocks` holds the dilated-mode layout; basic
/// mode forces every dilation to 1 and uses `basic_kernel`.
struct ModelConfig {
  std::vector<BlockConfig> blocks;
  std::size_t node_count = kFullNodeCount;
  std::size_t in_channels = 3;
  std::size_t class_count = 3;
  std::size_t bilstm_hidden = 256;
  std::vector<std::size_t> dense_widths{128, 128};
  TcnMode tcn_mode = TcnMode::dilated;
  std::size_t basic_kernel = 9;
  double smoothing_lambda = 0.15;
  double smoothing_tau = 4.0;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  bool train_edge_importance = true;

  /// The 10-block ST-GCN-BiLSTM layout.
  static ModelConfig table_one(std::size_t node_count = kFullNodeCount, TcnMode mode = TcnMode::dilated);

  /// Blocks with the mode's effective kernel and dilation applied.
  std::vector<BlockConfig> resolved_blocks() const;
  /// Throws std::invalid_argument on an unusable configuration.
  void validate() const;
  /// True when channels, dilations and dropout match the reference 10-block layout.
  bool matches_table_one() const;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& doc);

struct NormParams {
  Param scale;
  Param shift;
  BatchNormStats stats;
};

struct BlockParams {
  std::array<Param, kPartitionCount> gcn_weight;  // [C_out, C_in] each
  Param gcn_bias;                                 // [C_out]
  Param importance;                               // [3, V, V], starts at 1
  NormParams bn_graph;
  Param tcn_kernel;  // [C_out, C_out, K]
  Param tcn_bias;    // [C_out]
  NormParams bn_temporal;
  bool has_projection = false;
  Param residual_weight;  // [C_out, C_in, 1] when has_projection
  Param residual_bias;    // [C_out]
};

struct LstmParams {
  Param w_input;
  Param w_hidden;
  Param bias;

  LstmWeights view() const { return {w_input.value, w_hidden.value, bias.value}; }
};

struct ModelParams {
  NormParams input_bn;  // over the (V * C) input feature plane
  std::vector<BlockParams> blocks;
  LstmParams lstm_forward;
  LstmParams lstm_backward;
  std::vector<Param> dense_weight;  // [F_in, F_out]
  std::vector<Param> dense_bias;

  /// Every trainable tensor in a fixed order.
  std::vector<Param*> all();
  std::vector<const Param*> all() const;
  /// Non-trainable state (batch-norm running statistics), fixed order.
  std::vector<std::pair<std::string, Tensor*>> buffers();
  std::vector<std::pair<std::string, const Tensor*>> buffers() const;

  std::size_t parameter_count() const;
  void zero_grad();
};

/// Fan-in scaled uniform weights, zero biases, unit batch-norm scale and
/// all-ones edge importance. Deterministic in `rng`.
ModelParams init_params(const ModelConfig& config, const RngStream& rng);

// ---------------------------------------------------------------------------
// ST-GCN block
// ---------------------------------------------------------------------------

struct BlockCache {
  Tensor input;
  std::array<Tensor, kPartitionCount> adjacency;  // normalized partition * importance
  BatchNormCache bn_graph;
  Tensor temporal_input;     // relu + dropout of the bn_graph output
  double keep_scale = 1.0;   // dropout survivor multiplier
  BatchNormCache bn_temporal;
  Tensor output;
};

Tensor stgcn_block_forward(Tensor input, const BlockParams& params, const BlockConfig& block,
                           const PartitionedAdjacency& adjacency, const RngStream& rng, Mode mode, double bn_eps,
                           BlockCache* cache = nullptr);

/// Accumulates parameter gradients into `params` and returns the input gradient.
Tensor stgcn_block_backward(const BlockCache& cache, BlockParams& params, const BlockConfig& block,
                            const PartitionedAdjacency& adjacency, const Tensor& grad_output);

// ---------------------------------------------------------------------------
// Full network
// ---------------------------------------------------------------------------

struct ForwardCache {
  Tensor input_plane;  // [N, V*C, T]
  BatchNormCache input_bn;
  std::vector<BlockCache> blocks;
  Tensor lstm_input;  // [N, T, C*V]
  BiLstmCache lstm;
  std::vector<Tensor> dense_input;
  std::vector<Tensor> dense_output;
  Tensor logits;
};

/// Block stack only: [N, T, V, C] -> [N, C_last, T, V].
Tensor stgcn_features(const Tensor& input, const ModelParams& params, const ModelConfig& config,
                      const PartitionedAdjacency& adjacency, const RngStream& rng, Mode mode,
                      ForwardCache* cache = nullptr);

/// [N, T, V, C] -> per-frame logits [N, T, class_count].
Tensor model_forward(const Tensor& input, const ModelParams& params, const ModelConfig& config,
                     const PartitionedAdjacency& adjacency, const RngStream& rng, Mode mode,
                     ForwardCache* cache = nullptr);

/// Accumulates every parameter gradient for d(loss)/d(logits) = grad_logits.
void model_backward(const ForwardCache& cache, ModelParams& params, const ModelConfig& config,
                    const PartitionedAdjacency& adjacency, const Tensor& grad_logits);

/// Folds the batch statistics of a train-mode forward into the running statistics.
void apply_running_stats(ModelParams& params, const ForwardCache& cache, const ModelConfig& config);

struct LossResult {
  double total = 0.0;
  double classification = 0.0;
  double smoothing = 0.0;
  Tensor grad_logits;
  Tensor probabilities;
};

/// total = cross entropy + lambda * truncated MSE smoothing on log-softmax outputs.
LossResult compute_loss(const Tensor& logits, std::span<const int> labels, FrameMask mask, const ModelConfig& config);

struct LossRecord {
  double total = 0.0;
  double classification = 0.0;
  double smoothing = 0.0;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Forward (train mode), loss, backward, Adam on every trainable Param, then
/// clears gradients. Throws NonFiniteError naming the first non-finite tensor.
LossRecord train_step(ModelParams& params, const Tensor& inputs, std::span<const int> labels, FrameMask mask,
                      const ModelConfig& config, const PartitionedAdjacency& adjacency, const RngStream& rng,
                      const AdamSettings& adam);

/// Infer-mode softmax probabilities [N, T, class_count].
Tensor predict_frames(const ModelParams& params, const Tensor& windows, const ModelConfig& config,
                      const PartitionedAdjacency& adjacency);

}  // namespace intake
