#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "intake/rng.hpp"
#include "intake/tensor.hpp"

namespace intake {

enum class Mode { train, infer };

// ---------------------------------------------------------------------------
// Dense: affine map over the trailing dimension. weight is [F_in, F_out].
// ---------------------------------------------------------------------------

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias);

struct DenseGrad {
  Tensor input;
  Tensor weight;
  Tensor bias;
};

DenseGrad dense_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_output);

// ---------------------------------------------------------------------------
// Non-causal dilated convolution along the time axis.
//
// input is [N, C_in, T] or [N, C_in, T, V]; with a trailing V axis every node
// is convolved independently with the same kernel. kernel is [C_out, C_in, K]
// with K odd; zero padding of dilation * (K - 1) / 2 on both ends keeps T.
// ---------------------------------------------------------------------------

Tensor conv1d_dilated(const Tensor& input, const Tensor& kernel, std::size_t dilation);

struct ConvGrad {
  Tensor input;
  Tensor kernel;
};

ConvGrad conv1d_dilated_backward(const Tensor& input, const Tensor& kernel, std::size_t dilation,
                                 const Tensor& grad_output);

/// Adds bias[c] to every element of channel c of a [N, C, ...] tensor.
void add_channel_bias(Tensor& output, const Tensor& bias);
/// Sums a [N, C, ...] gradient per channel.
Tensor channel_sum(const Tensor& grad_output);

// ---------------------------------------------------------------------------
// Batch normalization over [N, C, ...], statistics per channel C.
// ---------------------------------------------------------------------------

struct BatchNormStats {
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C]

  static BatchNormStats identity(std::size_t channels);
};

struct BatchNormCache {
  Mode mode = Mode::infer;
  Tensor normalized;
  std::vector<double> batch_mean;
  std::vector<double> batch_var;  // biased
  std::vector<double> inv_std;
  std::size_t per_channel = 0;
};

Tensor batch_norm(const Tensor& input, const Tensor& scale, const Tensor& shift, const BatchNormStats& stats,
                  Mode mode, double eps, BatchNormCache* cache = nullptr);

/// running <- (1 - momentum) * running + momentum * batch (unbiased variance).
void update_running_stats(BatchNormStats& stats, const BatchNormCache& cache, double momentum);

struct BatchNormGrad {
  Tensor input;
  Tensor scale;
  Tensor shift;
};

BatchNormGrad batch_norm_backward(const BatchNormCache& cache, const Tensor& scale, const Tensor& grad_output);

// ---------------------------------------------------------------------------
// Elementwise activations and dropout.
// ---------------------------------------------------------------------------

Tensor relu(const Tensor& input);
/// Gradient of relu; the subgradient at 0 is 0.
Tensor relu_backward(const Tensor& input, const Tensor& grad_output);

/// Inverted dropout. In train mode element i is kept iff rng.uniform_at(i) >= rate
/// and survivors are scaled by 1 / (1 - rate). `mask` receives the per-element
/// multiplier (empty when the op is the identity).
Tensor dropout(const Tensor& input, double rate, const RngStream& rng, Mode mode, Tensor* mask = nullptr);
Tensor dropout_backward(const Tensor& mask, const Tensor& grad_output);

/// dropout(relu(input)) in one pass, reusing the input buffer. `keep_scale`
/// receives the survivor multiplier (1 when dropout is the identity).
Tensor relu_dropout(Tensor input, double rate, const RngStream& rng, Mode mode, double* keep_scale = nullptr);
/// Gradient of relu_dropout from its output: dy * keep_scale where the output is nonzero.
Tensor relu_dropout_backward(const Tensor& output, const Tensor& grad_output, double keep_scale);

// ---------------------------------------------------------------------------
// Partitioned graph convolution over [N, C_in, T, V]:
//   y[n,o,t,i] = b[o] + sum_p sum_c W_p[o,c] sum_j A_p[i,j] x[n,c,t,j]
// ---------------------------------------------------------------------------

Tensor graph_conv(const Tensor& input, std::span<const Tensor> weights, const Tensor& bias,
                  std::span<const Tensor> adjacency);

/// Adjacency gradients are only formed where `pattern` (default: `adjacency`)
/// is nonzero; other entries are reported as 0.
struct GraphConvGrad {
  Tensor input;
  std::vector<Tensor> weights;
  Tensor bias;
  std::vector<Tensor> adjacency;
};

GraphConvGrad graph_conv_backward(const Tensor& input, std::span<const Tensor> weights,
                                  std::span<const Tensor> adjacency, const Tensor& grad_output,
                                  std::span<const Tensor> pattern = {});

}  // namespace intake
