#pragma once

#include <cstddef>

#include "intake/tensor.hpp"

namespace intake {

/// One LSTM direction (borrowed views). Gate blocks are ordered
/// (input, forget, cell, output).
struct LstmWeights {
  const Tensor& w_input;   // [4H, F]
  const Tensor& w_hidden;  // [4H, H]
  const Tensor& bias;      // [4H]
};

struct LstmDirectionCache {
  Tensor gates;   // [N, T, 4H] post-activation (i, f, g, o)
  Tensor cell;    // [N, T, H]
  Tensor hidden;  // [N, T, H]
};

struct BiLstmCache {
  LstmDirectionCache forward;
  LstmDirectionCache backward;
};

/// Bidirectional LSTM over [N, T, F] with zero initial states; returns
/// [N, T, 2H] with the forward direction in the first H features.
Tensor bilstm_forward(const Tensor& input, const LstmWeights& forward, const LstmWeights& backward,
                      std::size_t hidden, BiLstmCache* cache = nullptr);

struct LstmWeightsGrad {
  Tensor w_input;
  Tensor w_hidden;
  Tensor bias;
};

struct BiLstmGrad {
  Tensor input;
  LstmWeightsGrad forward;
  LstmWeightsGrad backward;
};

/// Backpropagation through time for both directions.
BiLstmGrad bilstm_backward(const Tensor& input, const LstmWeights& forward, const LstmWeights& backward,
                           std::size_t hidden, const BiLstmCache& cache, const Tensor& grad_output);

}  // namespace intake
