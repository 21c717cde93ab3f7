#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "intake/tensor.hpp"

namespace intake {

/// Per-frame validity for [N, T] tensors; 0 marks a padded frame that is excluded.
using FrameMask = std::span<const std::uint8_t>;

/// Softmax over the trailing axis of [N, T, C].
Tensor softmax(const Tensor& logits);
Tensor log_softmax(const Tensor& logits);
/// Pulls a gradient on log_softmax(z) back to z.
Tensor log_softmax_backward(const Tensor& log_probs, const Tensor& grad_log_probs);

struct CrossEntropyResult {
  double loss = 0.0;
  Tensor probabilities;  // [N, T, C]
  Tensor grad_logits;    // (p - onehot) / count on valid frames, 0 elsewhere
  std::size_t count = 0;
};

/// Mean negative log-likelihood over valid frames.
CrossEntropyResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels, FrameMask mask);

struct SmoothingResult {
  double loss = 0.0;
  Tensor grad_log_probs;  // [N, T, C]
  std::size_t pair_count = 0;
};

/// Mean over classes and valid adjacent frame pairs of
/// min(tau, |log p_t - log p_{t-1}|)^2, with frame t-1 held constant.
SmoothingResult truncated_mse_smoothing(const Tensor& log_probs, double tau, FrameMask mask);

}  // namespace intake
