#include "intake/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace intake {

namespace {

void check_frames(const Tensor& t, std::size_t mask_size, const char* who) {
  if (t.rank() != 3) throw std::invalid_argument(std::string(who) + ": expected [N, T, C]");
  if (mask_size != t.dim(0) * t.dim(1)) throw std::invalid_argument(std::string(who) + ": mask must be [N, T]");
}

}  // namespace

Tensor log_softmax(const Tensor& logits) {
  const std::size_t classes = logits.shape().back();
  const std::size_t rows = logits.size() / classes;
  Tensor out = Tensor::like(logits);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = logits.data() + r * classes;
    double* y = out.data() + r * classes;
    const double mx = *std::max_element(z, z + classes);
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) s += std::exp(z[c] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < classes; ++c) y[c] = z[c] - lse;
  }
  return out;
}

Tensor softmax(const Tensor& logits) {
  Tensor out = log_softmax(logits);
  const std::size_t classes = logits.shape().back();
  const std::size_t rows = logits.size() / classes;
  for (std::size_t r = 0; r < rows; ++r) {
    double* y = out.data() + r * classes;
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      y[c] = std::exp(y[c]);
      s += y[c];
    }
    for (std::size_t c = 0; c < classes; ++c) y[c] /= s;
  }
  return out;
}

Tensor log_softmax_backward(const Tensor& log_probs, const Tensor& grad_log_probs) {
  const std::size_t classes = log_probs.shape().back();
  const std::size_t rows = log_probs.size() / classes;
  Tensor out = Tensor::like(log_probs);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* lp = log_probs.data() + r * classes;
    const double* g = grad_log_probs.data() + r * classes;
    double gsum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) gsum += g[c];
    for (std::size_t c = 0; c < classes; ++c) out[r * classes + c] = g[c] - std::exp(lp[c]) * gsum;
  }
  return out;
}

CrossEntropyResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels, FrameMask mask) {
  check_frames(logits, mask.size(), "softmax_cross_entropy");
  const std::size_t frames = logits.dim(0) * logits.dim(1), classes = logits.dim(2);
  if (labels.size() != frames) throw std::invalid_argument("softmax_cross_entropy: labels must be [N, T]");

  CrossEntropyResult result;
  for (std::size_t f = 0; f < frames; ++f) result.count += mask[f] ? 1 : 0;
  if (result.count == 0) throw std::invalid_argument("softmax_cross_entropy: every frame is masked");

  const Tensor lp = log_softmax(logits);
  result.probabilities = softmax(logits);
  result.grad_logits = Tensor::like(logits);
  const double inv = 1.0 / static_cast<double>(result.count);
  double total = 0.0;
  for (std::size_t f = 0; f < frames; ++f) {
    if (!mask[f]) continue;
    const int y = labels[f];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(y) + " out of range");
    }
    total -= lp[f * classes + static_cast<std::size_t>(y)];
    for (std::size_t c = 0; c < classes; ++c) {
      const double onehot = static_cast<std::size_t>(y) == c ? 1.0 : 0.0;
      result.grad_logits[f * classes + c] = (result.probabilities[f * classes + c] - onehot) * inv;
    }
  }
  result.loss = total * inv;
  return result;
}

SmoothingResult truncated_mse_smoothing(const Tensor& log_probs, double tau, FrameMask mask) {
  if (!(tau > 0.0)) throw std::invalid_argument("truncated_mse_smoothing: tau must be positive");
  check_frames(log_probs, mask.size(), "truncated_mse_smoothing");
  const std::size_t batch = log_probs.dim(0), time = log_probs.dim(1), classes = log_probs.dim(2);
  if (time < 2) throw std::invalid_argument("truncated_mse_smoothing: needs T >= 2");

  SmoothingResult result;
  result.grad_log_probs = Tensor::like(log_probs);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t t = 1; t < time; ++t) {
      if (mask[n * time + t] && mask[n * time + t - 1]) ++result.pair_count;
    }
  }
  if (result.pair_count == 0) return result;

  const double denom = static_cast<double>(result.pair_count * classes);
  double total = 0.0;
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t t = 1; t < time; ++t) {
      if (!mask[n * time + t] || !mask[n * time + t - 1]) continue;
      const std::size_t cur = (n * time + t) * classes;
      const std::size_t prev = cur - classes;
      for (std::size_t c = 0; c < classes; ++c) {
        const double delta = log_probs[cur + c] - log_probs[prev + c];
        if (std::abs(delta) > tau) {
          total += tau * tau;
        } else {
          total += delta * delta;
          result.grad_log_probs[cur + c] = 2.0 * delta / denom;
        }
      }
    }
  }
  result.loss = total / denom;
  return result;
}

}  // namespace intake
