#include "intake/lstm.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace intake {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_weights(const LstmWeights& w, std::size_t features, std::size_t hidden) {
  const std::size_t g = 4 * hidden;
  if (w.w_input.rank() != 2 || w.w_input.dim(0) != g || w.w_input.dim(1) != features) {
    throw std::invalid_argument("bilstm: w_input must be [4H, F] = [" + std::to_string(g) + ", " +
                                std::to_string(features) + "], got " + w.w_input.shape_string());
  }
  if (w.w_hidden.rank() != 2 || w.w_hidden.dim(0) != g || w.w_hidden.dim(1) != hidden) {
    throw std::invalid_argument("bilstm: w_hidden must be [4H, H], got " + w.w_hidden.shape_string());
  }
  if (w.bias.size() != g) throw std::invalid_argument("bilstm: bias must have 4H entries");
}

std::size_t step_time(std::size_t step, std::size_t time, bool reverse) { return reverse ? time - 1 - step : step; }

// Runs one direction and writes its hidden states into columns
// [column, column + H) of the [N, T, 2H] output.
void run_direction(const Tensor& input, const LstmWeights& w, std::size_t hidden, bool reverse, Tensor& output,
                   std::size_t column, LstmDirectionCache& cache) {
  const std::size_t batch = input.dim(0), time = input.dim(1), features = input.dim(2);
  const std::size_t g4 = 4 * hidden;
  RowMatrix pre = as_matrix(input.data(), batch * time, features) * as_matrix(w.w_input.data(), g4, features).transpose();
  pre.rowwise() += as_matrix(w.bias.data(), 1, g4).row(0);

  cache.gates = Tensor({batch, time, g4});
  cache.cell = Tensor({batch, time, hidden});
  cache.hidden = Tensor({batch, time, hidden});
  auto w_hidden = as_matrix(w.w_hidden.data(), g4, hidden);

  RowMatrix h = RowMatrix::Zero(batch, hidden);
  RowMatrix c = RowMatrix::Zero(batch, hidden);
  RowMatrix a(batch, g4);
  for (std::size_t s = 0; s < time; ++s) {
    const std::size_t t = step_time(s, time, reverse);
    for (std::size_t n = 0; n < batch; ++n) a.row(n) = pre.row(n * time + t);
    a.noalias() += h * w_hidden.transpose();
    for (std::size_t n = 0; n < batch; ++n) {
      double* gates = cache.gates.data() + (n * time + t) * g4;
      double* cell = cache.cell.data() + (n * time + t) * hidden;
      double* hid = cache.hidden.data() + (n * time + t) * hidden;
      double* out = output.data() + (n * time + t) * 2 * hidden + column;
      for (std::size_t j = 0; j < hidden; ++j) {
        const double ig = sigmoid(a(n, j));
        const double fg = sigmoid(a(n, hidden + j));
        const double gg = std::tanh(a(n, 2 * hidden + j));
        const double og = sigmoid(a(n, 3 * hidden + j));
        const double cn = fg * c(n, j) + ig * gg;
        const double hn = og * std::tanh(cn);
        gates[j] = ig;
        gates[hidden + j] = fg;
        gates[2 * hidden + j] = gg;
        gates[3 * hidden + j] = og;
        cell[j] = cn;
        hid[j] = hn;
        out[j] = hn;
        c(n, j) = cn;
        h(n, j) = hn;
      }
    }
  }
}

void backprop_direction(const Tensor& input, const LstmWeights& w, std::size_t hidden, bool reverse,
                        const LstmDirectionCache& cache, const Tensor& grad_output, std::size_t column,
                        Tensor& grad_input, LstmWeightsGrad& grad) {
  const std::size_t batch = input.dim(0), time = input.dim(1), features = input.dim(2);
  const std::size_t g4 = 4 * hidden;
  auto w_hidden = as_matrix(w.w_hidden.data(), g4, hidden);

  RowMatrix d_pre(batch * time, g4);
  RowMatrix dh_rec = RowMatrix::Zero(batch, hidden);
  RowMatrix dc_rec = RowMatrix::Zero(batch, hidden);
  RowMatrix da(batch, g4);
  RowMatrix h_prev(batch, hidden);
  RowMatrix dw_hidden = RowMatrix::Zero(g4, hidden);

  for (std::size_t s = time; s-- > 0;) {
    const std::size_t t = step_time(s, time, reverse);
    const bool has_prev = s > 0;
    const std::size_t tp = has_prev ? step_time(s - 1, time, reverse) : 0;
    for (std::size_t n = 0; n < batch; ++n) {
      const double* gates = cache.gates.data() + (n * time + t) * g4;
      const double* cell = cache.cell.data() + (n * time + t) * hidden;
      const double* c_prev = has_prev ? cache.cell.data() + (n * time + tp) * hidden : nullptr;
      const double* h_p = has_prev ? cache.hidden.data() + (n * time + tp) * hidden : nullptr;
      const double* dy = grad_output.data() + (n * time + t) * 2 * hidden + column;
      for (std::size_t j = 0; j < hidden; ++j) {
        const double ig = gates[j], fg = gates[hidden + j], gg = gates[2 * hidden + j], og = gates[3 * hidden + j];
        const double tc = std::tanh(cell[j]);
        const double dh = dy[j] + dh_rec(n, j);
        const double dc = dc_rec(n, j) + dh * og * (1.0 - tc * tc);
        const double cp = c_prev ? c_prev[j] : 0.0;
        da(n, j) = dc * gg * ig * (1.0 - ig);
        da(n, hidden + j) = dc * cp * fg * (1.0 - fg);
        da(n, 2 * hidden + j) = dc * ig * (1.0 - gg * gg);
        da(n, 3 * hidden + j) = dh * tc * og * (1.0 - og);
        dc_rec(n, j) = dc * fg;
        h_prev(n, j) = h_p ? h_p[j] : 0.0;
      }
      d_pre.row(n * time + t) = da.row(n);
    }
    dw_hidden.noalias() += da.transpose() * h_prev;
    dh_rec.noalias() = da * w_hidden;
  }

  grad.w_input = Tensor({g4, features});
  grad.w_hidden = Tensor({g4, hidden});
  grad.bias = Tensor({g4});
  as_matrix(grad.w_input.data(), g4, features).noalias() =
      d_pre.transpose() * as_matrix(input.data(), batch * time, features);
  as_matrix(grad.w_hidden.data(), g4, hidden) = dw_hidden;
  as_matrix(grad.bias.data(), 1, g4) = d_pre.colwise().sum();
  as_matrix(grad_input.data(), batch * time, features).noalias() +=
      d_pre * as_matrix(w.w_input.data(), g4, features);
}

}  // namespace

Tensor bilstm_forward(const Tensor& input, const LstmWeights& forward, const LstmWeights& backward,
                      std::size_t hidden, BiLstmCache* cache) {
  if (hidden == 0) throw std::invalid_argument("bilstm: hidden size must be positive");
  if (input.rank() != 3) throw std::invalid_argument("bilstm: input must be [N, T, F]");
  check_weights(forward, input.dim(2), hidden);
  check_weights(backward, input.dim(2), hidden);
  Tensor out({input.dim(0), input.dim(1), 2 * hidden});
  BiLstmCache local;
  run_direction(input, forward, hidden, false, out, 0, local.forward);
  run_direction(input, backward, hidden, true, out, hidden, local.backward);
  if (cache) *cache = std::move(local);
  return out;
}

BiLstmGrad bilstm_backward(const Tensor& input, const LstmWeights& forward, const LstmWeights& backward,
                           std::size_t hidden, const BiLstmCache& cache, const Tensor& grad_output) {
  if (grad_output.rank() != 3 || grad_output.dim(2) != 2 * hidden) {
    throw std::invalid_argument("bilstm_backward: gradient must be [N, T, 2H]");
  }
  BiLstmGrad grad;
  grad.input = Tensor::like(input);
  backprop_direction(input, forward, hidden, false, cache.forward, grad_output, 0, grad.input, grad.forward);
  backprop_direction(input, backward, hidden, true, cache.backward, grad_output, hidden, grad.input, grad.backward);
  return grad;
}

}  // namespace intake
