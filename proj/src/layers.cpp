#include "intake/layers.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace intake {

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

struct ConvGeometry {
  std::size_t batch, in_channels, out_channels, time, nodes, taps;
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& kernel, std::size_t dilation) {
  require(input.rank() == 3 || input.rank() == 4, "conv1d_dilated: input must be [N, C, T] or [N, C, T, V]");
  require(kernel.rank() == 3, "conv1d_dilated: kernel must be [C_out, C_in, K]");
  require(kernel.dim(1) == input.dim(1), "conv1d_dilated: kernel C_in " + std::to_string(kernel.dim(1)) +
                                             " does not match input channels " + std::to_string(input.dim(1)));
  require(kernel.dim(2) % 2 == 1, "conv1d_dilated: kernel size must be odd for symmetric padding");
  require(dilation >= 1, "conv1d_dilated: dilation must be >= 1");
  return {input.dim(0), input.dim(1), kernel.dim(0), input.dim(2), input.rank() == 4 ? input.dim(3) : 1,
          kernel.dim(2)};
}

// Kernel tap k as a contiguous [C_out, C_in] matrix.
std::vector<RowMatrix> kernel_taps(const Tensor& kernel) {
  const std::size_t co = kernel.dim(0), ci = kernel.dim(1), taps = kernel.dim(2);
  std::vector<RowMatrix> out(taps, RowMatrix(co, ci));
  for (std::size_t o = 0; o < co; ++o) {
    for (std::size_t c = 0; c < ci; ++c) {
      for (std::size_t k = 0; k < taps; ++k) out[k](o, c) = kernel[(o * ci + c) * taps + k];
    }
  }
  return out;
}

struct TapRange {
  Eigen::Index out_col, in_col, len;
};

// Columns of the flattened (T * V) axis touched by tap k.
TapRange tap_range(const ConvGeometry& g, std::size_t k, std::size_t dilation) {
  const long long half = static_cast<long long>(g.taps - 1) / 2;
  const long long offset = (static_cast<long long>(k) - half) * static_cast<long long>(dilation);
  const long long t = static_cast<long long>(g.time);
  const long long lo = std::max(0LL, -offset);
  const long long hi = std::min(t, t - offset);
  if (hi <= lo) return {0, 0, 0};
  const long long v = static_cast<long long>(g.nodes);
  return {lo * v, (lo + offset) * v, (hi - lo) * v};
}

}  // namespace

// ---------------------------------------------------------------------------

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require(input.rank() >= 1 && weight.rank() == 2 && bias.rank() == 1, "dense: bad ranks");
  const std::size_t f_in = weight.dim(0), f_out = weight.dim(1);
  require(input.shape().back() == f_in, "dense: trailing dimension " + std::to_string(input.shape().back()) +
                                            " does not match F_in " + std::to_string(f_in));
  require(bias.dim(0) == f_out, "dense: bias length does not match F_out");
  const std::size_t rows = input.size() / f_in;
  auto shape = input.shape();
  shape.back() = f_out;
  Tensor out(shape);
  auto y = as_matrix(out.data(), rows, f_out);
  y.noalias() = as_matrix(input.data(), rows, f_in) * as_matrix(weight.data(), f_in, f_out);
  y.rowwise() += as_matrix(bias.data(), 1, f_out).row(0);
  return out;
}

DenseGrad dense_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_output) {
  const std::size_t f_in = weight.dim(0), f_out = weight.dim(1);
  require(grad_output.shape().back() == f_out, "dense_backward: gradient trailing dimension mismatch");
  const std::size_t rows = input.size() / f_in;
  DenseGrad g{Tensor::like(input), Tensor::like(weight), Tensor({f_out})};
  auto dy = as_matrix(grad_output.data(), rows, f_out);
  as_matrix(g.input.data(), rows, f_in).noalias() = dy * as_matrix(weight.data(), f_in, f_out).transpose();
  as_matrix(g.weight.data(), f_in, f_out).noalias() = as_matrix(input.data(), rows, f_in).transpose() * dy;
  as_matrix(g.bias.data(), 1, f_out) = dy.colwise().sum();
  return g;
}

// ---------------------------------------------------------------------------

Tensor conv1d_dilated(const Tensor& input, const Tensor& kernel, std::size_t dilation) {
  const ConvGeometry g = conv_geometry(input, kernel, dilation);
  auto shape = input.shape();
  shape[1] = g.out_channels;
  Tensor out(shape);
  const auto taps = kernel_taps(kernel);
  const std::size_t cols = g.time * g.nodes;
  for (std::size_t n = 0; n < g.batch; ++n) {
    auto x = as_matrix(input.data() + n * g.in_channels * cols, g.in_channels, cols);
    auto y = as_matrix(out.data() + n * g.out_channels * cols, g.out_channels, cols);
    for (std::size_t k = 0; k < g.taps; ++k) {
      const TapRange r = tap_range(g, k, dilation);
      if (r.len == 0) continue;
      y.middleCols(r.out_col, r.len).noalias() += taps[k] * x.middleCols(r.in_col, r.len);
    }
  }
  return out;
}

ConvGrad conv1d_dilated_backward(const Tensor& input, const Tensor& kernel, std::size_t dilation,
                                 const Tensor& grad_output) {
  const ConvGeometry g = conv_geometry(input, kernel, dilation);
  require(grad_output.dim(1) == g.out_channels && grad_output.size() / g.out_channels == input.size() / g.in_channels,
          "conv1d_dilated_backward: gradient shape mismatch");
  const auto taps = kernel_taps(kernel);
  std::vector<RowMatrix> tap_grads(g.taps, RowMatrix::Zero(g.out_channels, g.in_channels));
  ConvGrad grad{Tensor::like(input), Tensor::like(kernel)};
  const std::size_t cols = g.time * g.nodes;
  for (std::size_t n = 0; n < g.batch; ++n) {
    auto x = as_matrix(input.data() + n * g.in_channels * cols, g.in_channels, cols);
    auto dx = as_matrix(grad.input.data() + n * g.in_channels * cols, g.in_channels, cols);
    auto dy = as_matrix(grad_output.data() + n * g.out_channels * cols, g.out_channels, cols);
    for (std::size_t k = 0; k < g.taps; ++k) {
      const TapRange r = tap_range(g, k, dilation);
      if (r.len == 0) continue;
      dx.middleCols(r.in_col, r.len).noalias() += taps[k].transpose() * dy.middleCols(r.out_col, r.len);
      tap_grads[k].noalias() += dy.middleCols(r.out_col, r.len) * x.middleCols(r.in_col, r.len).transpose();
    }
  }
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    for (std::size_t c = 0; c < g.in_channels; ++c) {
      for (std::size_t k = 0; k < g.taps; ++k) grad.kernel[(o * g.in_channels + c) * g.taps + k] = tap_grads[k](o, c);
    }
  }
  return grad;
}

void add_channel_bias(Tensor& output, const Tensor& bias) {
  require(output.rank() >= 2 && bias.size() == output.dim(1), "add_channel_bias: channel count mismatch");
  const std::size_t batch = output.dim(0), channels = output.dim(1);
  const std::size_t inner = output.size() / (batch * channels);
  double* y = output.data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double b = bias[c];
      double* row = y + (n * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) row[i] += b;
    }
  }
}

Tensor channel_sum(const Tensor& grad_output) {
  const std::size_t batch = grad_output.dim(0), channels = grad_output.dim(1);
  const std::size_t inner = grad_output.size() / (batch * channels);
  Tensor out({channels});
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double* row = grad_output.data() + (n * channels + c) * inner;
      double s = 0.0;
      for (std::size_t i = 0; i < inner; ++i) s += row[i];
      out[c] += s;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

BatchNormStats BatchNormStats::identity(std::size_t channels) {
  return {Tensor({channels}, 0.0), Tensor({channels}, 1.0)};
}

Tensor batch_norm(const Tensor& input, const Tensor& scale, const Tensor& shift, const BatchNormStats& stats,
                  Mode mode, double eps, BatchNormCache* cache) {
  require(eps > 0.0, "batch_norm: eps must be positive");
  require(input.rank() >= 2, "batch_norm: input must be [N, C, ...]");
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  require(scale.size() == channels && shift.size() == channels, "batch_norm: scale/shift length mismatch");
  const std::size_t inner = input.size() / (batch * channels);
  const std::size_t count = batch * inner;
  if (mode == Mode::train) require(count >= 2, "batch_norm: train mode needs at least 2 values per channel");

  std::vector<double> mean(channels), var(channels), inv_std(channels);
  if (mode == Mode::train) {
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < batch; ++n) {
        s += as_matrix(input.data() + (n * channels + c) * inner, 1, inner).sum();
      }
      mean[c] = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t n = 0; n < batch; ++n) {
        ss += (as_matrix(input.data() + (n * channels + c) * inner, 1, inner).array() - mean[c]).square().sum();
      }
      var[c] = ss / static_cast<double>(count);
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = stats.running_mean[c];
      var[c] = stats.running_var[c];
    }
  }
  for (std::size_t c = 0; c < channels; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);

  Tensor out = Tensor::uninitialized(input.shape());
  Tensor normalized = cache ? Tensor::uninitialized(input.shape()) : Tensor();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (n * channels + c) * inner;
      const double* x = input.data() + base;
      double* y = out.data() + base;
      const double mu = mean[c], is = inv_std[c], g = scale[c], b = shift[c];
      if (cache) {
        double* xh = normalized.data() + base;
        for (std::size_t i = 0; i < inner; ++i) {
          xh[i] = (x[i] - mu) * is;
          y[i] = g * xh[i] + b;
        }
      } else {
        for (std::size_t i = 0; i < inner; ++i) y[i] = g * ((x[i] - mu) * is) + b;
      }
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->normalized = std::move(normalized);
    cache->batch_mean = std::move(mean);
    cache->batch_var = std::move(var);
    cache->inv_std = std::move(inv_std);
    cache->per_channel = count;
  }
  return out;
}

void update_running_stats(BatchNormStats& stats, const BatchNormCache& cache, double momentum) {
  if (cache.mode != Mode::train) return;
  const double m = static_cast<double>(cache.per_channel);
  const double unbias = m / std::max(1.0, m - 1.0);
  for (std::size_t c = 0; c < cache.batch_mean.size(); ++c) {
    stats.running_mean[c] = (1.0 - momentum) * stats.running_mean[c] + momentum * cache.batch_mean[c];
    stats.running_var[c] = (1.0 - momentum) * stats.running_var[c] + momentum * cache.batch_var[c] * unbias;
  }
}

BatchNormGrad batch_norm_backward(const BatchNormCache& cache, const Tensor& scale, const Tensor& grad_output) {
  const Tensor& xh = cache.normalized;
  require(grad_output.same_shape(xh), "batch_norm_backward: gradient shape mismatch");
  const std::size_t batch = xh.dim(0), channels = xh.dim(1);
  const std::size_t inner = xh.size() / (batch * channels);
  const double m = static_cast<double>(cache.per_channel);
  const bool train = cache.mode == Mode::train;

  BatchNormGrad g{Tensor::uninitialized(xh.shape()), Tensor({channels}), Tensor({channels})};
  for (std::size_t c = 0; c < channels; ++c) {
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t base = (n * channels + c) * inner;
      auto dy = as_matrix(grad_output.data() + base, 1, inner).array();
      sum_dy += dy.sum();
      sum_dy_xh += (dy * as_matrix(xh.data() + base, 1, inner).array()).sum();
    }
    g.shift[c] = sum_dy;
    g.scale[c] = sum_dy_xh;
    const double k = scale[c] * cache.inv_std[c];
    const double mean_dy = train ? sum_dy / m : 0.0;
    const double mean_dy_xh = train ? sum_dy_xh / m : 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t base = (n * channels + c) * inner;
      const double* dy = grad_output.data() + base;
      const double* x = xh.data() + base;
      double* dx = g.input.data() + base;
      for (std::size_t i = 0; i < inner; ++i) dx[i] = k * (dy[i] - mean_dy - x[i] * mean_dy_xh);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

Tensor relu(const Tensor& input) {
  Tensor out = Tensor::uninitialized(input.shape());
  const double* x = input.data();
  double* y = out.data();
  for (std::size_t i = 0; i < input.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_output) {
  require(input.same_shape(grad_output), "relu_backward: shape mismatch");
  Tensor out = Tensor::uninitialized(input.shape());
  const double* x = input.data();
  const double* dy = grad_output.data();
  double* dx = out.data();
  for (std::size_t i = 0; i < input.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
  return out;
}

Tensor dropout(const Tensor& input, double rate, const RngStream& rng, Mode mode, Tensor* mask) {
  require(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0, 1)");
  if (mode == Mode::infer || rate == 0.0) {
    if (mask) *mask = Tensor();
    return input;
  }
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor m = Tensor::uninitialized(input.shape());
  Tensor out = Tensor::uninitialized(input.shape());
  const double* x = input.data();
  double* mp = m.data();
  double* y = out.data();
  for (std::size_t i = 0; i < input.size(); ++i) {
    mp[i] = rng.uniform_at(i) >= rate ? keep_scale : 0.0;
    y[i] = x[i] * mp[i];
  }
  if (mask) *mask = std::move(m);
  return out;
}

Tensor dropout_backward(const Tensor& mask, const Tensor& grad_output) {
  if (mask.empty()) return grad_output;
  require(mask.same_shape(grad_output), "dropout_backward: shape mismatch");
  Tensor out = Tensor::uninitialized(grad_output.shape());
  const double* mp = mask.data();
  const double* dy = grad_output.data();
  double* dx = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) dx[i] = dy[i] * mp[i];
  return out;
}

Tensor relu_dropout(Tensor input, double rate, const RngStream& rng, Mode mode, double* keep_scale) {
  require(rate >= 0.0 && rate < 1.0, "relu_dropout: rate must be in [0, 1)");
  double* x = input.data();
  const std::size_t n = input.size();
  if (mode == Mode::infer || rate == 0.0) {
    for (std::size_t i = 0; i < n; ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
    if (keep_scale) *keep_scale = 1.0;
    return input;
  }
  const double scale = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < n; ++i) x[i] = x[i] > 0.0 && rng.uniform_at(i) >= rate ? x[i] * scale : 0.0;
  if (keep_scale) *keep_scale = scale;
  return input;
}

Tensor relu_dropout_backward(const Tensor& output, const Tensor& grad_output, double keep_scale) {
  require(output.same_shape(grad_output), "relu_dropout_backward: shape mismatch");
  Tensor out = Tensor::uninitialized(output.shape());
  const double* y = output.data();
  const double* dy = grad_output.data();
  double* dx = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) dx[i] = y[i] != 0.0 ? dy[i] * keep_scale : 0.0;
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct Tap {
  std::size_t i, j;
  double a;
};

// Nonzero entries of each partition; the skeleton graph is sparse, so this
// replaces a dense V x V product per (n, c, t) row.
std::vector<std::vector<Tap>> nonzero_taps(std::span<const Tensor> matrices) {
  std::vector<std::vector<Tap>> out(matrices.size());
  for (std::size_t p = 0; p < matrices.size(); ++p) {
    const std::size_t v = matrices[p].dim(0);
    for (std::size_t i = 0; i < v; ++i) {
      for (std::size_t j = 0; j < v; ++j) {
        const double a = matrices[p][i * v + j];
        if (a != 0.0) out[p].push_back({i, j, a});
      }
    }
  }
  return out;
}

// [C_out, P * C_in] with block p equal to W_p.
RowMatrix stacked_weights(std::span<const Tensor> weights) {
  const std::size_t co = weights[0].dim(0), ci = weights[0].dim(1);
  RowMatrix w(co, weights.size() * ci);
  for (std::size_t p = 0; p < weights.size(); ++p) w.middleCols(p * ci, ci) = as_matrix(weights[p].data(), co, ci);
  return w;
}

// One sample: x is [C_in, T, V], g receives [P, C_in, T, V] with
// g[p, c, t, i] = sum_j A_p[i, j] x[c, t, j]. Works on node-major copies so
// the taps run over contiguous time.
void aggregate_sample(const double* x, std::size_t ci, std::size_t time, std::size_t nodes,
                      const std::vector<std::vector<Tap>>& taps, double* g) {
  RowMatrix xt(nodes, time), yt(nodes, time);
  const std::size_t block = time * nodes;
  for (std::size_t c = 0; c < ci; ++c) {
    xt = as_matrix(x + c * block, time, nodes).transpose();
    for (std::size_t p = 0; p < taps.size(); ++p) {
      yt.setZero();
      for (const Tap& t : taps[p]) yt.row(t.i) += t.a * xt.row(t.j);
      as_matrix(g + (p * ci + c) * block, time, nodes) = yt.transpose();
    }
  }
}

}  // namespace

Tensor graph_conv(const Tensor& input, std::span<const Tensor> weights, const Tensor& bias,
                  std::span<const Tensor> adjacency) {
  require(input.rank() == 4, "graph_conv: input must be [N, C, T, V]");
  require(!weights.empty() && weights.size() == adjacency.size(), "graph_conv: one weight per partition");
  const std::size_t batch = input.dim(0), ci = input.dim(1), time = input.dim(2), nodes = input.dim(3);
  const std::size_t co = weights[0].dim(0);
  const std::size_t parts = weights.size();
  for (std::size_t p = 0; p < parts; ++p) {
    require(weights[p].rank() == 2 && weights[p].dim(0) == co && weights[p].dim(1) == ci,
            "graph_conv: weight must be [C_out, C_in]");
    require(adjacency[p].rank() == 2 && adjacency[p].dim(0) == nodes && adjacency[p].dim(1) == nodes,
            "graph_conv: adjacency has " + adjacency[p].shape_string() + " but input has V = " +
                std::to_string(nodes));
  }
  require(bias.size() == co, "graph_conv: bias length mismatch");

  const auto taps = nonzero_taps(adjacency);
  const std::size_t cols = time * nodes;
  const RowMatrix w = stacked_weights(weights);
  RowMatrix g(parts * ci, cols);
  Tensor out = Tensor::uninitialized({batch, co, time, nodes});
  for (std::size_t n = 0; n < batch; ++n) {
    aggregate_sample(input.data() + n * ci * cols, ci, time, nodes, taps, g.data());
    as_matrix(out.data() + n * co * cols, co, cols).noalias() = w * g;
  }
  add_channel_bias(out, bias);
  return out;
}

GraphConvGrad graph_conv_backward(const Tensor& input, std::span<const Tensor> weights,
                                  std::span<const Tensor> adjacency, const Tensor& grad_output,
                                  std::span<const Tensor> pattern) {
  const std::size_t batch = input.dim(0), ci = input.dim(1), time = input.dim(2), nodes = input.dim(3);
  const std::size_t co = weights[0].dim(0);
  const std::size_t parts = weights.size();
  require(grad_output.rank() == 4 && grad_output.dim(0) == batch && grad_output.dim(1) == co &&
              grad_output.dim(2) == time && grad_output.dim(3) == nodes,
          "graph_conv_backward: gradient shape mismatch");
  require(pattern.empty() || pattern.size() == parts, "graph_conv_backward: one pattern per partition");
  const std::size_t cols = time * nodes;

  const auto taps = nonzero_taps(adjacency);
  // The adjacency gradient is formed on the pattern's nonzeros only.
  const auto where = nonzero_taps(pattern.empty() ? adjacency : pattern);
  std::vector<std::vector<double>> da(parts);
  for (std::size_t p = 0; p < parts; ++p) da[p].assign(where[p].size(), 0.0);

  const RowMatrix w = stacked_weights(weights);
  RowMatrix dw = RowMatrix::Zero(co, parts * ci);
  RowMatrix g(parts * ci, cols), dg(parts * ci, cols);
  RowMatrix xt(nodes, time), dgt(nodes, time), dxt(nodes, time);

  GraphConvGrad grad;
  grad.input = Tensor::uninitialized(input.shape());
  grad.bias = channel_sum(grad_output);
  for (std::size_t n = 0; n < batch; ++n) {
    const double* x = input.data() + n * ci * cols;
    auto dy = as_matrix(grad_output.data() + n * co * cols, co, cols);
    aggregate_sample(x, ci, time, nodes, taps, g.data());
    dw.noalias() += dy * g.transpose();
    dg.noalias() = w.transpose() * dy;
    for (std::size_t c = 0; c < ci; ++c) {
      xt = as_matrix(x + c * cols, time, nodes).transpose();
      dxt.setZero();
      for (std::size_t p = 0; p < parts; ++p) {
        dgt = as_matrix(dg.data() + (p * ci + c) * cols, time, nodes).transpose();
        for (const Tap& t : taps[p]) dxt.row(t.j) += t.a * dgt.row(t.i);
        for (std::size_t e = 0; e < where[p].size(); ++e) da[p][e] += dgt.row(where[p][e].i).dot(xt.row(where[p][e].j));
      }
      as_matrix(grad.input.data() + (n * ci + c) * cols, time, nodes) = dxt.transpose();
    }
  }
  for (std::size_t p = 0; p < parts; ++p) {
    Tensor dwp({co, ci});
    as_matrix(dwp.data(), co, ci) = dw.middleCols(p * ci, ci);
    grad.weights.push_back(std::move(dwp));
    Tensor dap({nodes, nodes});
    for (std::size_t e = 0; e < where[p].size(); ++e) dap[where[p][e].i * nodes + where[p][e].j] = da[p][e];
    grad.adjacency.push_back(std::move(dap));
  }
  return grad;
}

}  // namespace intake
