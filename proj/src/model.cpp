#include "intake/model.hpp"

#include <cmath>
#include <stdexcept>

namespace intake {

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

std::string block_name(std::size_t i) { return "block" + std::to_string(i); }

Tensor uniform_tensor(std::vector<std::size_t> shape, double bound, RngStream& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

NormParams make_norm(const std::string& prefix, std::size_t channels) {
  return {Param(prefix + ".scale", Tensor({channels}, 1.0)), Param(prefix + ".shift", Tensor({channels}, 0.0)),
          BatchNormStats::identity(channels)};
}

LstmParams make_lstm(const std::string& prefix, std::size_t features, std::size_t hidden, RngStream& rng) {
  return {Param(prefix + ".w_input", uniform_tensor({4 * hidden, features}, 1.0 / std::sqrt(double(features)), rng)),
          Param(prefix + ".w_hidden", uniform_tensor({4 * hidden, hidden}, 1.0 / std::sqrt(double(hidden)), rng)),
          Param(prefix + ".bias", Tensor({4 * hidden}, 0.0))};
}

void accumulate(Param& p, const Tensor& g) { p.grad += g; }

void accumulate_norm(NormParams& norm, const BatchNormGrad& g) {
  accumulate(norm.scale, g.scale);
  accumulate(norm.shift, g.shift);
}

// [N, T, V, C] -> [N, V*C, T]
Tensor to_input_plane(const Tensor& x) {
  const std::size_t n = x.dim(0), t = x.dim(1), v = x.dim(2), c = x.dim(3);
  Tensor out({n, v * c, t});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ti = 0; ti < t; ++ti)
      for (std::size_t vi = 0; vi < v; ++vi)
        for (std::size_t ci = 0; ci < c; ++ci) out[(b * v * c + vi * c + ci) * t + ti] = x[((b * t + ti) * v + vi) * c + ci];
  return out;
}

// [N, V*C, T] -> [N, C, T, V]
Tensor plane_to_nctv(const Tensor& plane, std::size_t v, std::size_t c) {
  const std::size_t n = plane.dim(0), t = plane.dim(2);
  Tensor out({n, c, t, v});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t ti = 0; ti < t; ++ti)
        for (std::size_t vi = 0; vi < v; ++vi) out[((b * c + ci) * t + ti) * v + vi] = plane[(b * v * c + vi * c + ci) * t + ti];
  return out;
}

// inverse of plane_to_nctv
Tensor nctv_to_plane(const Tensor& x) {
  const std::size_t n = x.dim(0), c = x.dim(1), t = x.dim(2), v = x.dim(3);
  Tensor out({n, v * c, t});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t ti = 0; ti < t; ++ti)
        for (std::size_t vi = 0; vi < v; ++vi) out[(b * v * c + vi * c + ci) * t + ti] = x[((b * c + ci) * t + ti) * v + vi];
  return out;
}

// [N, C, T, V] -> [N, T, C*V]
Tensor nctv_to_sequence(const Tensor& x) {
  const std::size_t n = x.dim(0), c = x.dim(1), t = x.dim(2), v = x.dim(3);
  Tensor out({n, t, c * v});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t ti = 0; ti < t; ++ti)
        for (std::size_t vi = 0; vi < v; ++vi) out[(b * t + ti) * c * v + ci * v + vi] = x[((b * c + ci) * t + ti) * v + vi];
  return out;
}

// [N, T, C*V] -> [N, C, T, V]
Tensor sequence_to_nctv(const Tensor& s, std::size_t c, std::size_t v) {
  const std::size_t n = s.dim(0), t = s.dim(1);
  Tensor out({n, c, t, v});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t ti = 0; ti < t; ++ti)
        for (std::size_t vi = 0; vi < v; ++vi) out[((b * c + ci) * t + ti) * v + vi] = s[(b * t + ti) * c * v + ci * v + vi];
  return out;
}

std::array<Tensor, kPartitionCount> weight_views(const BlockParams& p) {
  return {p.gcn_weight[0].value, p.gcn_weight[1].value, p.gcn_weight[2].value};
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

std::string_view to_string(TcnMode mode) { return mode == TcnMode::basic ? "basic" : "dilated"; }

TcnMode parse_tcn_mode(std::string_view name) {
  if (name == "basic") return TcnMode::basic;
  if (name == "dilated") return TcnMode::dilated;
  throw std::invalid_argument("unknown tcn mode '" + std::string(name) + "' (expected basic or dilated)");
}

ModelConfig ModelConfig::table_one(std::size_t node_count, TcnMode mode) {
  static constexpr std::array<std::size_t, 10> channels{64, 64, 64, 64, 128, 128, 128, 256, 256, 256};
  static constexpr std::array<std::size_t, 10> dilations{1, 1, 2, 2, 4, 4, 8, 8, 16, 16};
  ModelConfig config;
  config.node_count = node_count;
  config.tcn_mode = mode;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    config.blocks.push_back({channels[i], dilations[i], i < 5 ? 0.15 : 0.3, 3});
  }
  return config;
}

std::vector<BlockConfig> ModelConfig::resolved_blocks() const {
  std::vector<BlockConfig> out = blocks;
  if (tcn_mode == TcnMode::basic) {
    for (auto& b : out) {
      b.dilation = 1;
      b.temporal_kernel = basic_kernel;
    }
  }
  return out;
}

void ModelConfig::validate() const {
  require(!blocks.empty(), "model config: at least one block is required");
  require(node_count > 0 && in_channels > 0, "model config: node_count and in_channels must be positive");
  require(class_count >= 2, "model config: class_count must be at least 2");
  require(bilstm_hidden > 0, "model config: bilstm_hidden must be positive");
  require(basic_kernel % 2 == 1, "model config: basic_kernel must be odd");
  require(smoothing_lambda >= 0.0, "model config: smoothing_lambda must be non-negative");
  require(smoothing_tau > 0.0, "model config: smoothing_tau must be positive");
  require(bn_eps > 0.0 && bn_momentum > 0.0 && bn_momentum <= 1.0, "model config: bad batch-norm settings");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    const std::string where = "model config: " + block_name(i) + ": ";
    require(b.out_channels > 0, where + "out_channels must be positive");
    require(b.dilation >= 1, where + "dilation must be >= 1");
    require(b.temporal_kernel % 2 == 1, where + "temporal_kernel must be odd");
    require(b.dropout_rate >= 0.0 && b.dropout_rate < 1.0, where + "dropout_rate must be in [0, 1)");
  }
  for (std::size_t w : dense_widths) require(w > 0, "model config: dense widths must be positive");
}

bool ModelConfig::matches_table_one() const {
  const ModelConfig ref = table_one(node_count, tcn_mode);
  if (blocks.size() != ref.blocks.size() || class_count != 3 || bilstm_hidden != 256) return false;
  if (dense_widths != ref.dense_widths) return false;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (blocks[i].out_channels != ref.blocks[i].out_channels || blocks[i].dilation != ref.blocks[i].dilation ||
        blocks[i].dropout_rate != ref.blocks[i].dropout_rate) {
      return false;
    }
  }
  return true;
}

nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : c.blocks) {
    blocks.push_back({{"out_channels", b.out_channels},
                      {"dilation", b.dilation},
                      {"dropout_rate", b.dropout_rate},
                      {"temporal_kernel", b.temporal_kernel}});
  }
  return {{"blocks", blocks},
          {"node_count", c.node_count},
          {"in_channels", c.in_channels},
          {"class_count", c.class_count},
          {"bilstm_hidden", c.bilstm_hidden},
          {"dense_widths", c.dense_widths},
          {"tcn_mode", std::string(to_string(c.tcn_mode))},
          {"basic_kernel", c.basic_kernel},
          {"smoothing_lambda", c.smoothing_lambda},
          {"smoothing_tau", c.smoothing_tau},
          {"bn_momentum", c.bn_momentum},
          {"bn_eps", c.bn_eps},
          {"train_edge_importance", c.train_edge_importance}};
}

ModelConfig model_config_from_json(const nlohmann::json& doc) {
  ModelConfig c = ModelConfig::table_one();
  if (doc.contains("blocks")) {
    c.blocks.clear();
    for (const auto& b : doc.at("blocks")) {
      BlockConfig block;
      block.out_channels = b.at("out_channels").get<std::size_t>();
      block.dilation = b.value("dilation", std::size_t{1});
      block.dropout_rate = b.value("dropout_rate", 0.0);
      block.temporal_kernel = b.value("temporal_kernel", std::size_t{3});
      c.blocks.push_back(block);
    }
  }
  c.node_count = doc.value("node_count", c.node_count);
  c.in_channels = doc.value("in_channels", c.in_channels);
  c.class_count = doc.value("class_count", c.class_count);
  c.bilstm_hidden = doc.value("bilstm_hidden", c.bilstm_hidden);
  if (doc.contains("dense_widths")) c.dense_widths = doc.at("dense_widths").get<std::vector<std::size_t>>();
  if (doc.contains("tcn_mode")) c.tcn_mode = parse_tcn_mode(doc.at("tcn_mode").get<std::string>());
  c.basic_kernel = doc.value("basic_kernel", c.basic_kernel);
  c.smoothing_lambda = doc.value("smoothing_lambda", c.smoothing_lambda);
  c.smoothing_tau = doc.value("smoothing_tau", c.smoothing_tau);
  c.bn_momentum = doc.value("bn_momentum", c.bn_momentum);
  c.bn_eps = doc.value("bn_eps", c.bn_eps);
  c.train_edge_importance = doc.value("train_edge_importance", c.train_edge_importance);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

std::vector<Param*> ModelParams::all() {
  std::vector<Param*> out{&input_bn.scale, &input_bn.shift};
  for (auto& b : blocks) {
    for (auto& w : b.gcn_weight) out.push_back(&w);
    out.insert(out.end(), {&b.gcn_bias, &b.importance, &b.bn_graph.scale, &b.bn_graph.shift, &b.tcn_kernel,
                           &b.tcn_bias, &b.bn_temporal.scale, &b.bn_temporal.shift});
    if (b.has_projection) out.insert(out.end(), {&b.residual_weight, &b.residual_bias});
  }
  for (LstmParams* l : {&lstm_forward, &lstm_backward}) out.insert(out.end(), {&l->w_input, &l->w_hidden, &l->bias});
  for (std::size_t i = 0; i < dense_weight.size(); ++i) out.insert(out.end(), {&dense_weight[i], &dense_bias[i]});
  return out;
}

std::vector<const Param*> ModelParams::all() const {
  auto mutable_list = const_cast<ModelParams*>(this)->all();
  return {mutable_list.begin(), mutable_list.end()};
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::buffers() {
  std::vector<std::pair<std::string, Tensor*>> out;
  auto add = [&out](const std::string& prefix, NormParams& n) {
    out.emplace_back(prefix + ".running_mean", &n.stats.running_mean);
    out.emplace_back(prefix + ".running_var", &n.stats.running_var);
  };
  add("input_bn", input_bn);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    add(block_name(i) + ".bn_graph", blocks[i].bn_graph);
    add(block_name(i) + ".bn_temporal", blocks[i].bn_temporal);
  }
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::buffers() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<ModelParams*>(this)->buffers()) out.emplace_back(name, t);
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const Param* p : all()) n += p->value.size();
  return n;
}

void ModelParams::zero_grad() {
  for (Param* p : all()) p->zero_grad();
}

ModelParams init_params(const ModelConfig& config, const RngStream& seed_stream) {
  config.validate();
  RngStream rng = seed_stream;
  const std::size_t v = config.node_count;
  ModelParams params;
  params.input_bn = make_norm("input_bn", v * config.in_channels);

  std::size_t in_ch = config.in_channels;
  const auto resolved = config.resolved_blocks();
  for (std::size_t i = 0; i < resolved.size(); ++i) {
    const auto& bc = resolved[i];
    const std::string name = block_name(i);
    const std::size_t out_ch = bc.out_channels;
    BlockParams b;
    const double gcn_bound = 1.0 / std::sqrt(double(in_ch));
    for (std::size_t p = 0; p < kPartitionCount; ++p) {
      b.gcn_weight[p] = Param(name + ".gcn.weight" + std::to_string(p), uniform_tensor({out_ch, in_ch}, gcn_bound, rng));
    }
    b.gcn_bias = Param(name + ".gcn.bias", Tensor({out_ch}));
    b.importance = Param(name + ".importance", Tensor({kPartitionCount, v, v}, 1.0));
    b.importance.trainable = config.train_edge_importance;
    b.bn_graph = make_norm(name + ".bn_graph", out_ch);
    const double tcn_bound = 1.0 / std::sqrt(double(out_ch * bc.temporal_kernel));
    b.tcn_kernel = Param(name + ".tcn.kernel", uniform_tensor({out_ch, out_ch, bc.temporal_kernel}, tcn_bound, rng));
    b.tcn_bias = Param(name + ".tcn.bias", Tensor({out_ch}));
    b.bn_temporal = make_norm(name + ".bn_temporal", out_ch);
    b.has_projection = in_ch != out_ch;
    if (b.has_projection) {
      b.residual_weight =
          Param(name + ".residual.weight", uniform_tensor({out_ch, in_ch, 1}, 1.0 / std::sqrt(double(in_ch)), rng));
      b.residual_bias = Param(name + ".residual.bias", Tensor({out_ch}));
    }
    params.blocks.push_back(std::move(b));
    in_ch = out_ch;
  }

  const std::size_t features = in_ch * v;
  params.lstm_forward = make_lstm("lstm.forward", features, config.bilstm_hidden, rng);
  params.lstm_backward = make_lstm("lstm.backward", features, config.bilstm_hidden, rng);

  std::size_t width = 2 * config.bilstm_hidden;
  std::vector<std::size_t> widths = config.dense_widths;
  widths.push_back(config.class_count);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const std::string name = "dense" + std::to_string(i);
    params.dense_weight.emplace_back(name + ".weight", uniform_tensor({width, widths[i]}, 1.0 / std::sqrt(double(width)), rng));
    params.dense_bias.emplace_back(name + ".bias", Tensor({widths[i]}));
    width = widths[i];
  }
  return params;
}

// ---------------------------------------------------------------------------
// ST-GCN block
// ---------------------------------------------------------------------------

Tensor stgcn_block_forward(Tensor input, const BlockParams& params, const BlockConfig& block,
                           const PartitionedAdjacency& adjacency, const RngStream& rng, Mode mode, double bn_eps,
                           BlockCache* cache) {
  require(input.rank() == 4, "stgcn_block_forward: input must be [N, C, T, V]");
  const std::size_t v = input.dim(3);
  require(adjacency.node_count() == v, "stgcn_block_forward: adjacency has V = " +
                                           std::to_string(adjacency.node_count()) + " but input has V = " +
                                           std::to_string(v));
  require(params.importance.value.dim(1) == v, "stgcn_block_forward: edge importance V mismatch");

  std::array<Tensor, kPartitionCount> adj;
  for (std::size_t p = 0; p < kPartitionCount; ++p) {
    adj[p] = adjacency.stacks[p];
    const double* m = params.importance.value.data() + p * v * v;
    for (std::size_t i = 0; i < v * v; ++i) adj[p][i] *= m[i];
  }
  const auto weights = weight_views(params);

  Tensor g = graph_conv(input, weights, params.gcn_bias.value, adj);
  BatchNormCache bn1;
  Tensor h1 = batch_norm(g, params.bn_graph.scale.value, params.bn_graph.shift.value, params.bn_graph.stats, mode,
                         bn_eps, cache ? &bn1 : nullptr);
  double keep_scale = 1.0;
  Tensor d1 = relu_dropout(std::move(h1), block.dropout_rate, rng, mode, &keep_scale);
  Tensor c = conv1d_dilated(d1, params.tcn_kernel.value, block.dilation);
  add_channel_bias(c, params.tcn_bias.value);
  BatchNormCache bn2;
  Tensor s = batch_norm(c, params.bn_temporal.scale.value, params.bn_temporal.shift.value, params.bn_temporal.stats,
                        mode, bn_eps, cache ? &bn2 : nullptr);
  if (params.has_projection) {
    Tensor r = conv1d_dilated(input, params.residual_weight.value, 1);
    add_channel_bias(r, params.residual_bias.value);
    s += r;
  } else {
    s += input;
  }
  Tensor y = relu_dropout(std::move(s), 0.0, rng, mode);
  if (cache) {
    cache->input = std::move(input);
    cache->adjacency = std::move(adj);
    cache->bn_graph = std::move(bn1);
    cache->temporal_input = std::move(d1);
    cache->keep_scale = keep_scale;
    cache->bn_temporal = std::move(bn2);
    cache->output = y;
  }
  return y;
}

Tensor stgcn_block_backward(const BlockCache& cache, BlockParams& params, const BlockConfig& block,
                            const PartitionedAdjacency& adjacency, const Tensor& grad_output) {
  const std::size_t v = cache.input.dim(3);
  Tensor ds = relu_dropout_backward(cache.output, grad_output, 1.0);

  BatchNormGrad bn2 = batch_norm_backward(cache.bn_temporal, params.bn_temporal.scale.value, ds);
  accumulate_norm(params.bn_temporal, bn2);
  accumulate(params.tcn_bias, channel_sum(bn2.input));
  ConvGrad tcn = conv1d_dilated_backward(cache.temporal_input, params.tcn_kernel.value, block.dilation, bn2.input);
  accumulate(params.tcn_kernel, tcn.kernel);
  Tensor dh1 = relu_dropout_backward(cache.temporal_input, tcn.input, cache.keep_scale);
  BatchNormGrad bn1 = batch_norm_backward(cache.bn_graph, params.bn_graph.scale.value, dh1);
  accumulate_norm(params.bn_graph, bn1);

  const auto weights = weight_views(params);
  GraphConvGrad gcn = graph_conv_backward(cache.input, weights, cache.adjacency, bn1.input, adjacency.stacks);
  accumulate(params.gcn_bias, gcn.bias);
  Tensor d_importance({kPartitionCount, v, v});
  for (std::size_t p = 0; p < kPartitionCount; ++p) {
    accumulate(params.gcn_weight[p], gcn.weights[p]);
    for (std::size_t i = 0; i < v * v; ++i) d_importance[p * v * v + i] = gcn.adjacency[p][i] * adjacency.stacks[p][i];
  }
  accumulate(params.importance, d_importance);

  Tensor dx = std::move(gcn.input);
  if (params.has_projection) {
    ConvGrad res = conv1d_dilated_backward(cache.input, params.residual_weight.value, 1, ds);
    accumulate(params.residual_weight, res.kernel);
    accumulate(params.residual_bias, channel_sum(ds));
    dx += res.input;
  } else {
    dx += ds;
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

Tensor stgcn_features(const Tensor& input, const ModelParams& params, const ModelConfig& config,
                      const PartitionedAdjacency& adjacency, const RngStream& rng, Mode mode, ForwardCache* cache) {
  require(input.rank() == 4, "model_forward: input must be [N, T, V, C]");
  require(input.dim(3) == config.in_channels, "model_forward: expected C = " + std::to_string(config.in_channels) +
                                                   ", got " + std::to_string(input.dim(3)));
  require(input.dim(2) == config.node_count && adjacency.node_count() == config.node_count,
          "model_forward: expected V = " + std::to_string(config.node_count) + ", got input V = " +
              std::to_string(input.dim(2)) + " and adjacency V = " + std::to_string(adjacency.node_count()));
  require(params.blocks.size() == config.blocks.size(), "model_forward: parameter/config block count mismatch");

  const std::size_t v = config.node_count;
  Tensor plane = to_input_plane(input);
  BatchNormCache bn0;
  Tensor normed = batch_norm(plane, params.input_bn.scale.value, params.input_bn.shift.value, params.input_bn.stats,
                             mode, config.bn_eps, cache ? &bn0 : nullptr);
  Tensor x = plane_to_nctv(normed, v, config.in_channels);
  if (cache) {
    cache->input_plane = std::move(plane);
    cache->input_bn = std::move(bn0);
    cache->blocks.assign(config.blocks.size(), BlockCache{});
  }
  const auto resolved = config.resolved_blocks();
  for (std::size_t i = 0; i < resolved.size(); ++i) {
    x = stgcn_block_forward(std::move(x), params.blocks[i], resolved[i], adjacency, rng.split(i + 1), mode, config.bn_eps,
                            cache ? &cache->blocks[i] : nullptr);
  }
  return x;
}

Tensor model_forward(const Tensor& input, const ModelParams& params, const ModelConfig& config,
                     const PartitionedAdjacency& adjacency, const RngStream& rng, Mode mode, ForwardCache* cache) {
  Tensor features = stgcn_features(input, params, config, adjacency, rng, mode, cache);
  Tensor seq = nctv_to_sequence(features);
  BiLstmCache lcache;
  Tensor h = bilstm_forward(seq, params.lstm_forward.view(), params.lstm_backward.view(), config.bilstm_hidden,
                            cache ? &lcache : nullptr);
  if (cache) {
    cache->lstm_input = std::move(seq);
    cache->lstm = std::move(lcache);
    cache->dense_input.clear();
    cache->dense_output.clear();
  }
  const std::size_t layers = params.dense_weight.size();
  for (std::size_t i = 0; i < layers; ++i) {
    Tensor z = dense(h, params.dense_weight[i].value, params.dense_bias[i].value);
    if (cache) {
      cache->dense_input.push_back(std::move(h));
      cache->dense_output.push_back(z);
    }
    h = i + 1 < layers ? relu(z) : std::move(z);
  }
  if (cache) cache->logits = h;
  return h;
}

void model_backward(const ForwardCache& cache, ModelParams& params, const ModelConfig& config,
                    const PartitionedAdjacency& adjacency, const Tensor& grad_logits) {
  Tensor g = grad_logits;
  for (std::size_t i = params.dense_weight.size(); i-- > 0;) {
    if (i + 1 < params.dense_weight.size()) g = relu_backward(cache.dense_output[i], g);
    DenseGrad dg = dense_backward(cache.dense_input[i], params.dense_weight[i].value, g);
    accumulate(params.dense_weight[i], dg.weight);
    accumulate(params.dense_bias[i], dg.bias);
    g = std::move(dg.input);
  }
  BiLstmGrad lg = bilstm_backward(cache.lstm_input, params.lstm_forward.view(), params.lstm_backward.view(),
                                  config.bilstm_hidden, cache.lstm, g);
  accumulate(params.lstm_forward.w_input, lg.forward.w_input);
  accumulate(params.lstm_forward.w_hidden, lg.forward.w_hidden);
  accumulate(params.lstm_forward.bias, lg.forward.bias);
  accumulate(params.lstm_backward.w_input, lg.backward.w_input);
  accumulate(params.lstm_backward.w_hidden, lg.backward.w_hidden);
  accumulate(params.lstm_backward.bias, lg.backward.bias);

  const std::size_t last_channels = config.blocks.back().out_channels;
  g = sequence_to_nctv(lg.input, last_channels, config.node_count);
  const auto resolved = config.resolved_blocks();
  for (std::size_t i = resolved.size(); i-- > 0;) {
    g = stgcn_block_backward(cache.blocks[i], params.blocks[i], resolved[i], adjacency, g);
  }
  BatchNormGrad bn0 = batch_norm_backward(cache.input_bn, params.input_bn.scale.value, nctv_to_plane(g));
  accumulate_norm(params.input_bn, bn0);
}

void apply_running_stats(ModelParams& params, const ForwardCache& cache, const ModelConfig& config) {
  update_running_stats(params.input_bn.stats, cache.input_bn, config.bn_momentum);
  for (std::size_t i = 0; i < params.blocks.size() && i < cache.blocks.size(); ++i) {
    update_running_stats(params.blocks[i].bn_graph.stats, cache.blocks[i].bn_graph, config.bn_momentum);
    update_running_stats(params.blocks[i].bn_temporal.stats, cache.blocks[i].bn_temporal, config.bn_momentum);
  }
}

LossResult compute_loss(const Tensor& logits, std::span<const int> labels, FrameMask mask, const ModelConfig& config) {
  CrossEntropyResult ce = softmax_cross_entropy(logits, labels, mask);
  LossResult out;
  out.classification = ce.loss;
  out.grad_logits = std::move(ce.grad_logits);
  out.probabilities = std::move(ce.probabilities);
  if (config.smoothing_lambda > 0.0 && logits.dim(1) >= 2) {
    const Tensor lp = log_softmax(logits);
    SmoothingResult sm = truncated_mse_smoothing(lp, config.smoothing_tau, mask);
    out.smoothing = sm.loss;
    Tensor g = log_softmax_backward(lp, sm.grad_log_probs);
    for (std::size_t i = 0; i < g.size(); ++i) out.grad_logits[i] += config.smoothing_lambda * g[i];
  }
  out.total = out.classification + config.smoothing_lambda * out.smoothing;
  return out;
}

namespace {

std::string first_non_finite(const ForwardCache& cache, const ModelParams& params) {
  for (const Param* p : params.all()) {
    if (!p->value.all_finite()) return "parameter " + p->name;
  }
  if (!cache.input_plane.all_finite()) return "input";
  for (std::size_t i = 0; i < cache.blocks.size(); ++i) {
    const auto& b = cache.blocks[i];
    if (!b.bn_graph.normalized.all_finite()) return block_name(i) + ".bn_graph output";
    if (!b.bn_temporal.normalized.all_finite()) return block_name(i) + ".bn_temporal output";
    if (!b.output.all_finite()) return block_name(i) + " output";
  }
  if (!cache.lstm_input.all_finite()) return "bilstm input";
  for (std::size_t i = 0; i < cache.dense_output.size(); ++i) {
    if (!cache.dense_output[i].all_finite()) return "dense" + std::to_string(i) + " output";
  }
  return "loss";
}

}  // namespace

LossRecord train_step(ModelParams& params, const Tensor& inputs, std::span<const int> labels, FrameMask mask,
                      const ModelConfig& config, const PartitionedAdjacency& adjacency, const RngStream& rng,
                      const AdamSettings& adam) {
  ForwardCache cache;
  Tensor logits = model_forward(inputs, params, config, adjacency, rng, Mode::train, &cache);
  LossResult loss = compute_loss(logits, labels, mask, config);
  if (!std::isfinite(loss.total) || !logits.all_finite()) {
    throw NonFiniteError("non-finite training loss; first non-finite tensor: " + first_non_finite(cache, params));
  }
  model_backward(cache, params, config, adjacency, loss.grad_logits);
  for (Param* p : params.all()) {
    if (!p->grad.all_finite()) throw NonFiniteError("non-finite gradient in " + p->name);
  }
  for (Param* p : params.all()) {
    if (p->trainable) adam_step(*p, adam);
    p->zero_grad();
  }
  apply_running_stats(params, cache, config);
  return {loss.total, loss.classification, loss.smoothing};
}

Tensor predict_frames(const ModelParams& params, const Tensor& windows, const ModelConfig& config,
                      const PartitionedAdjacency& adjacency) {
  return softmax(model_forward(windows, params, config, adjacency, RngStream(0), Mode::infer));
}

}  // namespace intake
