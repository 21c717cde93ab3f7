#include "intake/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace intake {

namespace {

// Keys for RngStream::split off the run seed.
constexpr std::uint64_t kInitKey = 1;
constexpr std::uint64_t kShuffleKey = 2;
constexpr std::uint64_t kDropoutKey = 3;

WindowOptions window_options(const RunConfig& c) { return {c.window_seconds, c.train_stride_fraction}; }

std::vector<SkeletonSequence> load_split(const std::vector<std::string>& inputs, const RunConfig& config,
                                         const SkeletonTopology& topology) {
  std::vector<SkeletonSequence> out;
  for (const auto& path : expand_inputs(inputs)) out.push_back(prepare_sequence(path, config, topology, true));
  return out;
}

std::size_t valid_count(const WindowBatch& b) {
  return static_cast<std::size_t>(std::count(b.valid_mask.begin(), b.valid_mask.end(), std::uint8_t{1}));
}

/// Better validation outcome: higher F1, then lower loss.
bool improves(const nlohmann::json& candidate, const nlohmann::json& best, bool has_val) {
  if (best.is_null()) return true;
  if (!has_val) return candidate.at("train_loss").get<double>() < best.at("train_loss").get<double>();
  const double f1 = candidate.at("val_f1").get<double>();
  const double best_f1 = best.at("val_f1").get<double>();
  if (f1 != best_f1) return f1 > best_f1;
  return candidate.at("val_loss").get<double>() < best.at("val_loss").get<double>();
}

}  // namespace

std::string sequence_id(const std::filesystem::path& path) {
  const std::string name = path.filename().string();
  return name.substr(0, name.find('.'));
}

std::filesystem::path sibling_labels(const std::filesystem::path& keypoints) {
  return keypoints.parent_path() / (sequence_id(keypoints) + kLabelSuffix);
}

std::vector<std::filesystem::path> expand_inputs(const std::vector<std::string>& inputs) {
  std::vector<std::filesystem::path> out;
  for (const auto& in : inputs) {
    const std::filesystem::path p(in);
    if (std::filesystem::is_directory(p)) {
      std::vector<std::filesystem::path> found;
      for (const auto& e : std::filesystem::directory_iterator(p)) {
        const std::string name = e.path().filename().string();
        if (e.is_regular_file() && name.ends_with(kKeypointSuffix)) found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      if (found.empty()) throw std::runtime_error("no *" + std::string(kKeypointSuffix) + " files in " + in);
      out.insert(out.end(), found.begin(), found.end());
    } else if (std::filesystem::is_regular_file(p)) {
      out.push_back(p);
    } else {
      throw std::runtime_error("input not found: " + in);
    }
  }
  return out;
}

SkeletonSequence prepare_sequence(const SkeletonSequence& raw, const RunConfig& config,
                                  const SkeletonTopology& topology) {
  SkeletonSequence seq = raw.normalized ? raw : normalize_coordinates(raw, config.frame_width, config.frame_height);
  if (seq.node_count() != topology.node_count()) seq = select_nodes(seq, topology);
  return seq;
}

SkeletonSequence prepare_sequence(const std::filesystem::path& keypoints, const RunConfig& config,
                                  const SkeletonTopology& topology, bool with_labels) {
  SkeletonSequence raw = load_keypoints(keypoints, config.confidence_threshold, config.fps);
  raw.source_id = sequence_id(keypoints);
  if (with_labels) {
    const auto labels = sibling_labels(keypoints);
    if (!std::filesystem::exists(labels)) throw std::runtime_error("missing labels for " + keypoints.string());
    raw.labels = load_labels(labels, raw.frame_count());
  }
  return prepare_sequence(raw, config, topology);
}

SequencePrediction predict_sequence(const ModelParams& params, const ModelConfig& config,
                                    const PartitionedAdjacency& adjacency, const SkeletonSequence& seq,
                                    double window_seconds, std::size_t batch_size) {
  const WindowBatch windows = make_windows(seq, Mode::infer, {window_seconds, 0.5});
  const std::size_t n = windows.size();
  const std::size_t t_win = windows.window_length;
  Tensor probs({n, t_win, config.class_count});
  for (std::size_t begin = 0; begin < n; begin += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, n - begin));
    std::iota(idx.begin(), idx.end(), begin);
    const WindowBatch chunk = gather_windows(windows, idx);
    const Tensor p = predict_frames(params, chunk.windows, config, adjacency);
    std::copy(p.values().begin(), p.values().end(), probs.data() + begin * t_win * config.class_count);
  }
  SequencePrediction out;
  out.id = seq.source_id;
  out.probabilities = stitch_probabilities(probs, windows.origin, seq.frame_count());
  out.labels = argmax_frames(out.probabilities);
  return out;
}

double segment_f1(const EvalReport& report, double k) {
  double sum = 0.0;
  int classes = 0;
  for (int c : kScoredClasses) {
    const auto& e = report.at(c, k);
    if (e.counts.tp + e.counts.fp + e.counts.fn == 0) continue;
    sum += e.metrics.f1;
    ++classes;
  }
  return classes == 0 ? 1.0 : sum / classes;
}

EvaluationSummary evaluate_sequences(const ModelParams& params, const ModelConfig& config,
                                     const PartitionedAdjacency& adjacency,
                                     const std::vector<SkeletonSequence>& sequences, double window_seconds,
                                     std::size_t batch_size) {
  EvaluationSummary out;
  out.report = report_from_counts({});
  double loss_sum = 0.0;
  std::size_t frames = 0;
  for (const auto& seq : sequences) {
    if (!seq.labels) throw std::invalid_argument("evaluation sequence " + seq.source_id + " has no labels");
    const WindowBatch windows = make_windows(seq, Mode::infer, {window_seconds, 0.5});
    const std::size_t n = windows.size();
    const std::size_t t_win = windows.window_length;
    Tensor probs({n, t_win, config.class_count});
    for (std::size_t begin = 0; begin < n; begin += batch_size) {
      std::vector<std::size_t> idx(std::min(batch_size, n - begin));
      std::iota(idx.begin(), idx.end(), begin);
      const WindowBatch chunk = gather_windows(windows, idx);
      const Tensor logits = model_forward(chunk.windows, params, config, adjacency, RngStream(0), Mode::infer);
      const LossResult loss = compute_loss(logits, chunk.labels, chunk.valid_mask, config);
      const std::size_t valid = valid_count(chunk);
      loss_sum += loss.total * static_cast<double>(valid);
      frames += valid;
      std::copy(loss.probabilities.values().begin(), loss.probabilities.values().end(),
                probs.data() + begin * t_win * config.class_count);
    }
    const auto pred = argmax_frames(stitch_probabilities(probs, windows.origin, seq.frame_count()));
    out.report += evaluate(*seq.labels, pred, kDefaultIouThresholds);
  }
  out.loss = frames == 0 ? 0.0 : loss_sum / static_cast<double>(frames);
  out.f1 = segment_f1(out.report, 0.5);
  return out;
}

TrainResult train_model(const RunConfig& config, const std::vector<SkeletonSequence>& train,
                        const std::vector<SkeletonSequence>& val, const TrainOptions& options) {
  config.validate();
  if (train.empty()) throw std::invalid_argument("no training sequences");
  const SkeletonTopology topology = build_topology(config.parts);
  const PartitionedAdjacency adjacency = partition_adjacency(topology);
  ModelConfig model = config.model;
  model.node_count = topology.node_count();
  model.validate();

  WindowBatch windows;
  for (const auto& seq : train) {
    if (!seq.labels) throw std::invalid_argument("training sequence " + seq.source_id + " has no labels");
    if (seq.node_count() != model.node_count)
      throw std::invalid_argument("training sequence " + seq.source_id + " has " + std::to_string(seq.node_count()) +
                                  " nodes, topology expects " + std::to_string(model.node_count));
    append_windows(windows, make_windows(seq, Mode::train, window_options(config)));
  }

  const RngStream root(config.seed);
  Checkpoint state;
  state.config = model;
  state.parts = config.parts;
  state.root_source = static_cast<std::size_t>(topology.nodes[topology.root].source_index);
  state.run = to_json(config);
  if (options.resume) {
    Checkpoint loaded = load_checkpoint(*options.resume);
    if (to_json(loaded.config) != to_json(model) || loaded.parts != config.parts)
      throw std::invalid_argument("resume checkpoint " + options.resume->string() + " does not match the run's model");
    state.params = std::move(loaded.params);
    state.step = loaded.step;
    state.epoch = loaded.epoch;
  } else {
    state.params = init_params(model, root.split(kInitKey));
  }

  std::ofstream log;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    log.open(options.out_dir / "metrics.jsonl", options.resume ? std::ios::app : std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write " + (options.out_dir / "metrics.jsonl").string());
  }
  TrainResult result;
  auto emit = [&](const nlohmann::json& record) {
    result.log.push_back(record);
    if (log.is_open()) log << record.dump() << '\n' << std::flush;
    if (options.on_epoch) options.on_epoch(record);
  };
  emit({{"event", options.resume ? "resume" : "start"},
        {"parameter_count", state.params.parameter_count()},
        {"tcn_mode", std::string(to_string(model.tcn_mode))},
        {"node_count", model.node_count},
        {"train_sequences", train.size()},
        {"val_sequences", val.size()},
        {"train_windows", windows.size()},
        {"step", state.step},
        {"epoch", state.epoch}});

  nlohmann::json best_metrics;
  bool have_best = false;
  std::vector<std::size_t> order(windows.size());
  for (std::size_t epoch = state.epoch + 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    RngStream shuffle = root.split(kShuffleKey).split(epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    double loss_sum = 0.0, ce_sum = 0.0, smooth_sum = 0.0;
    std::size_t frames = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                         order.begin() + static_cast<std::ptrdiff_t>(
                                                             std::min(order.size(), begin + config.batch_size)));
      const WindowBatch batch = gather_windows(windows, idx);
      LossRecord rec;
      try {
        rec = train_step(state.params, batch.windows, batch.labels, batch.valid_mask, model, adjacency,
                         root.split(kDropoutKey).split(state.step), config.adam);
      } catch (const NonFiniteError& e) {
        throw NonFiniteError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(state.step + 1) + ", batch starting at window " +
                             windows.origin[idx.front()].sequence_id + ":" +
                             std::to_string(windows.origin[idx.front()].start) + ")");
      }
      ++state.step;
      const auto valid = static_cast<double>(valid_count(batch));
      loss_sum += rec.total * valid;
      ce_sum += rec.classification * valid;
      smooth_sum += rec.smoothing * valid;
      frames += static_cast<std::size_t>(valid);
    }
    state.epoch = epoch;

    nlohmann::json record = {{"event", "epoch"},
                             {"epoch", epoch},
                             {"step", state.step},
                             {"train_loss", loss_sum / static_cast<double>(frames)},
                             {"train_ce", ce_sum / static_cast<double>(frames)},
                             {"train_smoothing", smooth_sum / static_cast<double>(frames)}};
    // Validation sees the weights exactly as a checkpoint would store them.
    Checkpoint snapshot = state;
    quantize_to_float(snapshot.params);
    if (!val.empty()) {
      const EvaluationSummary s =
          evaluate_sequences(snapshot.params, model, adjacency, val, config.window_seconds, config.batch_size);
      record["val_loss"] = s.loss;
      record["val_f1"] = s.f1;
      record["val_report"] = report_to_json(s.report);
    }
    emit(record);
    snapshot.metrics = record;

    if (!have_best || improves(record, best_metrics, !val.empty())) {
      have_best = true;
      best_metrics = record;
      result.best = snapshot;
      if (!options.out_dir.empty()) save_checkpoint(options.out_dir / "best", snapshot);
    }
    result.final = std::move(snapshot);
  }
  if (!have_best) {
    // Nothing left to train (resumed at the last epoch): the loaded state is both.
    result.final = state;
    quantize_to_float(result.final.params);
    result.best = result.final;
  }
  if (!options.out_dir.empty()) save_checkpoint(options.out_dir / "final", result.final);
  return result;
}

TrainResult train_from_files(const RunConfig& config, const TrainOptions& options) {
  const SkeletonTopology topology = build_topology(config.parts);
  if (config.train_files.empty()) throw std::invalid_argument("run config lists no training files");
  return train_model(config, load_split(config.train_files, config, topology),
                     load_split(config.val_files, config, topology), options);
}

}  // namespace intake
