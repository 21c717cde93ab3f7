#include "intake/commands.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "intake/checkpoint.hpp"

namespace intake {

namespace {

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void ensure_directory(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw std::runtime_error("cannot create directory " + dir.string());
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

// Files under `inputs` (directories expanded) whose names end in `suffix`.
std::vector<std::filesystem::path> collect(const std::vector<std::string>& inputs, const std::string& suffix) {
  std::vector<std::filesystem::path> out;
  for (const auto& in : inputs) {
    const std::filesystem::path p(in);
    if (std::filesystem::is_directory(p)) {
      std::vector<std::filesystem::path> found;
      for (const auto& e : std::filesystem::directory_iterator(p)) {
        if (e.is_regular_file() && e.path().filename().string().ends_with(suffix)) found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else if (std::filesystem::is_regular_file(p)) {
      out.push_back(p);
    } else {
      throw std::runtime_error("input not found: " + in);
    }
  }
  return out;
}

// Keypoints per frame on the first record of a keypoint file.
std::size_t peek_node_count(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      return nlohmann::json::parse(line).at("kp").size();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ": line " + std::to_string(number) + ": " + e.what(), number);
    }
  }
  throw ParseError(path.string() + ": no frames", 0);
}

nlohmann::json range_json(const CountRange& r) { return nlohmann::json::array({r.min, r.max}); }

CountRange range_from(const nlohmann::json& doc, const char* key, CountRange fallback) {
  if (!doc.contains(key)) return fallback;
  const auto v = doc.at(key).get<std::vector<std::size_t>>();
  if (v.size() != 2) throw std::invalid_argument(std::string(key) + " must be [min, max]");
  return {v[0], v[1]};
}

}  // namespace

// ---------------------------------------------------------------------------

std::uint64_t dataset_sequence_seed(std::uint64_t seed, std::size_t index) {
  return RngStream(seed).split(index).next_u64();
}

nlohmann::json cmd_synth(const SynthRequest& request, const std::filesystem::path& out_dir) {
  if (request.count == 0) throw std::invalid_argument("synth: count must be positive");
  request.base.validate();
  ensure_directory(out_dir);
  nlohmann::json sequences = nlohmann::json::array();
  std::map<std::string, std::size_t> totals{{"eat", 0}, {"drink", 0}};
  const int width = std::max<int>(3, static_cast<int>(std::to_string(request.count - 1).size()));
  for (std::size_t i = 0; i < request.count; ++i) {
    std::string number = std::to_string(i);
    const std::string id = request.prefix + std::string(width - std::min<int>(width, int(number.size())), '0') + number;
    SynthConfig config = request.base;
    config.seed = dataset_sequence_seed(request.seed, i);
    const SyntheticSequence s = generate_sequence(config, id);
    {
      auto out = open_output(out_dir / (id + kKeypointSuffix));
      write_keypoints(out, s.sequence);
      if (!out) throw std::runtime_error("failed writing keypoints for " + id);
    }
    {
      auto out = open_output(out_dir / (id + kLabelSuffix));
      write_labels(out, *s.sequence.labels);
      if (!out) throw std::runtime_error("failed writing labels for " + id);
    }
    std::size_t eat = 0, drink = 0;
    for (const auto& seg : frames_to_segments(*s.sequence.labels)) (seg.class_id == kEat ? eat : drink) += 1;
    totals["eat"] += eat;
    totals["drink"] += drink;
    sequences.push_back({{"id", id},
                         {"seed", config.seed},
                         {"frames", s.sequence.frame_count()},
                         {"eat", eat},
                         {"drink", drink}});
  }
  const SynthConfig& b = request.base;
  nlohmann::json manifest = {{"seed", request.seed},
                             {"count", request.count},
                             {"fps", b.fps},
                             {"duration_seconds", b.duration_seconds},
                             {"frame_size", b.frame_size},
                             {"eat_count", range_json(b.eat_count)},
                             {"drink_count", range_json(b.drink_count)},
                             {"eat_frames", range_json(b.eat_frames)},
                             {"drink_frames", range_json(b.drink_frames)},
                             {"min_gap_frames", b.min_gap_frames},
                             {"jitter_px", b.jitter_px},
                             {"keypoint_dropout", b.keypoint_dropout},
                             {"sequences", sequences},
                             {"totals", totals}};
  auto out = open_output(out_dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  return manifest;
}

// ---------------------------------------------------------------------------

TrainResult cmd_train(const RunConfig& config, const std::filesystem::path& out_dir,
                      const std::optional<std::filesystem::path>& resume) {
  ensure_directory(out_dir);
  TrainOptions options;
  options.out_dir = out_dir;
  options.resume = resume;
  return train_from_files(config, options);
}

// ---------------------------------------------------------------------------

std::vector<std::filesystem::path> cmd_predict(const PredictRequest& request, const std::filesystem::path& out_dir) {
  if (request.batch_size == 0) throw std::invalid_argument("predict: batch_size must be positive");
  const Checkpoint ckpt = load_checkpoint(request.checkpoint);
  const SkeletonTopology topology = checkpoint_topology(ckpt);
  const PartitionedAdjacency adjacency = partition_adjacency(topology);
  const RunConfig run = run_config_from_json(ckpt.run);
  const std::size_t expected = ckpt.config.node_count;

  ensure_directory(out_dir);
  std::vector<std::filesystem::path> written;
  for (const auto& path : expand_inputs(request.inputs)) {
    const std::size_t found = peek_node_count(path);
    if (found != expected && found != kFullNodeCount) {
      throw std::invalid_argument(path.string() + ": keypoint count mismatch: checkpoint expects " +
                                  std::to_string(expected) + " nodes, input has " + std::to_string(found));
    }
    SkeletonSequence raw = load_keypoints(path, run.confidence_threshold, run.fps, found);
    raw.source_id = sequence_id(path);
    SkeletonSequence seq = normalize_coordinates(raw, run.frame_width, run.frame_height);
    if (found != expected) seq = select_nodes(seq, topology);
    const SequencePrediction pred =
        predict_sequence(ckpt.params, ckpt.config, adjacency, seq, run.window_seconds, request.batch_size);
    const auto target = out_dir / (seq.source_id + kPredictionSuffix);
    auto out = open_output(target);
    write_predictions(out, pred.labels, pred.probabilities);
    if (!out) throw std::runtime_error("failed writing " + target.string());
    written.push_back(target);
  }
  return written;
}

// ---------------------------------------------------------------------------

EvalOutcome cmd_eval(const EvalRequest& request) {
  std::map<std::string, std::filesystem::path> gt, pred;
  for (const auto& p : collect(request.ground_truth, kLabelSuffix)) {
    if (!gt.emplace(sequence_id(p), p).second) throw std::invalid_argument("duplicate ground truth id " + sequence_id(p));
  }
  for (const auto& p : collect(request.predictions, kPredictionSuffix)) {
    if (!pred.emplace(sequence_id(p), p).second) throw std::invalid_argument("duplicate prediction id " + sequence_id(p));
  }
  std::vector<std::string> missing_pred, missing_gt;
  for (const auto& [id, _] : gt) {
    if (!pred.count(id)) missing_pred.push_back(id);
  }
  for (const auto& [id, _] : pred) {
    if (!gt.count(id)) missing_gt.push_back(id);
  }
  if (!missing_pred.empty() || !missing_gt.empty()) {
    std::string msg = "sequence id mismatch:";
    if (!missing_pred.empty()) msg += " no prediction for " + nlohmann::json(missing_pred).dump() + ";";
    if (!missing_gt.empty()) msg += " no ground truth for " + nlohmann::json(missing_gt).dump() + ";";
    msg.pop_back();
    throw std::invalid_argument(msg);
  }
  if (gt.empty()) throw std::invalid_argument("eval: no sequences found");

  EvalOutcome outcome;
  for (const auto& [id, pred_path] : pred) {
    const PredictionTable table = load_predictions(pred_path);
    const auto labels = load_labels(gt.at(id), table.labels.size());
    EvalReport report = evaluate(labels, table.labels, request.thresholds);
    outcome.pooled += report;
    outcome.per_sequence.emplace_back(id, std::move(report));
  }
  return outcome;
}

nlohmann::json eval_to_json(const EvalOutcome& outcome) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [id, report] : outcome.per_sequence) per[id] = report_to_json(report);
  return {{"pooled", report_to_json(outcome.pooled)}, {"sequences", per}};
}

// ---------------------------------------------------------------------------

nlohmann::json cmd_inspect_graph(const std::set<BodyPart>& parts, std::optional<int> root_source) {
  const SkeletonTopology topology = build_topology(parts, root_source);
  nlohmann::json doc = topology_to_json(topology);
  const auto hops = hop_distances(topology, topology.root);
  nlohmann::json hop_json = nlohmann::json::array();
  for (std::size_t h : hops) hop_json.push_back(h == kUnreachable ? nlohmann::json(nullptr) : nlohmann::json(h));
  doc["hop_distances"] = hop_json;

  const PartitionedAdjacency adj = partition_adjacency(topology);
  const auto binary = binary_partitions(topology);
  const char* names[] = {"root", "centripetal", "centrifugal"};
  nlohmann::json partitions = nlohmann::json::array();
  const std::size_t v = topology.node_count();
  for (std::size_t p = 0; p < kPartitionCount; ++p) {
    nlohmann::json row_sums = nlohmann::json::array();
    std::size_t entries = 0;
    for (std::size_t i = 0; i < v; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < v; ++j) {
        s += adj.stacks[p][i * v + j];
        entries += binary[p][i * v + j] != 0.0;
      }
      row_sums.push_back(s);
    }
    partitions.push_back({{"name", names[p]}, {"nonzero_entries", entries}, {"row_sums", row_sums}});
  }
  doc["partitions"] = partitions;
  doc["normalization_epsilon"] = adj.normalization_epsilon;
  const TopologyReport report = validate_topology(topology);
  doc["validation"] = {{"pass", report.pass},
                       {"connected", report.connected},
                       {"component_count", report.component_count},
                       {"problems", report.problems}};
  return doc;
}

// ---------------------------------------------------------------------------
// CLI
// ---------------------------------------------------------------------------

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool out_required) {
  cmd->add_option("--config", f.config, "JSON config file; flags override its keys");
  cmd->add_option("--seed", f.seed, "random seed");
  auto* out = cmd->add_option("--out", f.out, "output location");
  if (out_required) out->required();
}

nlohmann::json config_doc(const CommonFlags& f) {
  return f.config.empty() ? nlohmann::json::object() : read_json_file(f.config);
}

template <class T>
void put(nlohmann::json& doc, const char* key, const std::optional<T>& value) {
  if (value) doc[key] = *value;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) {
  if (path.has_parent_path()) ensure_directory(path.parent_path());
  auto out = open_output(path);
  out << doc.dump(2) << '\n';
}

std::string error_line(const std::string& command, const std::string& kind, const std::string& message) {
  return "error: " + nlohmann::json{{"command", command}, {"kind", kind}, {"message", message}}.dump();
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Skeleton-based intake gesture detection"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  // synth
  CommonFlags synth_common;
  std::optional<std::size_t> synth_count;
  std::optional<double> synth_duration, synth_fps;
  auto* synth = app.add_subcommand("synth", "generate a labeled synthetic dataset");
  add_common(synth, synth_common, true);
  synth->add_option("--count", synth_count, "number of sequences (default 20)");
  synth->add_option("--duration", synth_duration, "seconds per sequence (default 60)");
  synth->add_option("--fps", synth_fps, "frame rate (default 24)");

  // train
  CommonFlags train_common;
  std::vector<std::string> train_files, val_files, test_files;
  std::optional<std::string> parts, preset, tcn_mode, resume;
  std::optional<std::size_t> epochs, batch_size, basic_kernel;
  std::optional<double> lr, window_seconds, stride_fraction, smoothing_lambda, smoothing_tau, confidence, fps;
  auto* train = app.add_subcommand("train", "train a model");
  add_common(train, train_common, true);
  train->add_option("--train", train_files, "training keypoint files or directories");
  train->add_option("--val", val_files, "validation keypoint files or directories");
  train->add_option("--test", test_files, "test keypoint files or directories (recorded only)");
  train->add_option("--parts", parts, "body parts, e.g. all or mouth,hand");
  train->add_option("--preset", preset, "reference, reduced or tiny");
  train->add_option("--tcn-mode", tcn_mode, "dilated or basic");
  train->add_option("--epochs", epochs);
  train->add_option("--batch-size", batch_size);
  train->add_option("--lr", lr);
  train->add_option("--window-seconds", window_seconds);
  train->add_option("--stride-fraction", stride_fraction);
  train->add_option("--smoothing-lambda", smoothing_lambda);
  train->add_option("--smoothing-tau", smoothing_tau);
  train->add_option("--basic-kernel", basic_kernel);
  train->add_option("--confidence-threshold", confidence);
  train->add_option("--fps", fps);
  train->add_option("--resume", resume, "checkpoint directory to continue from");

  // predict
  CommonFlags predict_common;
  std::optional<std::string> checkpoint;
  std::vector<std::string> predict_inputs;
  std::optional<std::size_t> predict_batch;
  auto* predict = app.add_subcommand("predict", "write per-frame predictions");
  add_common(predict, predict_common, true);
  predict->add_option("--checkpoint", checkpoint, "checkpoint directory");
  predict->add_option("inputs", predict_inputs, "keypoint files or directories");
  predict->add_option("--batch-size", predict_batch);

  // eval
  CommonFlags eval_common;
  std::vector<std::string> gt_inputs, pred_inputs;
  std::vector<double> ks;
  auto* evalc = app.add_subcommand("eval", "segment-wise evaluation");
  add_common(evalc, eval_common, false);
  evalc->add_option("--gt", gt_inputs, "label files or directories");
  evalc->add_option("--pred", pred_inputs, "prediction files or directories");
  evalc->add_option("--k", ks, "IoU thresholds (default 0.1 0.25 0.5)");

  // inspect-graph
  CommonFlags graph_common;
  std::optional<std::string> graph_parts;
  std::optional<int> graph_root;
  auto* graph = app.add_subcommand("inspect-graph", "describe the skeleton graph");
  add_common(graph, graph_common, false);
  graph->add_option("--parts", graph_parts, "body parts, e.g. all or mouth,hand");
  graph->add_option("--root", graph_root, "root source keypoint index");

  std::vector<std::string> args;
  for (int i = argc - 1; i > 0; --i) args.emplace_back(argv[i]);
  try {
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << error_line(app.get_subcommands().empty() ? "" : app.get_subcommands().front()->get_name(), "usage",
                      e.what())
        << '\n';
    return 2;
  }

  CLI::App* chosen = app.get_subcommands().front();
  const std::string name = chosen->get_name();
  try {
    if (chosen == synth) {
      nlohmann::json doc = config_doc(synth_common);
      put(doc, "count", synth_count);
      put(doc, "seed", synth_common.seed);
      put(doc, "duration_seconds", synth_duration);
      put(doc, "fps", synth_fps);
      SynthRequest req;
      req.count = doc.value("count", req.count);
      req.seed = doc.value("seed", req.seed);
      req.prefix = doc.value("prefix", req.prefix);
      SynthConfig& b = req.base;
      b.fps = doc.value("fps", b.fps);
      b.duration_seconds = doc.value("duration_seconds", b.duration_seconds);
      b.eat_count = range_from(doc, "eat_count", b.eat_count);
      b.drink_count = range_from(doc, "drink_count", b.drink_count);
      b.eat_frames = range_from(doc, "eat_frames", b.eat_frames);
      b.drink_frames = range_from(doc, "drink_frames", b.drink_frames);
      b.min_gap_frames = doc.value("min_gap_frames", b.min_gap_frames);
      b.jitter_px = doc.value("jitter_px", b.jitter_px);
      b.keypoint_dropout = doc.value("keypoint_dropout", b.keypoint_dropout);
      b.frame_size = doc.value("frame_size", b.frame_size);
      const nlohmann::json manifest = cmd_synth(req, synth_common.out);
      out << "wrote " << req.count << " sequences to " << synth_common.out << " (eat "
          << manifest["totals"]["eat"] << ", drink " << manifest["totals"]["drink"] << ")\n";
    } else if (chosen == train) {
      nlohmann::json doc = config_doc(train_common);
      if (!train_files.empty()) doc["train"] = train_files;
      if (!val_files.empty()) doc["val"] = val_files;
      if (!test_files.empty()) doc["test"] = test_files;
      put(doc, "parts", parts);
      put(doc, "preset", preset);
      put(doc, "tcn_mode", tcn_mode);
      put(doc, "epochs", epochs);
      put(doc, "batch_size", batch_size);
      put(doc, "lr", lr);
      put(doc, "window_seconds", window_seconds);
      put(doc, "train_stride_fraction", stride_fraction);
      put(doc, "smoothing_lambda", smoothing_lambda);
      put(doc, "smoothing_tau", smoothing_tau);
      put(doc, "basic_kernel", basic_kernel);
      put(doc, "confidence_threshold", confidence);
      put(doc, "fps", fps);
      put(doc, "seed", train_common.seed);
      const RunConfig config = run_config_from_json(doc);
      std::optional<std::filesystem::path> resume_path;
      if (resume) resume_path = *resume;
      const TrainResult result = cmd_train(config, train_common.out, resume_path);
      const auto& m = result.final.metrics;
      out << "trained " << result.final.epoch << " epochs, " << result.final.step << " steps";
      if (m.contains("train_loss")) out << ", final train loss " << m["train_loss"].get<double>();
      if (m.contains("val_f1")) out << ", final val F1@0.5 " << m["val_f1"].get<double>();
      out << "\ncheckpoints in " << train_common.out << "/best and " << train_common.out << "/final\n";
    } else if (chosen == predict) {
      nlohmann::json doc = config_doc(predict_common);
      PredictRequest req;
      if (checkpoint) req.checkpoint = *checkpoint;
      else if (doc.contains("checkpoint")) req.checkpoint = doc.at("checkpoint").get<std::string>();
      else throw std::invalid_argument("predict: --checkpoint is required");
      req.inputs = !predict_inputs.empty() ? predict_inputs : doc.value("inputs", std::vector<std::string>{});
      if (req.inputs.empty()) throw std::invalid_argument("predict: no input keypoint files");
      req.batch_size = predict_batch.value_or(doc.value("batch_size", req.batch_size));
      const auto written = cmd_predict(req, predict_common.out);
      out << "wrote " << written.size() << " prediction files to " << predict_common.out << '\n';
    } else if (chosen == evalc) {
      nlohmann::json doc = config_doc(eval_common);
      EvalRequest req;
      req.ground_truth = !gt_inputs.empty() ? gt_inputs : doc.value("gt", std::vector<std::string>{});
      req.predictions = !pred_inputs.empty() ? pred_inputs : doc.value("pred", std::vector<std::string>{});
      if (!ks.empty()) req.thresholds = ks;
      else if (doc.contains("k")) req.thresholds = doc.at("k").get<std::vector<double>>();
      if (req.ground_truth.empty() || req.predictions.empty())
        throw std::invalid_argument("eval: both --gt and --pred are required");
      const EvalOutcome outcome = cmd_eval(req);
      if (!eval_common.out.empty()) {
        ensure_directory(eval_common.out);
        write_json(std::filesystem::path(eval_common.out) / "eval.json", eval_to_json(outcome));
        auto table = open_output(std::filesystem::path(eval_common.out) / "eval.txt");
        table << report_to_table(outcome.pooled);
      }
      out << report_to_table(outcome.pooled);
    } else if (chosen == graph) {
      nlohmann::json doc = config_doc(graph_common);
      std::set<BodyPart> selected = all_body_parts();
      if (graph_parts) selected = parse_body_parts(*graph_parts);
      else if (doc.contains("parts")) selected = run_config_from_json({{"parts", doc.at("parts")}}).parts;
      std::optional<int> root = graph_root;
      if (!root && doc.contains("root_source")) root = doc.at("root_source").get<int>();
      const nlohmann::json report = cmd_inspect_graph(selected, root);
      if (!graph_common.out.empty()) write_json(graph_common.out, report);
      else out << report.dump(2) << '\n';
    }
  } catch (const NonFiniteError& e) {
    err << error_line(name, "non_finite", e.what()) << '\n';
    return 3;
  } catch (const ParseError& e) {
    err << error_line(name, "parse", e.what()) << '\n';
    return 1;
  } catch (const std::invalid_argument& e) {
    err << error_line(name, "invalid_argument", e.what()) << '\n';
    return 1;
  } catch (const nlohmann::json::exception& e) {
    err << error_line(name, "config", e.what()) << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << error_line(name, "runtime", e.what()) << '\n';
    return 1;
  }
  return 0;
}

}  // namespace intake
