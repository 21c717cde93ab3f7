#include "doctest.h"

#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "intake/checkpoint.hpp"
#include "intake/commands.hpp"
#include "intake/synth.hpp"
#include "intake/training.hpp"
#include "model_oracle.hpp"
#include "test_support.hpp"

using namespace intake;
using intake::testing::expected_parameter_count;
using intake::testing::read_file;
using intake::testing::TempDir;
namespace fs = std::filesystem;

namespace {

SynthConfig short_synth() {
  SynthConfig s;
  s.duration_seconds = 20.0;
  s.eat_count = {2, 3};
  s.drink_count = {1, 1};
  return s;
}

RunConfig tiny_run(TcnMode mode = TcnMode::dilated) {
  RunConfig c;
  c.preset = "tiny";
  c.model = model_preset("tiny", mode);
  c.epochs = 1;
  c.batch_size = 8;
  c.seed = 11;
  return c;
}

// A small on-disk dataset plus one trained tiny checkpoint, built once.
struct Fixture {
  TempDir dir{"cli_fixture"};
  fs::path data = dir / "data";
  fs::path run = dir / "run";
  RunConfig config = tiny_run();
  TrainResult result;

  Fixture() {
    SynthRequest req;
    req.count = 3;
    req.seed = 5;
    req.base = short_synth();
    cmd_synth(req, data);
    config.train_files = {(data / "seq000.keypoints.jsonl").string(), (data / "seq001.keypoints.jsonl").string()};
    config.val_files = {(data / "seq002.keypoints.jsonl").string()};
    config.epochs = 2;
    result = cmd_train(config, run);
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

std::vector<nlohmann::json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  std::vector<nlohmann::json> out;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  return out;
}

std::uint32_t float_bits(double v) { return std::bit_cast<std::uint32_t>(static_cast<float>(v)); }

void check_same_at_float(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(float_bits(a[i]) == float_bits(b[i]));
    CHECK(b[i] == static_cast<double>(static_cast<float>(b[i])));
  }
}

int cli(std::vector<std::string> args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  std::vector<const char*> argv{"intake"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return code;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

}  // namespace

// ---------------------------------------------------------------------------

TEST_CASE("run configuration defaults") {
  const RunConfig c;
  CHECK(c.adam.lr == 0.0005);
  CHECK(c.adam.beta1 == 0.9);
  CHECK(c.adam.beta2 == 0.999);
  CHECK(c.adam.eps == 1e-8);
  CHECK(c.epochs == 50);
  CHECK(c.batch_size == 64);
  CHECK(c.window_seconds == 6.0);
  CHECK(c.confidence_threshold == 0.3);
  CHECK(c.parts == all_body_parts());
  CHECK(c.model.matches_table_one());
  CHECK(c.model.smoothing_lambda == 0.15);
  CHECK(c.model.smoothing_tau == 4.0);
}

TEST_CASE("run configuration survives a JSON round trip") {
  RunConfig c = tiny_run(TcnMode::basic);
  c.parts = parse_body_parts("mouth,hand");
  c.adam.lr = 0.002;
  c.window_seconds = 4.5;
  c.train_files = {"a.keypoints.jsonl"};
  c.val_files = {"b"};
  const RunConfig back = run_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.parts == c.parts);
  CHECK(back.model.tcn_mode == TcnMode::basic);

  CHECK_THROWS_AS(run_config_from_json({{"window_seconds", -1.0}}), std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json({{"preset", "huge"}}), std::invalid_argument);
}

// ---------------------------------------------------------------------------

TEST_CASE("synth writes one keypoint and one label file per sequence") {
  TempDir dir("synth_count");
  SynthRequest req;
  req.count = 20;
  req.seed = 3;
  req.base = short_synth();
  const nlohmann::json manifest = cmd_synth(req, dir.path());

  std::size_t keypoints = 0, labels = 0;
  for (const auto& entry : fs::directory_iterator(dir.path())) {
    const std::string name = entry.path().filename().string();
    keypoints += name.ends_with(kKeypointSuffix);
    labels += name.ends_with(kLabelSuffix);
  }
  CHECK(keypoints == 20);
  CHECK(labels == 20);
  CHECK(manifest["sequences"].size() == 20);

  // Recount the gestures from the label files themselves.
  std::size_t eat = 0, drink = 0;
  for (const auto& s : manifest["sequences"]) {
    const std::string id = s["id"].get<std::string>();
    const auto frames = s["frames"].get<std::size_t>();
    const auto labels_read = load_labels(dir / (id + kLabelSuffix), frames);
    std::size_t e = 0, d = 0;
    for (const auto& seg : frames_to_segments(labels_read)) (seg.class_id == kEat ? e : d) += 1;
    CHECK(s["eat"].get<std::size_t>() == e);
    CHECK(s["drink"].get<std::size_t>() == d);
    eat += e;
    drink += d;
  }
  CHECK(manifest["totals"]["eat"].get<std::size_t>() == eat);
  CHECK(manifest["totals"]["drink"].get<std::size_t>() == drink);
}

TEST_CASE("synth with a fixed seed is byte-identical") {
  TempDir a("synth_a"), b("synth_b");
  SynthRequest req;
  req.count = 3;
  req.seed = 17;
  req.base = short_synth();
  cmd_synth(req, a.path());
  cmd_synth(req, b.path());
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(a.path())) {
    const fs::path name = entry.path().filename();
    CHECK(read_file(entry.path()) == read_file(b / name.string()));
    ++files;
  }
  CHECK(files == 7);

  TempDir c("synth_c");
  req.seed = 18;
  cmd_synth(req, c.path());
  CHECK(read_file(a / "seq000.keypoints.jsonl") != read_file(c / "seq000.keypoints.jsonl"));
}

// ---------------------------------------------------------------------------

TEST_CASE("checkpoint round trip is exact at float32") {
  const Fixture& f = fixture();
  const Checkpoint& saved = f.result.final;
  const Checkpoint loaded = load_checkpoint(f.run / "final");

  CHECK(loaded.step == saved.step);
  CHECK(loaded.epoch == saved.epoch);
  CHECK(loaded.parts == saved.parts);
  CHECK(loaded.root_source == kLowerLipSource);
  CHECK(to_json(loaded.config) == to_json(saved.config));
  CHECK(loaded.run == saved.run);

  const auto a = saved.params.all();
  const auto b = loaded.params.all();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CAPTURE(a[i]->name);
    CHECK(a[i]->name == b[i]->name);
    CHECK(b[i]->step_count == saved.step);
    check_same_at_float(a[i]->value, b[i]->value);
    if (a[i]->trainable) {
      check_same_at_float(a[i]->adam_m, b[i]->adam_m);
      check_same_at_float(a[i]->adam_v, b[i]->adam_v);
    }
  }
  const auto ba = saved.params.buffers();
  const auto bb = loaded.params.buffers();
  REQUIRE(ba.size() == bb.size());
  for (std::size_t i = 0; i < ba.size(); ++i) check_same_at_float(*ba[i].second, *bb[i].second);

  // Save the reloaded checkpoint again: the blob is unchanged.
  TempDir again("ckpt_again");
  save_checkpoint(again.path(), loaded);
  CHECK(read_file(again / "params.bin") == read_file(f.run / "final" / "params.bin"));
}

TEST_CASE("checkpoint loading rejects damaged files") {
  const Fixture& f = fixture();
  TempDir dir("ckpt_damage");
  const fs::path good = dir / "good";
  fs::copy(f.run / "final", good);
  CHECK_NOTHROW(load_checkpoint(good));

  SUBCASE("flipped byte") {
    std::string blob = read_file(good / "params.bin");
    blob[blob.size() / 2] ^= 0x01;
    write_text(good / "params.bin", blob);
    CHECK_THROWS_AS(load_checkpoint(good), std::runtime_error);
  }
  SUBCASE("truncated blob") {
    std::string blob = read_file(good / "params.bin");
    blob.resize(blob.size() - 4);
    write_text(good / "params.bin", blob);
    CHECK_THROWS_AS(load_checkpoint(good), std::runtime_error);
  }
  SUBCASE("unknown format version") {
    auto manifest = nlohmann::json::parse(read_file(good / "manifest.json"));
    manifest["format_version"] = kCheckpointFormatVersion + 1;
    write_text(good / "manifest.json", manifest.dump());
    CHECK_THROWS_AS(load_checkpoint(good), std::runtime_error);
  }
  SUBCASE("missing directory") { CHECK_THROWS_AS(load_checkpoint(dir / "nowhere"), std::runtime_error); }
}

TEST_CASE("reloaded best checkpoint reproduces its validation metrics") {
  const Fixture& f = fixture();
  const Checkpoint best = load_checkpoint(f.run / "best");
  REQUIRE(best.metrics.contains("val_f1"));

  const SkeletonTopology topology = checkpoint_topology(best);
  std::vector<SkeletonSequence> val;
  for (const auto& path : f.config.val_files) val.push_back(prepare_sequence(path, f.config, topology, true));
  const auto summary = evaluate_sequences(best.params, best.config, partition_adjacency(topology), val,
                                          f.config.window_seconds, f.config.batch_size);
  CHECK(summary.loss == best.metrics["val_loss"].get<double>());
  CHECK(summary.f1 == best.metrics["val_f1"].get<double>());
  CHECK(report_to_json(summary.report) == best.metrics["val_report"]);
}

TEST_CASE("metrics log records each epoch") {
  const Fixture& f = fixture();
  const auto log = read_jsonl(f.run / "metrics.jsonl");
  REQUIRE(log.size() == 3);
  CHECK(log[0]["event"] == "start");
  for (std::size_t e = 1; e <= 2; ++e) {
    CHECK(log[e]["event"] == "epoch");
    CHECK(log[e]["epoch"] == e);
    for (const char* key : {"train_loss", "val_loss", "val_f1"}) CHECK(std::isfinite(log[e][key].get<double>()));
  }
  CHECK(f.result.final.epoch == 2);
}

TEST_CASE("resuming continues the step counter") {
  const Fixture& f = fixture();
  const std::uint64_t steps_per_epoch = f.result.final.step / f.result.final.epoch;
  REQUIRE(steps_per_epoch > 0);

  TempDir dir("resume");
  RunConfig more = f.config;
  more.epochs = 3;
  const TrainResult resumed = cmd_train(more, dir.path(), f.run / "final");
  CHECK(resumed.final.epoch == 3);
  CHECK(resumed.final.step == 3 * steps_per_epoch);

  const auto log = read_jsonl(dir / "metrics.jsonl");
  REQUIRE(log.size() == 2);
  CHECK(log[0]["event"] == "resume");
  CHECK(log[0]["step"] == f.result.final.step);
  CHECK(log[1]["epoch"] == 3);
  CHECK(log[1]["step"] == 3 * steps_per_epoch);

  RunConfig other = more;
  other.model = model_preset("tiny", TcnMode::basic);
  TempDir dir2("resume_mismatch");
  CHECK_THROWS(cmd_train(other, dir2.path(), f.run / "final"));
}

TEST_CASE("basic and dilated runs log their own parameter counts") {
  const Fixture& f = fixture();
  std::map<TcnMode, std::size_t> logged;
  for (TcnMode mode : {TcnMode::basic, TcnMode::dilated}) {
    TempDir dir(mode == TcnMode::basic ? "count_basic" : "count_dilated");
    RunConfig c = f.config;
    c.model = model_preset("tiny", mode);
    c.model.basic_kernel = 9;
    c.epochs = 1;
    c.val_files.clear();
    cmd_train(c, dir.path());
    const auto log = read_jsonl(dir / "metrics.jsonl");
    logged[mode] = log.at(0)["parameter_count"].get<std::size_t>();
    CHECK(logged[mode] == expected_parameter_count(c.model));
  }
  CHECK(logged[TcnMode::basic] > logged[TcnMode::dilated]);
}

// ---------------------------------------------------------------------------

TEST_CASE("predict writes one normalized row per frame, deterministically") {
  const Fixture& f = fixture();
  TempDir a("predict_a"), b("predict_b");
  PredictRequest req;
  req.checkpoint = f.run / "best";
  req.inputs = {f.data.string()};
  const auto written = cmd_predict(req, a.path());
  REQUIRE(written.size() == 3);
  cmd_predict(req, b.path());

  for (const auto& path : written) {
    const std::string id = sequence_id(path);
    const auto seq = load_keypoints(f.data / (id + kKeypointSuffix));
    const auto table = load_predictions(path);
    CHECK(table.labels.size() == seq.frame_count());
    REQUIRE(table.probabilities.dim(0) == seq.frame_count());
    for (std::size_t t = 0; t < seq.frame_count(); ++t) {
      double s = 0.0;
      for (std::size_t c = 0; c < kClassCount; ++c) s += table.probabilities.at({t, c});
      CHECK(std::abs(s - 1.0) <= 1e-6);
    }
    CHECK(read_file(path) == read_file(b / path.filename().string()));
  }
}

TEST_CASE("predict rejects keypoints with the wrong node count") {
  const Fixture& f = fixture();
  TempDir dir("predict_mismatch");
  const auto seq = load_keypoints(f.data / "seq000.keypoints.jsonl");
  const auto subset = select_nodes(seq, build_topology(parse_body_parts("mouth,hand")));
  const fs::path input = dir / "odd.keypoints.jsonl";
  {
    std::ofstream out(input);
    write_keypoints(out, subset);
  }
  PredictRequest req;
  req.checkpoint = f.run / "best";
  req.inputs = {input.string()};
  try {
    cmd_predict(req, dir / "out");
    FAIL("expected a node count error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("expects 23") != std::string::npos);
    CHECK(msg.find("has " + std::to_string(subset.node_count())) != std::string::npos);
  }
}

// ---------------------------------------------------------------------------

namespace {

// Writes a label file and a prediction file whose eat segments give exactly
// tp matches, fp spurious predictions and fn missed gestures at IoU 1 or 0.
void write_count_fixture(const fs::path& gt_dir, const fs::path& pred_dir, const std::string& id, std::size_t tp,
                         std::size_t fp, std::size_t fn) {
  const std::size_t slot = 10;
  const std::size_t total = (tp + fp + fn) * slot + slot;
  std::vector<int> gt(total, kNone), pred(total, kNone);
  std::size_t pos = slot / 2;
  auto paint = [&](std::vector<int>& v) {
    for (std::size_t i = pos; i < pos + slot / 2; ++i) v[i] = kEat;
  };
  for (std::size_t i = 0; i < tp; ++i, pos += slot) {
    paint(gt);
    paint(pred);
  }
  for (std::size_t i = 0; i < fp; ++i, pos += slot) paint(pred);
  for (std::size_t i = 0; i < fn; ++i, pos += slot) paint(gt);

  std::ofstream g(gt_dir / (id + kLabelSuffix));
  write_labels(g, gt);
  Tensor probs(std::vector<std::size_t>{total, kClassCount});
  for (std::size_t t = 0; t < total; ++t) probs.at({t, static_cast<std::size_t>(pred[t])}) = 1.0;
  std::ofstream p(pred_dir / (id + kPredictionSuffix));
  write_predictions(p, pred, probs);
}

}  // namespace

TEST_CASE("eval reproduces published eating F1 from count fixtures") {
  struct Row {
    double k;
    std::size_t tp, fp, fn;
    double f1_percent;
  };
  const Row rows[] = {{0.1, 705, 109, 132, 85.40}, {0.25, 693, 114, 139, 84.56}, {0.5, 625, 149, 172, 79.57}};
  for (const Row& r : rows) {
    CAPTURE(r.k);
    TempDir gt("eval_gt"), pred("eval_pred");
    // Split across two sequences so pooling is exercised too.
    write_count_fixture(gt.path(), pred.path(), "a", r.tp / 2, r.fp / 2, r.fn / 2);
    write_count_fixture(gt.path(), pred.path(), "b", r.tp - r.tp / 2, r.fp - r.fp / 2, r.fn - r.fn / 2);
    EvalRequest req;
    req.ground_truth = {gt.path().string()};
    req.predictions = {pred.path().string()};
    req.thresholds = {r.k};
    const EvalOutcome outcome = cmd_eval(req);
    const EvalEntry& e = outcome.pooled.at(kEat, r.k);
    CHECK(e.counts == MatchCounts{r.tp, r.fp, r.fn});
    CHECK(std::abs(100.0 * e.metrics.f1 - r.f1_percent) < 0.01);
  }
}

TEST_CASE("eval pools per-sequence counts and scores identical files perfectly") {
  const Fixture& f = fixture();
  TempDir pred("eval_identity");
  for (const auto& entry : fs::directory_iterator(f.data)) {
    const std::string name = entry.path().filename().string();
    if (!name.ends_with(kLabelSuffix)) continue;
    const std::string id = sequence_id(entry.path());
    const auto frames = load_keypoints(f.data / (id + kKeypointSuffix)).frame_count();
    const auto labels = load_labels(entry.path(), frames);
    Tensor probs(std::vector<std::size_t>{frames, kClassCount});
    for (std::size_t t = 0; t < frames; ++t) probs.at({t, static_cast<std::size_t>(labels[t])}) = 1.0;
    std::ofstream out(pred / (id + kPredictionSuffix));
    write_predictions(out, labels, probs);
  }
  EvalRequest req;
  req.ground_truth = {f.data.string()};
  req.predictions = {pred.path().string()};
  const EvalOutcome identical = cmd_eval(req);
  CHECK(identical.per_sequence.size() == 3);
  for (const auto& e : identical.pooled.entries) {
    CHECK(e.counts.fp == 0);
    CHECK(e.counts.fn == 0);
    CHECK(e.metrics.f1 == 1.0);
  }

  // Real predictions: pooled counts are the per-sequence sums.
  TempDir real("eval_real");
  PredictRequest preq;
  preq.checkpoint = f.run / "final";
  preq.inputs = {f.data.string()};
  cmd_predict(preq, real.path());
  req.predictions = {real.path().string()};
  const EvalOutcome outcome = cmd_eval(req);
  for (const auto& e : outcome.pooled.entries) {
    MatchCounts sum;
    for (const auto& [id, report] : outcome.per_sequence) sum += report.at(e.class_id, e.k).counts;
    CHECK(sum == e.counts);
    CHECK(e.metrics.f1 == f1_from_counts(sum).f1);
  }
  const nlohmann::json doc = eval_to_json(outcome);
  CHECK(doc["sequences"].size() == 3);
  CHECK(doc["pooled"] == report_to_json(outcome.pooled));
}

TEST_CASE("eval requires matching sequence ids") {
  TempDir gt("ids_gt"), pred("ids_pred");
  write_count_fixture(gt.path(), pred.path(), "a", 1, 0, 0);
  write_count_fixture(gt.path(), pred.path(), "b", 1, 0, 0);
  fs::remove(pred / "b.pred.csv");
  EvalRequest req;
  req.ground_truth = {gt.path().string()};
  req.predictions = {pred.path().string()};
  try {
    cmd_eval(req);
    FAIL("expected an id mismatch error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find('b') != std::string::npos);
  }
}

// ---------------------------------------------------------------------------

TEST_CASE("inspect-graph describes the full skeleton") {
  const nlohmann::json doc = cmd_inspect_graph(all_body_parts());
  CHECK(doc["node_count"] == 23);
  CHECK(doc["root"]["local_index"] == 12);
  CHECK(doc["root"]["source_index"] == 90);
  CHECK(doc["connected"] == true);
  CHECK(doc["warnings"].empty());
  CHECK(doc["hop_distances"][12] == 0);
  for (const auto& h : doc["hop_distances"]) CHECK(!h.is_null());
  REQUIRE(doc["partitions"].size() == 3);
  // The partitions split the self loops and both directions of every edge;
  // each is row normalized, so a row sums to zero or to just under one.
  std::size_t entries = 0;
  for (const auto& p : doc["partitions"]) entries += p["nonzero_entries"].get<std::size_t>();
  CHECK(entries == 23 + 2 * doc["edges"].size());
  for (const auto& p : doc["partitions"]) {
    for (const auto& r : p["row_sums"]) {
      const double s = r.get<double>();
      CHECK((s == 0.0 || (s > 0.99 && s <= 1.0)));
    }
  }
  for (const auto& r : doc["partitions"][0]["row_sums"]) CHECK(r.get<double>() > 0.99);
}

TEST_CASE("inspect-graph warns about a disconnected part selection") {
  const nlohmann::json doc = cmd_inspect_graph(parse_body_parts("mouth,hand"));
  CHECK(doc["connected"] == false);
  CHECK(!doc["warnings"].empty());
  bool unreachable = false;
  for (const auto& h : doc["hop_distances"]) unreachable |= h.is_null();
  CHECK(unreachable);
}

// ---------------------------------------------------------------------------

TEST_CASE("command line flags override the config file") {
  const Fixture& f = fixture();
  TempDir dir("cli_override");
  nlohmann::json cfg = to_json(f.config);
  cfg["epochs"] = 4;
  cfg["lr"] = 0.01;
  cfg["val"] = nlohmann::json::array();
  write_text(dir / "config.json", cfg.dump());

  std::string out, err;
  const int code = cli({"train", "--config", (dir / "config.json").string(), "--epochs", "1", "--seed", "9", "--out",
                        (dir / "run").string()},
                       &out, &err);
  INFO(err);
  REQUIRE(code == 0);
  const Checkpoint c = load_checkpoint(dir / "run" / "final");
  CHECK(c.epoch == 1);
  CHECK(c.run["epochs"] == 1);
  CHECK(c.run["seed"] == 9);
  CHECK(c.run["lr"] == 0.01);
  CHECK(c.run["preset"] == "tiny");
}

TEST_CASE("command line errors are machine readable") {
  TempDir dir("cli_errors");
  std::string out, err;

  CHECK(cli({"predict", "--checkpoint", (dir / "missing").string(), "--out", (dir / "o").string(),
             (dir / "x.keypoints.jsonl").string()},
            &out, &err) == 1);
  REQUIRE(err.starts_with("error: "));
  const auto doc = nlohmann::json::parse(err.substr(7));
  CHECK(doc["command"] == "predict");
  CHECK(doc.contains("kind"));
  CHECK(!doc["message"].get<std::string>().empty());

  CHECK(cli({"train", "--no-such-flag"}, &out, &err) == 2);
  CHECK(nlohmann::json::parse(err.substr(7))["kind"] == "usage");
  CHECK(cli({}, &out, &err) == 2);

  CHECK(cli({"inspect-graph", "--parts", "mouth,hand"}, &out, &err) == 0);
  CHECK(nlohmann::json::parse(out)["connected"] == false);
}

TEST_CASE("synth and eval through the command line") {
  TempDir dir("cli_roundtrip");
  const std::string data = (dir / "data").string();
  std::string out, err;
  REQUIRE(cli({"synth", "--count", "2", "--duration", "60", "--seed", "4", "--out", data}, &out, &err) == 0);
  CHECK(fs::exists(dir / "data" / "manifest.json"));
  REQUIRE(cli({"eval", "--gt", data, "--pred", data, "--out", (dir / "eval").string()}, &out, &err) == 1);
  INFO(err);
  CHECK(err.find("seq000") != std::string::npos);
}
