#include "intake/run_config.hpp"

#include <fstream>
#include <stdexcept>

namespace intake {

ModelConfig model_preset(const std::string& name, TcnMode mode) {
  ModelConfig c;
  if (name == "reference") {
    c = ModelConfig::table_one(kFullNodeCount, mode);
  } else if (name == "reduced") {
    c.blocks = {{16, 1, 0.15, 3}, {16, 2, 0.15, 3}, {32, 4, 0.3, 3}, {32, 8, 0.3, 3}};
    c.bilstm_hidden = 32;
    c.basic_kernel = 3;
  } else if (name == "tiny") {
    c.blocks = {{8, 1, 0.1, 3}, {8, 2, 0.1, 3}};
    c.bilstm_hidden = 8;
    c.dense_widths = {16};
    c.basic_kernel = 3;
  } else {
    throw std::invalid_argument("unknown model preset '" + name + "' (expected reference, reduced or tiny)");
  }
  c.tcn_mode = mode;
  return c;
}

void RunConfig::validate() const {
  if (parts.empty()) throw std::invalid_argument("run config: no body parts selected");
  if (confidence_threshold < 0.0 || confidence_threshold > 1.0)
    throw std::invalid_argument("run config: confidence_threshold must be in [0, 1]");
  if (window_seconds <= 0.0) throw std::invalid_argument("run config: window_seconds must be positive");
  if (train_stride_fraction <= 0.0) throw std::invalid_argument("run config: train_stride_fraction must be positive");
  if (fps <= 0.0) throw std::invalid_argument("run config: fps must be positive");
  if (frame_width <= 0.0 || frame_height <= 0.0) throw std::invalid_argument("run config: frame size must be positive");
  if (batch_size == 0) throw std::invalid_argument("run config: batch_size must be positive");
  if (!(adam.lr > 0.0)) throw std::invalid_argument("run config: lr must be positive");
  model.validate();
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json parts = nlohmann::json::array();
  for (BodyPart p : c.parts) parts.push_back(std::string(to_string(p)));
  return {{"parts", parts},
          {"confidence_threshold", c.confidence_threshold},
          {"window_seconds", c.window_seconds},
          {"train_stride_fraction", c.train_stride_fraction},
          {"fps", c.fps},
          {"frame_width", c.frame_width},
          {"frame_height", c.frame_height},
          {"preset", c.preset},
          {"model", to_json(c.model)},
          {"lr", c.adam.lr},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"adam_eps", c.adam.eps},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"train", c.train_files},
          {"val", c.val_files},
          {"test", c.test_files}};
}

RunConfig run_config_from_json(const nlohmann::json& doc, RunConfig c) {
  if (!doc.is_object()) throw std::invalid_argument("run config must be a JSON object");
  if (doc.contains("parts")) {
    const auto& p = doc.at("parts");
    if (p.is_string()) {
      c.parts = parse_body_parts(p.get<std::string>());
    } else {
      c.parts.clear();
      for (const auto& name : p) c.parts.insert(parse_body_part(name.get<std::string>()));
    }
  }
  c.confidence_threshold = doc.value("confidence_threshold", c.confidence_threshold);
  c.window_seconds = doc.value("window_seconds", c.window_seconds);
  c.train_stride_fraction = doc.value("train_stride_fraction", c.train_stride_fraction);
  c.fps = doc.value("fps", c.fps);
  c.frame_width = doc.value("frame_width", c.frame_width);
  c.frame_height = doc.value("frame_height", c.frame_height);
  if (doc.contains("preset")) {
    c.preset = doc.at("preset").get<std::string>();
    c.model = model_preset(c.preset, c.model.tcn_mode);
  }
  if (doc.contains("model")) c.model = model_config_from_json(doc.at("model"));
  if (doc.contains("tcn_mode")) c.model.tcn_mode = parse_tcn_mode(doc.at("tcn_mode").get<std::string>());
  c.model.smoothing_lambda = doc.value("smoothing_lambda", c.model.smoothing_lambda);
  c.model.smoothing_tau = doc.value("smoothing_tau", c.model.smoothing_tau);
  c.model.basic_kernel = doc.value("basic_kernel", c.model.basic_kernel);
  c.model.train_edge_importance = doc.value("train_edge_importance", c.model.train_edge_importance);
  c.adam.lr = doc.value("lr", c.adam.lr);
  c.adam.beta1 = doc.value("beta1", c.adam.beta1);
  c.adam.beta2 = doc.value("beta2", c.adam.beta2);
  c.adam.eps = doc.value("adam_eps", c.adam.eps);
  c.epochs = doc.value("epochs", c.epochs);
  c.batch_size = doc.value("batch_size", c.batch_size);
  c.seed = doc.value("seed", c.seed);
  if (doc.contains("train")) c.train_files = doc.at("train").get<std::vector<std::string>>();
  if (doc.contains("val")) c.val_files = doc.at("val").get<std::vector<std::string>>();
  if (doc.contains("test")) c.test_files = doc.at("test").get<std::vector<std::string>>();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(doc);
}

}  // namespace intake
