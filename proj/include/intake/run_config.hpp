#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "intake/graph.hpp"
#include "intake/model.hpp"
#include "intake/optim.hpp"

namespace intake {

/// Named architectures: "reference" is the 10-block layout, "reduced" the
/// 4-block desk-scale model, "tiny" a 2-block model for smoke tests.
ModelConfig model_preset(const std::string& name, TcnMode mode = TcnMode::dilated);

struct RunConfig {
  std::set<BodyPart> parts = all_body_parts();
  double confidence_threshold = 0.3;
  double window_seconds = 6.0;
  double train_stride_fraction = 0.5;
  double fps = 24.0;
  double frame_width = 140.0;
  double frame_height = 140.0;
  std::string preset = "reference";
  ModelConfig model = ModelConfig::table_one();
  AdamSettings adam;
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::vector<std::string> train_files;  // keypoint files or dataset directories
  std::vector<std::string> val_files;
  std::vector<std::string> test_files;

  void validate() const;
};

nlohmann::json to_json(const RunConfig& config);
/// Keys absent from `doc` keep the values already in `base`.
RunConfig run_config_from_json(const nlohmann::json& doc, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace intake
