#include "intake/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace intake {

namespace {

constexpr const char* kManifestName = "manifest.json";
constexpr const char* kBlobName = "params.bin";

struct Entry {
  std::string name;
  std::string kind;
  Tensor* tensor;
};

std::vector<Entry> blob_entries(ModelParams& params) {
  std::vector<Entry> out;
  for (Param* p : params.all()) out.push_back({p->name, "param", &p->value});
  for (auto& [name, t] : params.buffers()) out.push_back({name, "buffer", t});
  for (Param* p : params.all()) {
    if (!p->trainable) continue;
    out.push_back({p->name, "adam_m", &p->adam_m});
    out.push_back({p->name, "adam_v", &p->adam_v});
  }
  return out;
}

void put_float(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

double get_float(const std::uint8_t* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= std::uint32_t(p[i]) << (8 * i);
  return static_cast<double>(std::bit_cast<float>(bits));
}

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

void quantize(Tensor& t) {
  for (double& v : t.values()) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void quantize_to_float(ModelParams& params) {
  for (Param* p : params.all()) quantize(p->value);
  for (auto& [name, t] : params.buffers()) quantize(*t);
}

SkeletonTopology checkpoint_topology(const Checkpoint& c) { return build_topology(c.parts, c.root_source); }

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& checkpoint) {
  std::filesystem::create_directories(dir);
  auto& params = const_cast<ModelParams&>(checkpoint.params);  // entries are only read
  std::vector<std::uint8_t> blob;
  nlohmann::json index = nlohmann::json::array();
  for (const auto& e : blob_entries(params)) {
    index.push_back({{"name", e.name}, {"kind", e.kind}, {"shape", e.tensor->shape()}, {"offset", blob.size()}});
    for (double v : e.tensor->values()) put_float(blob, v);
  }
  nlohmann::json parts = nlohmann::json::array();
  for (BodyPart p : checkpoint.parts) parts.push_back(std::string(to_string(p)));
  nlohmann::json manifest = {
      {"format_version", kCheckpointFormatVersion},
      {"model", to_json(checkpoint.config)},
      {"topology", {{"parts", parts}, {"root_source", checkpoint.root_source}, {"node_count", checkpoint.config.node_count}}},
      {"dtype", "float32-le"},
      {"blob", kBlobName},
      {"blob_bytes", blob.size()},
      {"blob_fnv1a64", hex64(fnv1a64(blob))},
      {"parameter_count", params.parameter_count()},
      {"tensors", index},
      {"optimizer", {{"name", "adam"}, {"step", checkpoint.step}}},
      {"epoch", checkpoint.epoch},
      {"run", checkpoint.run},
      {"metrics", checkpoint.metrics},
  };
  {
    std::ofstream out(dir / kBlobName, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + (dir / kBlobName).string());
    out.write(reinterpret_cast<const char*>(blob.data()), std::streamsize(blob.size()));
    if (!out) throw std::runtime_error("failed writing " + (dir / kBlobName).string());
  }
  std::ofstream out(dir / kManifestName, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + (dir / kManifestName).string());
  out << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream min(dir / kManifestName);
  if (!min) throw std::runtime_error("checkpoint manifest not found in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(min);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("checkpoint manifest is not valid JSON: " + std::string(e.what()));
  }
  if (manifest.value("format_version", 0) != kCheckpointFormatVersion)
    throw std::runtime_error("unsupported checkpoint format version");

  std::ifstream bin(dir / manifest.value("blob", std::string(kBlobName)), std::ios::binary);
  if (!bin) throw std::runtime_error("checkpoint blob not found in " + dir.string());
  std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  if (blob.size() != manifest.at("blob_bytes").get<std::size_t>())
    throw std::runtime_error("checkpoint blob has " + std::to_string(blob.size()) + " bytes, manifest says " +
                             std::to_string(manifest.at("blob_bytes").get<std::size_t>()));
  if (hex64(fnv1a64(blob)) != manifest.at("blob_fnv1a64").get<std::string>())
    throw std::runtime_error("checkpoint blob hash mismatch (file corrupted or modified)");

  Checkpoint c;
  c.config = model_config_from_json(manifest.at("model"));
  for (const auto& p : manifest.at("topology").at("parts")) c.parts.insert(parse_body_part(p.get<std::string>()));
  c.root_source = manifest.at("topology").at("root_source").get<std::size_t>();
  c.step = manifest.at("optimizer").at("step").get<std::uint64_t>();
  c.epoch = manifest.value("epoch", std::size_t{0});
  c.run = manifest.value("run", nlohmann::json::object());
  c.metrics = manifest.value("metrics", nlohmann::json::object());
  c.params = init_params(c.config, RngStream(0));

  const auto entries = blob_entries(c.params);
  const auto& index = manifest.at("tensors");
  if (index.size() != entries.size())
    throw std::runtime_error("checkpoint lists " + std::to_string(index.size()) + " tensors, model expects " +
                             std::to_string(entries.size()));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& rec = index[i];
    const auto& e = entries[i];
    if (rec.at("name") != e.name || rec.at("kind") != e.kind ||
        rec.at("shape").get<std::vector<std::size_t>>() != e.tensor->shape())
      throw std::runtime_error("checkpoint tensor " + std::to_string(i) + " (" + rec.at("name").get<std::string>() +
                               ") does not match the model layout");
    const std::size_t offset = rec.at("offset").get<std::size_t>();
    if (offset + 4 * e.tensor->size() > blob.size()) throw std::runtime_error("checkpoint tensor runs past the blob");
    for (std::size_t k = 0; k < e.tensor->size(); ++k) (*e.tensor)[k] = get_float(blob.data() + offset + 4 * k);
  }
  for (Param* p : c.params.all()) p->step_count = p->trainable ? c.step : 0;
  return c;
}

}  // namespace intake
