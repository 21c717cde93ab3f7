#include "intake/pipeline.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace intake {

namespace {

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

long long parse_integer(const std::string& text, std::size_t line, const char* what) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size())
    throw ParseError("line " + std::to_string(line) + ": " + what + " '" + text + "' is not an integer", line);
  return v;
}

void format_number(std::string& out, double v, int decimals) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  // trim trailing zeros so files stay small; "-0" collapses to "0"
  std::string s(buf);
  if (s.find('.') != std::string::npos) {
    while (s.back() == '0') s.pop_back();
    if (s.back() == '.') s.pop_back();
  }
  if (s == "-0") s = "0";
  out += s;
}

}  // namespace

SkeletonSequence parse_keypoints(std::istream& in, double confidence_threshold, double fps,
                                 std::size_t expected_nodes) {
  if (fps <= 0.0) throw std::invalid_argument("fps must be positive");
  std::map<std::size_t, std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("line " + std::to_string(line_no) + ": malformed JSON (" + e.what() + ")", line_no);
    }
    if (!doc.is_object() || !doc.contains("frame") || !doc["frame"].is_number_integer() || !doc.contains("kp") ||
        !doc["kp"].is_array())
      throw ParseError("line " + std::to_string(line_no) + ": expected {\"frame\": int, \"kp\": [...]}", line_no);
    const long long frame = doc["frame"].get<long long>();
    if (frame < 0) throw ParseError("line " + std::to_string(line_no) + ": negative frame index", line_no);
    const auto& kp = doc["kp"];
    if (kp.size() != expected_nodes)
      throw ParseError("line " + std::to_string(line_no) + ": frame " + std::to_string(frame) + " has " +
                           std::to_string(kp.size()) + " keypoints, expected " + std::to_string(expected_nodes),
                       line_no);
    if (rows.count(std::size_t(frame)))
      throw ParseError("line " + std::to_string(line_no) + ": duplicate frame " + std::to_string(frame), line_no);
    std::vector<double> values(expected_nodes * 3);
    for (std::size_t v = 0; v < expected_nodes; ++v) {
      const auto& p = kp[v];
      if (!p.is_array() || p.size() != 3 || !p[0].is_number() || !p[1].is_number() || !p[2].is_number())
        throw ParseError("line " + std::to_string(line_no) + ": frame " + std::to_string(frame) + " keypoint " +
                             std::to_string(v) + " is not [x, y, c]",
                         line_no);
      const double c = std::clamp(p[2].get<double>(), 0.0, 1.0);
      if (c < confidence_threshold || c == 0.0) continue;  // stays (0, 0, 0)
      values[3 * v] = p[0].get<double>();
      values[3 * v + 1] = p[1].get<double>();
      values[3 * v + 2] = c;
    }
    rows.emplace(std::size_t(frame), std::move(values));
  }
  if (rows.empty()) throw ParseError("no keypoint frames", line_no);
  SkeletonSequence seq;
  seq.fps = fps;
  const std::size_t total = rows.rbegin()->first + 1;
  seq.frames = Tensor({total, expected_nodes, 3});
  for (const auto& [frame, values] : rows)
    std::copy(values.begin(), values.end(), seq.frames.data() + frame * expected_nodes * 3);
  return seq;
}

SkeletonSequence load_keypoints(const std::filesystem::path& path, double confidence_threshold, double fps,
                                std::size_t expected_nodes) {
  auto in = open_input(path);
  try {
    SkeletonSequence seq = parse_keypoints(in, confidence_threshold, fps, expected_nodes);
    seq.source_id = path.stem().string();
    return seq;
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.line());
  }
}

void write_keypoints(std::ostream& out, const SkeletonSequence& seq) {
  const std::size_t v_count = seq.node_count();
  std::string line;
  for (std::size_t t = 0; t < seq.frame_count(); ++t) {
    line = "{\"frame\":" + std::to_string(t) + ",\"kp\":[";
    const double* f = seq.frames.data() + t * v_count * 3;
    for (std::size_t v = 0; v < v_count; ++v) {
      if (v) line += ',';
      line += '[';
      format_number(line, f[3 * v], 3);
      line += ',';
      format_number(line, f[3 * v + 1], 3);
      line += ',';
      format_number(line, f[3 * v + 2], 4);
      line += ']';
    }
    line += "]}\n";
    out << line;
  }
}

std::vector<int> parse_labels(std::istream& in, std::size_t total_frames) {
  std::vector<int> labels(total_frames, kNone);
  std::vector<bool> seen(total_frames, false);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_csv(line);
    if (line_no == 1 && !cells.empty() && cells[0] == "frame") continue;
    if (cells.size() != 2)
      throw ParseError("line " + std::to_string(line_no) + ": expected 'frame,label'", line_no);
    const long long frame = parse_integer(cells[0], line_no, "frame");
    const long long label = parse_integer(cells[1], line_no, "label");
    if (label < 0 || label >= static_cast<long long>(kClassCount))
      throw ParseError("line " + std::to_string(line_no) + ": label " + std::to_string(label) + " not in {0,1,2}",
                       line_no);
    if (frame < 0 || static_cast<std::size_t>(frame) >= total_frames)
      throw ParseError("line " + std::to_string(line_no) + ": frame " + std::to_string(frame) + " outside [0, " +
                           std::to_string(total_frames) + ")",
                       line_no);
    if (seen[frame])
      throw ParseError("line " + std::to_string(line_no) + ": duplicate frame " + std::to_string(frame), line_no);
    seen[frame] = true;
    labels[frame] = static_cast<int>(label);
  }
  return labels;
}

std::vector<int> load_labels(const std::filesystem::path& path, std::size_t total_frames) {
  auto in = open_input(path);
  try {
    return parse_labels(in, total_frames);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.line());
  }
}

void write_labels(std::ostream& out, const std::vector<int>& labels) {
  out << "frame,label\n";
  for (std::size_t t = 0; t < labels.size(); ++t) out << t << ',' << labels[t] << '\n';
}

SkeletonSequence normalize_coordinates(const SkeletonSequence& seq, double frame_width, double frame_height) {
  if (frame_width <= 0.0 || frame_height <= 0.0) throw std::invalid_argument("frame dimensions must be positive");
  if (seq.normalized) throw std::logic_error("sequence '" + seq.source_id + "' is already normalized");
  SkeletonSequence out = seq;
  out.normalized = true;
  out.out_of_range = 0;
  double* p = out.frames.data();
  const std::size_t points = out.frames.size() / 3;
  for (std::size_t i = 0; i < points; ++i, p += 3) {
    if (p[2] == 0.0) continue;
    if (p[0] < 0.0 || p[0] > 1.05 * frame_width || p[1] < 0.0 || p[1] > 1.05 * frame_height) ++out.out_of_range;
    p[0] /= frame_width;
    p[1] /= frame_height;
  }
  return out;
}

SkeletonSequence select_nodes(const SkeletonSequence& seq, const SkeletonTopology& topology) {
  const auto& canon = canonical_nodes();
  if (seq.node_count() != canon.size())
    throw std::invalid_argument("expected " + std::to_string(canon.size()) + " keypoints per frame, got " +
                                std::to_string(seq.node_count()));
  std::vector<std::size_t> columns;
  for (const auto& node : topology.nodes) {
    auto it = std::find_if(canon.begin(), canon.end(),
                           [&](const SkeletonNode& c) { return c.source_index == node.source_index; });
    if (it == canon.end()) throw std::invalid_argument("unknown source index " + std::to_string(node.source_index));
    columns.push_back(std::size_t(it - canon.begin()));
  }
  SkeletonSequence out = seq;
  const std::size_t t_total = seq.frame_count(), v_in = seq.node_count(), v_out = columns.size();
  out.frames = Tensor({t_total, v_out, 3});
  for (std::size_t t = 0; t < t_total; ++t)
    for (std::size_t v = 0; v < v_out; ++v)
      for (std::size_t c = 0; c < 3; ++c)
        out.frames[(t * v_out + v) * 3 + c] = seq.frames[(t * v_in + columns[v]) * 3 + c];
  return out;
}

std::size_t window_length(double fps, double window_seconds) {
  if (window_seconds <= 0.0) throw std::invalid_argument("window_seconds must be positive");
  if (fps <= 0.0) throw std::invalid_argument("fps must be positive");
  const auto len = static_cast<std::size_t>(std::llround(fps * window_seconds));
  if (len == 0) throw std::invalid_argument("window shorter than one frame");
  return len;
}

namespace {

void copy_window(const SkeletonSequence& seq, std::size_t start, std::size_t t_win, WindowBatch& batch,
                 std::size_t slot) {
  const std::size_t v = seq.node_count(), frame_size = v * 3;
  const std::size_t t_total = seq.frame_count();
  const std::size_t n_real = std::min(t_win, t_total - start);
  std::copy_n(seq.frames.data() + start * frame_size, n_real * frame_size,
              batch.windows.data() + slot * t_win * frame_size);
  for (std::size_t t = 0; t < t_win; ++t) {
    const bool real = t < n_real;
    batch.valid_mask[slot * t_win + t] = real ? 1 : 0;
    batch.labels[slot * t_win + t] = real && seq.labels ? (*seq.labels)[start + t] : kNone;
  }
  batch.origin[slot] = {seq.source_id, start};
}

}  // namespace

WindowBatch make_windows(const SkeletonSequence& seq, Mode mode, const WindowOptions& options) {
  const std::size_t t_total = seq.frame_count();
  if (t_total < 2) throw std::invalid_argument("sequence '" + seq.source_id + "' has fewer than 2 frames");
  if (seq.labels && seq.labels->size() != t_total)
    throw std::invalid_argument("label count does not match frame count for '" + seq.source_id + "'");
  const std::size_t t_win = window_length(seq.fps, options.window_seconds);

  std::vector<std::size_t> starts;
  if (mode == Mode::infer || t_total <= t_win) {
    for (std::size_t s = 0; s < t_total; s += t_win) starts.push_back(s);
  } else {
    if (options.train_stride_fraction <= 0.0) throw std::invalid_argument("train_stride_fraction must be positive");
    const auto stride = std::max<std::size_t>(1, std::size_t(std::llround(double(t_win) * options.train_stride_fraction)));
    for (std::size_t s = 0; s + t_win <= t_total; s += stride) starts.push_back(s);
    if (starts.back() + t_win < t_total) starts.push_back(t_total - t_win);
  }

  WindowBatch batch;
  batch.window_length = t_win;
  batch.windows = Tensor({starts.size(), t_win, seq.node_count(), 3});
  batch.labels.assign(starts.size() * t_win, kNone);
  batch.valid_mask.assign(starts.size() * t_win, 0);
  batch.origin.resize(starts.size());
  for (std::size_t i = 0; i < starts.size(); ++i) copy_window(seq, starts[i], t_win, batch, i);
  return batch;
}

WindowBatch gather_windows(const WindowBatch& batch, const std::vector<std::size_t>& indices) {
  WindowBatch out;
  const std::size_t t_win = batch.window_length;
  out.window_length = t_win;
  if (indices.empty()) return out;
  const std::size_t per = batch.size() ? batch.windows.size() / batch.size() : 0;
  auto shape = batch.windows.shape();
  shape[0] = indices.size();
  out.windows = Tensor(shape);
  out.labels.resize(indices.size() * t_win);
  out.valid_mask.resize(indices.size() * t_win);
  out.origin.resize(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    if (i >= batch.size()) throw std::out_of_range("window index out of range");
    std::copy_n(batch.windows.data() + i * per, per, out.windows.data() + k * per);
    std::copy_n(batch.labels.begin() + i * t_win, t_win, out.labels.begin() + k * t_win);
    std::copy_n(batch.valid_mask.begin() + i * t_win, t_win, out.valid_mask.begin() + k * t_win);
    out.origin[k] = batch.origin[i];
  }
  return out;
}

void append_windows(WindowBatch& into, const WindowBatch& from) {
  if (from.size() == 0) return;
  if (into.size() == 0) {
    into = from;
    return;
  }
  if (into.window_length != from.window_length || into.windows.dim(2) != from.windows.dim(2))
    throw std::invalid_argument("window batches differ in length or node count");
  auto shape = into.windows.shape();
  shape[0] += from.size();
  Storage data(into.windows.storage());
  data.insert(data.end(), from.windows.values().begin(), from.windows.values().end());
  into.windows = Tensor(shape, std::move(data));
  into.labels.insert(into.labels.end(), from.labels.begin(), from.labels.end());
  into.valid_mask.insert(into.valid_mask.end(), from.valid_mask.begin(), from.valid_mask.end());
  into.origin.insert(into.origin.end(), from.origin.begin(), from.origin.end());
}

Tensor stitch_probabilities(const Tensor& window_probs, const std::vector<WindowOrigin>& origins,
                            std::size_t total_frames) {
  if (window_probs.rank() != 3 || window_probs.dim(0) != origins.size())
    throw std::invalid_argument("window probabilities must be [N, T_win, C] with one origin per window");
  const std::size_t t_win = window_probs.dim(1), c = window_probs.dim(2);
  Tensor out({total_frames, c});
  std::vector<std::uint8_t> covered(total_frames, 0);
  for (std::size_t n = 0; n < origins.size(); ++n) {
    for (std::size_t t = 0; t < t_win; ++t) {
      const std::size_t frame = origins[n].start + t;
      if (frame >= total_frames) break;  // padded tail
      if (covered[frame]) throw std::invalid_argument("frame " + std::to_string(frame) + " covered twice");
      covered[frame] = 1;
      std::copy_n(window_probs.data() + (n * t_win + t) * c, c, out.data() + frame * c);
    }
  }
  for (std::size_t t = 0; t < total_frames; ++t)
    if (!covered[t]) throw std::invalid_argument("frame " + std::to_string(t) + " not covered by any window");
  return out;
}

std::vector<int> argmax_frames(const Tensor& frame_probs) {
  const std::size_t t_total = frame_probs.dim(0), c = frame_probs.dim(1);
  std::vector<int> labels(t_total);
  for (std::size_t t = 0; t < t_total; ++t) {
    const double* row = frame_probs.data() + t * c;
    labels[t] = static_cast<int>(std::max_element(row, row + c) - row);  // first maximum wins
  }
  return labels;
}

std::vector<int> stitch_predictions(const Tensor& window_probs, const std::vector<WindowOrigin>& origins,
                                    std::size_t total_frames) {
  return argmax_frames(stitch_probabilities(window_probs, origins, total_frames));
}

void write_predictions(std::ostream& out, const std::vector<int>& labels, const Tensor& frame_probs) {
  if (frame_probs.rank() != 2 || frame_probs.dim(0) != labels.size() || frame_probs.dim(1) != kClassCount)
    throw std::invalid_argument("prediction probabilities must be [T, 3] matching the labels");
  out << "frame,label,p_none,p_eat,p_drink\n";
  char buf[128];
  for (std::size_t t = 0; t < labels.size(); ++t) {
    const double* p = frame_probs.data() + t * kClassCount;
    // Largest-remainder rounding to millionths, so a row that sums to one
    // still sums to one after rounding.
    std::array<long long, kClassCount> q{};
    std::array<double, kClassCount> rest{};
    long long have = 0;
    double total = 0.0;
    for (std::size_t c = 0; c < kClassCount; ++c) {
      const double scaled = p[c] * 1e6;
      q[c] = static_cast<long long>(std::floor(scaled));
      rest[c] = scaled - static_cast<double>(q[c]);
      have += q[c];
      total += p[c];
    }
    for (long long need = std::llround(total * 1e6) - have; need > 0; --need) {
      const auto c = static_cast<std::size_t>(std::max_element(rest.begin(), rest.end()) - rest.begin());
      ++q[c];
      rest[c] = -1.0;
    }
    std::snprintf(buf, sizeof buf, "%zu,%d,%.6f,%.6f,%.6f\n", t, labels[t], static_cast<double>(q[0]) / 1e6,
                  static_cast<double>(q[1]) / 1e6, static_cast<double>(q[2]) / 1e6);
    out << buf;
  }
}

PredictionTable parse_predictions(std::istream& in) {
  PredictionTable table;
  std::vector<double> probs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_csv(line);
    if (line_no == 1 && !cells.empty() && cells[0] == "frame") continue;
    if (cells.size() != 2 + kClassCount)
      throw ParseError("line " + std::to_string(line_no) + ": expected frame,label,p_none,p_eat,p_drink", line_no);
    const long long frame = parse_integer(cells[0], line_no, "frame");
    if (frame != static_cast<long long>(table.labels.size()))
      throw ParseError("line " + std::to_string(line_no) + ": frames must be consecutive from 0", line_no);
    const long long label = parse_integer(cells[1], line_no, "label");
    if (label < 0 || label >= static_cast<long long>(kClassCount))
      throw ParseError("line " + std::to_string(line_no) + ": label not in {0,1,2}", line_no);
    table.labels.push_back(static_cast<int>(label));
    for (std::size_t c = 0; c < kClassCount; ++c) {
      try {
        probs.push_back(std::stod(cells[2 + c]));
      } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(line_no) + ": bad probability '" + cells[2 + c] + "'", line_no);
      }
    }
  }
  if (table.labels.empty()) throw ParseError("no prediction rows", line_no);
  table.probabilities = Tensor({table.labels.size(), kClassCount}, std::move(probs));
  return table;
}

PredictionTable load_predictions(const std::filesystem::path& path) {
  auto in = open_input(path);
  try {
    return parse_predictions(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.line());
  }
}

}  // namespace intake
