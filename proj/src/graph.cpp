#include "intake/graph.hpp"

#include <algorithm>
#include <deque>
#include <stdexcept>

namespace intake {

std::string_view to_string(BodyPart part) {
  switch (part) {
    case BodyPart::face: return "face";
    case BodyPart::arm: return "arm";
    case BodyPart::mouth: return "mouth";
    case BodyPart::hand: return "hand";
  }
  return "unknown";
}

BodyPart parse_body_part(std::string_view name) {
  if (name == "face") return BodyPart::face;
  if (name == "arm" || name == "arms") return BodyPart::arm;
  if (name == "mouth") return BodyPart::mouth;
  if (name == "hand" || name == "hands") return BodyPart::hand;
  throw std::invalid_argument("unknown body part '" + std::string(name) + "'");
}

std::set<BodyPart> all_body_parts() { return {BodyPart::face, BodyPart::arm, BodyPart::mouth, BodyPart::hand}; }

std::set<BodyPart> parse_body_parts(std::string_view list) {
  std::set<BodyPart> parts;
  std::size_t pos = 0;
  while (pos <= list.size()) {
    std::size_t comma = list.find_first_of(",+", pos);
    if (comma == std::string_view::npos) comma = list.size();
    std::string_view token = list.substr(pos, comma - pos);
    while (!token.empty() && token.front() == ' ') token.remove_prefix(1);
    while (!token.empty() && token.back() == ' ') token.remove_suffix(1);
    if (token == "all") {
      parts = all_body_parts();
    } else if (!token.empty()) {
      parts.insert(parse_body_part(token));
    }
    pos = comma + 1;
  }
  return parts;
}

const std::vector<SkeletonNode>& canonical_nodes() {
  static const std::vector<SkeletonNode> nodes = {
      {0, 1, BodyPart::face, "nose"},
      {1, 2, BodyPart::face, "left_eye"},
      {2, 3, BodyPart::face, "right_eye"},
      {3, 4, BodyPart::face, "left_ear"},
      {4, 5, BodyPart::face, "right_ear"},
      {5, 6, BodyPart::arm, "left_shoulder"},
      {6, 7, BodyPart::arm, "right_shoulder"},
      {7, 8, BodyPart::arm, "left_elbow"},
      {8, 9, BodyPart::arm, "right_elbow"},
      {9, 72, BodyPart::mouth, "mouth_right"},
      {10, 78, BodyPart::mouth, "mouth_left"},
      {11, 86, BodyPart::mouth, "upper_lip"},
      {12, 90, BodyPart::mouth, "lower_lip"},
      {13, 92, BodyPart::hand, "left_hand_root"},
      {14, 94, BodyPart::hand, "left_thumb_mid"},
      {15, 96, BodyPart::hand, "left_thumb_tip"},
      {16, 101, BodyPart::hand, "left_index_mid"},
      {17, 104, BodyPart::hand, "left_index_tip"},
      {18, 113, BodyPart::hand, "right_hand_root"},
      {19, 115, BodyPart::hand, "right_thumb_mid"},
      {20, 117, BodyPart::hand, "right_thumb_tip"},
      {21, 122, BodyPart::hand, "right_index_mid"},
      {22, 125, BodyPart::hand, "right_index_tip"},
  };
  return nodes;
}

const std::vector<Edge>& canonical_edges() {
  static const std::vector<Edge> edges = {
      // face
      {0, 1}, {0, 2}, {1, 3}, {2, 4},
      // face -> mouth
      {0, 11},
      // mouth ring
      {11, 9}, {11, 10}, {12, 9}, {12, 10}, {11, 12},
      // face -> arm
      {3, 5}, {4, 6},
      // arms
      {5, 6}, {5, 7}, {6, 8},
      // arm -> hand
      {7, 13}, {8, 18},
      // left hand
      {13, 14}, {14, 15}, {13, 16}, {16, 17},
      // right hand
      {18, 19}, {19, 20}, {18, 21}, {21, 22},
  };
  return edges;
}

std::optional<std::size_t> SkeletonTopology::local_of_source(int source_index) const {
  for (const auto& node : nodes) {
    if (node.source_index == source_index) return node.local_index;
  }
  return std::nullopt;
}

namespace {

std::vector<std::vector<std::size_t>> neighbor_lists(const SkeletonTopology& topology) {
  std::vector<std::vector<std::size_t>> adj(topology.node_count());
  for (auto [a, b] : topology.edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  return adj;
}

std::size_t count_components(const SkeletonTopology& topology) {
  const std::size_t n = topology.node_count();
  std::vector<bool> seen(n, false);
  std::size_t components = 0;
  for (std::size_t start = 0; start < n; ++start) {
    if (seen[start]) continue;
    ++components;
    auto dist = hop_distances(topology, start);
    for (std::size_t i = 0; i < n; ++i) {
      if (dist[i] != kUnreachable) seen[i] = true;
    }
  }
  return components;
}

}  // namespace

SkeletonTopology build_topology(const std::set<BodyPart>& parts, std::optional<int> root_source) {
  if (parts.empty()) throw std::invalid_argument("build_topology: empty body-part set");

  SkeletonTopology topology;
  topology.parts = parts;
  std::vector<std::size_t> remap(kFullNodeCount, kUnreachable);
  for (const auto& node : canonical_nodes()) {
    if (!parts.contains(node.part)) continue;
    SkeletonNode local = node;
    local.local_index = topology.nodes.size();
    remap[node.local_index] = local.local_index;
    topology.nodes.push_back(local);
  }
  for (auto [a, b] : canonical_edges()) {
    if (remap[a] != kUnreachable && remap[b] != kUnreachable) topology.edges.emplace_back(remap[a], remap[b]);
  }

  if (root_source) {
    auto root = topology.local_of_source(*root_source);
    if (!root) {
      throw std::invalid_argument("build_topology: root keypoint " + std::to_string(*root_source) +
                                  " is not in the selected parts");
    }
    topology.root = *root;
  } else if (auto lip = topology.local_of_source(kLowerLipSource)) {
    topology.root = *lip;
  } else if (auto nose = topology.local_of_source(kNoseSource)) {
    topology.root = *nose;
  } else {
    topology.root = 0;
  }

  topology.connected = count_components(topology) == 1;
  if (!topology.connected) {
    topology.warnings.push_back("selected skeleton graph is disconnected (" +
                                std::to_string(count_components(topology)) + " components)");
  }
  return topology;
}

std::vector<std::size_t> hop_distances(const SkeletonTopology& topology, std::size_t root) {
  const std::size_t n = topology.node_count();
  if (root >= n) throw std::invalid_argument("hop_distances: root out of range");
  const auto adj = neighbor_lists(topology);
  std::vector<std::size_t> dist(n, kUnreachable);
  std::deque<std::size_t> queue{root};
  dist[root] = 0;
  while (!queue.empty()) {
    std::size_t u = queue.front();
    queue.pop_front();
    for (std::size_t v : adj[u]) {
      if (dist[v] == kUnreachable) {
        dist[v] = dist[u] + 1;
        queue.push_back(v);
      }
    }
  }
  return dist;
}

Tensor adjacency_matrix(const SkeletonTopology& topology) {
  const std::size_t n = topology.node_count();
  Tensor a({n, n});
  for (auto [i, j] : topology.edges) {
    a.at({i, j}) = 1.0;
    a.at({j, i}) = 1.0;
  }
  return a;
}

std::array<Tensor, kPartitionCount> binary_partitions(const SkeletonTopology& topology) {
  const std::size_t n = topology.node_count();
  const auto dist = hop_distances(topology, topology.root);
  Tensor a = adjacency_matrix(topology);
  std::array<Tensor, kPartitionCount> parts{Tensor({n, n}), Tensor({n, n}), Tensor({n, n})};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j && a.at({i, j}) == 0.0) continue;
      std::size_t p = kRootPartition;
      if (dist[j] < dist[i]) {
        p = kCentripetal;
      } else if (dist[j] > dist[i]) {
        p = kCentrifugal;
      }
      parts[p].at({i, j}) = 1.0;
    }
  }
  return parts;
}

PartitionedAdjacency partition_adjacency(const SkeletonTopology& topology, double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("partition_adjacency: epsilon must be positive");
  PartitionedAdjacency result;
  result.normalization_epsilon = epsilon;
  result.stacks = binary_partitions(topology);
  const std::size_t n = topology.node_count();
  for (auto& stack : result.stacks) {
    for (std::size_t i = 0; i < n; ++i) {
      double degree = 0.0;
      for (std::size_t j = 0; j < n; ++j) degree += stack.at({i, j});
      for (std::size_t j = 0; j < n; ++j) stack.at({i, j}) /= degree + epsilon;
    }
  }
  return result;
}

TopologyReport validate_topology(const SkeletonTopology& topology) {
  TopologyReport report;
  const std::size_t n = topology.node_count();
  for (std::size_t i = 0; i < n; ++i) {
    if (topology.nodes[i].local_index != i) {
      report.problems.push_back("node " + std::to_string(i) + " has local index " +
                                std::to_string(topology.nodes[i].local_index));
    }
  }
  std::set<Edge> seen;
  for (auto [a, b] : topology.edges) {
    const std::string label = "(" + std::to_string(a) + ", " + std::to_string(b) + ")";
    if (a >= n || b >= n) {
      report.problems.push_back("edge " + label + " has an endpoint out of range");
      continue;
    }
    if (a == b) {
      report.problems.push_back("edge " + label + " is a self-loop");
      continue;
    }
    if (!seen.insert(std::minmax(a, b)).second) report.problems.push_back("duplicate edge " + label);
  }
  if (topology.root >= n) report.problems.push_back("root " + std::to_string(topology.root) + " is not a node");

  if (n > 0 && report.problems.empty()) {
    report.component_count = count_components(topology);
    report.connected = report.component_count == 1;
  } else {
    report.connected = false;
  }
  report.pass = report.problems.empty();
  return report;
}

nlohmann::json topology_to_json(const SkeletonTopology& topology) {
  nlohmann::json doc;
  doc["node_count"] = topology.node_count();
  auto& parts = doc["parts"] = nlohmann::json::array();
  for (BodyPart p : topology.parts) parts.push_back(std::string(to_string(p)));
  auto& nodes = doc["nodes"] = nlohmann::json::array();
  for (const auto& node : topology.nodes) {
    nodes.push_back({{"local_index", node.local_index},
                     {"source_index", node.source_index},
                     {"part", std::string(to_string(node.part))},
                     {"name", node.name}});
  }
  auto& edges = doc["edges"] = nlohmann::json::array();
  for (auto [a, b] : topology.edges) edges.push_back({a, b});
  doc["root"] = {{"local_index", topology.root}, {"source_index", topology.nodes.at(topology.root).source_index}};
  doc["connected"] = topology.connected;
  doc["warnings"] = topology.warnings;
  return doc;
}

}  // namespace intake
