#pragma once

#include <array>
#include <cstddef>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "intake/tensor.hpp"

namespace intake {

enum class BodyPart { face, arm, mouth, hand };

std::string_view to_string(BodyPart part);
BodyPart parse_body_part(std::string_view name);
/// Parses a comma separated list such as "mouth,hand"; "all" selects every part.
std::set<BodyPart> parse_body_parts(std::string_view list);
std::set<BodyPart> all_body_parts();

struct SkeletonNode {
  std::size_t local_index = 0;
  int source_index = 0;  // COCO-WholeBody keypoint id (1-based)
  BodyPart part = BodyPart::face;
  std::string name;
};

using Edge = std::pair<std::size_t, std::size_t>;

struct SkeletonTopology {
  std::vector<SkeletonNode> nodes;
  std::vector<Edge> edges;
  std::size_t root = 0;
  std::set<BodyPart> parts;
  bool connected = true;
  std::vector<std::string> warnings;

  std::size_t node_count() const { return nodes.size(); }
  std::optional<std::size_t> local_of_source(int source_index) const;
};

/// Canonical 23-node layout. Keypoint files store nodes in this order.
inline constexpr std::size_t kFullNodeCount = 23;
inline constexpr int kLowerLipSource = 90;
inline constexpr int kNoseSource = 1;

const std::vector<SkeletonNode>& canonical_nodes();
/// Edge list over canonical local indices.
const std::vector<Edge>& canonical_edges();

/// Node subset for `parts`, renumbered densely in canonical order. The root
/// defaults to the lower lip, then the nose, then the first selected node;
/// `root_source` overrides it. Disconnected selections are flagged, not rejected.
SkeletonTopology build_topology(const std::set<BodyPart>& parts, std::optional<int> root_source = std::nullopt);

inline constexpr std::size_t kUnreachable = std::numeric_limits<std::size_t>::max();

/// BFS hop counts from `root`; unreachable nodes get kUnreachable.
std::vector<std::size_t> hop_distances(const SkeletonTopology& topology, std::size_t root);

/// Symmetric 0/1 adjacency without self-loops.
Tensor adjacency_matrix(const SkeletonTopology& topology);

enum Partition : std::size_t { kRootPartition = 0, kCentripetal = 1, kCentrifugal = 2 };
inline constexpr std::size_t kPartitionCount = 3;

/// Spatial-configuration partition stack. Entry (i, j) of partition p is the
/// weight with which node i aggregates features of neighbor j.
struct PartitionedAdjacency {
  std::array<Tensor, kPartitionCount> stacks;
  double normalization_epsilon = 1e-3;

  std::size_t node_count() const { return stacks[0].empty() ? 0 : stacks[0].dim(0); }
};

/// Unnormalized 0/1 partitions of A + I by hop distance to the root.
std::array<Tensor, kPartitionCount> binary_partitions(const SkeletonTopology& topology);

PartitionedAdjacency partition_adjacency(const SkeletonTopology& topology, double epsilon = 1e-3);

struct TopologyReport {
  bool pass = true;
  bool connected = true;
  std::size_t component_count = 0;
  std::vector<std::string> problems;
};

TopologyReport validate_topology(const SkeletonTopology& topology);

nlohmann::json topology_to_json(const SkeletonTopology& topology);

}  // namespace intake
