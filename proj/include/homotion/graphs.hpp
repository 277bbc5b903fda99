#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace homotion::graphs {

using Edge = std::pair<std::size_t, std::size_t>;

struct SkeletonTopology {
  std::vector<std::string> joints;
  std::vector<Edge> edges;
  std::size_t left_hand = 0;
  std::size_t right_hand = 0;
  std::size_t hip = 0;

  std::size_t size() const { return joints.size(); }
  std::size_t index_of(const std::string& name) const;
};

// 21-joint MoCap skeleton: hips, spine, chest, neck, head, and shoulder,
// elbow, wrist, hand / upper leg, knee, ankle, foot per side.
SkeletonTopology default_skeleton();

// Throws GraphError for bad indices, self-loops, duplicate designated joints
// or a disconnected graph (listing the components).
void validate(const SkeletonTopology& topology);

// Relabels joints so that new index i holds old joint order[i].
SkeletonTopology permuted(const SkeletonTopology& topology, const std::vector<std::size_t>& order);

nlohmann::json to_json(const SkeletonTopology& topology);
SkeletonTopology skeleton_from_json(const nlohmann::json& j);
SkeletonTopology load_skeleton(const std::filesystem::path& path);

struct FusionTopology {
  SkeletonTopology skeleton;
  std::size_t num_object_nodes = 0;
  std::vector<Edge> cross_edges;   // object node -> left hand, right hand, hip
  std::vector<Edge> object_edges;  // clique over object nodes
  std::size_t size() const { return skeleton.size() + num_object_nodes; }
};

// Partition 0: self connections; partition 1: one-hop neighbours, each row
// divided by max(degree, 1).
struct PartitionedAdjacency {
  std::vector<Eigen::MatrixXd> partitions;
  std::size_t size() const { return partitions.empty() ? 0 : static_cast<std::size_t>(partitions[0].rows()); }
};

PartitionedAdjacency build_adjacency(std::size_t num_nodes, const std::vector<Edge>& edges);
PartitionedAdjacency build_human_graph(const SkeletonTopology& topology);
std::pair<FusionTopology, PartitionedAdjacency> build_fusion_graph(const SkeletonTopology& topology,
                                                                   std::size_t num_object_nodes);

}  // namespace homotion::graphs
