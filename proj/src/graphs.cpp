#include "homotion/graphs.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "homotion/errors.hpp"
#include "homotion/io.hpp"

namespace homotion::graphs {

std::size_t SkeletonTopology::index_of(const std::string& name) const {
  const auto it = std::find(joints.begin(), joints.end(), name);
  if (it == joints.end()) throw GraphError("skeleton has no joint named '" + name + "'");
  return static_cast<std::size_t>(it - joints.begin());
}

SkeletonTopology default_skeleton() {
  SkeletonTopology t;
  t.joints = {"hips",        "spine",      "chest",       "neck",       "head",       "l_shoulder", "l_elbow",
              "l_wrist",     "l_hand",     "r_shoulder",  "r_elbow",    "r_wrist",    "r_hand",     "l_upleg",
              "l_knee",      "l_ankle",    "l_foot",      "r_upleg",    "r_knee",     "r_ankle",    "r_foot"};
  t.edges = {{0, 1},  {1, 2},   {2, 3},   {3, 4},   {2, 5},   {5, 6},   {6, 7},
             {7, 8},  {2, 9},   {9, 10},  {10, 11}, {11, 12}, {0, 13},  {13, 14},
             {14, 15}, {15, 16}, {0, 17}, {17, 18}, {18, 19}, {19, 20}};
  t.left_hand = 8;
  t.right_hand = 12;
  t.hip = 0;
  return t;
}

void validate(const SkeletonTopology& t) {
  const std::size_t n = t.size();
  if (n == 0) throw GraphError("skeleton has no joints");
  for (const auto& [a, b] : t.edges) {
    if (a >= n || b >= n) throw GraphError("edge (" + std::to_string(a) + ", " + std::to_string(b) + ") out of range");
    if (a == b) throw GraphError("self-loop on joint " + std::to_string(a));
  }
  if (t.left_hand >= n || t.right_hand >= n || t.hip >= n) throw GraphError("designated joint out of range");
  if (t.left_hand == t.right_hand || t.left_hand == t.hip || t.right_hand == t.hip) {
    throw GraphError("left hand, right hand and hip must be distinct joints");
  }
  // Union-find for connectivity.
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& [a, b] : t.edges) parent[find(a)] = find(b);
  std::vector<std::vector<std::size_t>> groups(n);
  for (std::size_t i = 0; i < n; ++i) groups[find(i)].push_back(i);
  std::vector<std::vector<std::size_t>> components;
  for (auto& g : groups) {
    if (!g.empty()) components.push_back(std::move(g));
  }
  if (components.size() > 1) {
    std::string msg = "skeleton graph is disconnected; components:";
    for (const auto& c : components) {
      msg += " {";
      for (std::size_t i = 0; i < c.size(); ++i) msg += (i ? "," : "") + t.joints[c[i]];
      msg += "}";
    }
    throw GraphError(msg);
  }
}

SkeletonTopology permuted(const SkeletonTopology& t, const std::vector<std::size_t>& order) {
  if (order.size() != t.size()) throw GraphError("permutation size does not match skeleton");
  std::vector<std::size_t> new_index(t.size(), t.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i] >= t.size() || new_index[order[i]] != t.size()) throw GraphError("not a permutation");
    new_index[order[i]] = i;
  }
  SkeletonTopology p;
  for (auto o : order) p.joints.push_back(t.joints[o]);
  for (const auto& [a, b] : t.edges) p.edges.emplace_back(new_index[a], new_index[b]);
  p.left_hand = new_index[t.left_hand];
  p.right_hand = new_index[t.right_hand];
  p.hip = new_index[t.hip];
  return p;
}

nlohmann::json to_json(const SkeletonTopology& t) {
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [a, b] : t.edges) edges.push_back({t.joints[a], t.joints[b]});
  return {{"joints", t.joints},
          {"edges", edges},
          {"left_hand", t.joints[t.left_hand]},
          {"right_hand", t.joints[t.right_hand]},
          {"hip", t.joints[t.hip]}};
}

SkeletonTopology skeleton_from_json(const nlohmann::json& j) {
  SkeletonTopology t;
  try {
    t.joints = j.at("joints").get<std::vector<std::string>>();
    std::set<std::string> unique(t.joints.begin(), t.joints.end());
    if (unique.size() != t.joints.size()) throw GraphError("duplicate joint names");
    for (const auto& e : j.at("edges")) {
      const auto pair = e.get<std::vector<std::string>>();
      if (pair.size() != 2) throw GraphError("edge must name two joints");
      t.edges.emplace_back(t.index_of(pair[0]), t.index_of(pair[1]));
    }
    t.left_hand = t.index_of(j.at("left_hand").get<std::string>());
    t.right_hand = t.index_of(j.at("right_hand").get<std::string>());
    t.hip = t.index_of(j.at("hip").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw GraphError(std::string("malformed skeleton topology: ") + e.what());
  }
  validate(t);
  return t;
}

SkeletonTopology load_skeleton(const std::filesystem::path& path) { return skeleton_from_json(io::read_json(path)); }

PartitionedAdjacency build_adjacency(std::size_t n, const std::vector<Edge>& edges) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (const auto& [i, j] : edges) {
    a(i, j) = 1.0;
    a(j, i) = 1.0;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double degree = a.row(i).sum();
    a.row(i) /= std::max(degree, 1.0);
  }
  PartitionedAdjacency adj;
  adj.partitions.push_back(Eigen::MatrixXd::Identity(n, n));
  adj.partitions.push_back(std::move(a));
  return adj;
}

PartitionedAdjacency build_human_graph(const SkeletonTopology& topology) {
  validate(topology);
  return build_adjacency(topology.size(), topology.edges);
}

std::pair<FusionTopology, PartitionedAdjacency> build_fusion_graph(const SkeletonTopology& topology,
                                                                   std::size_t num_object_nodes) {
  validate(topology);
  if (num_object_nodes == 0) throw GraphError("fusion graph needs at least one object node");
  FusionTopology f;
  f.skeleton = topology;
  f.num_object_nodes = num_object_nodes;
  const std::size_t base = topology.size();
  for (std::size_t m = 0; m < num_object_nodes; ++m) {
    f.cross_edges.emplace_back(base + m, topology.left_hand);
    f.cross_edges.emplace_back(base + m, topology.right_hand);
    f.cross_edges.emplace_back(base + m, topology.hip);
    for (std::size_t k = m + 1; k < num_object_nodes; ++k) f.object_edges.emplace_back(base + m, base + k);
  }
  std::vector<Edge> all = topology.edges;
  all.insert(all.end(), f.cross_edges.begin(), f.cross_edges.end());
  all.insert(all.end(), f.object_edges.begin(), f.object_edges.end());
  auto adj = build_adjacency(f.size(), all);
  return {std::move(f), std::move(adj)};
}

}  // namespace homotion::graphs
