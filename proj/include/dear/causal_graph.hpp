#pragma once

#include <Eigen/Dense>
#include <span>
#include <utility>
#include <vector>

namespace dear {

// Binary structure over k latent factors. Entry (i, j) = 1 permits the edge i -> j.
// Indices are 0-based throughout the library; config files use 1-based indices.
class GraphMask {
 public:
  GraphMask() = default;
  explicit GraphMask(int k);
  explicit GraphMask(Eigen::MatrixXi edges);

  // Edges given as 1-based (parent, child) pairs, the config-file convention.
  static GraphMask from_edge_list(int k, std::span<const std::pair<int, int>> one_based_edges);

  int size() const { return static_cast<int>(edges_.rows()); }
  bool edge(int i, int j) const { return edges_(i, j) != 0; }
  void set_edge(int i, int j, bool on = true) { edges_(i, j) = on ? 1 : 0; }
  int edge_count() const;
  const Eigen::MatrixXi& matrix() const { return edges_; }
  Eigen::MatrixXd as_double() const { return edges_.cast<double>(); }

  // True when every edge of `other` is also permitted here.
  bool contains(const GraphMask& other) const;

  std::vector<int> parents(int j) const;
  std::vector<int> children(int i) const;

  bool operator==(const GraphMask& other) const { return edges_ == other.edges_; }

 private:
  Eigen::MatrixXi edges_;
};

// Throws InvalidMaskError for non-binary entries, non-square shape or a nonzero diagonal.
void validate_mask(const GraphMask& mask);

bool is_acyclic(const GraphMask& mask);

// Kahn's algorithm, ties broken by ascending index. Throws CycleError.
std::vector<int> topological_order(const GraphMask& mask);

// Full DAG consistent with a causal order: i -> j permitted iff i precedes j.
GraphMask super_graph_from_order(std::span<const int> order);

// Nodes reachable from `node` along permitted edges, excluding `node` itself.
std::vector<int> descendants(const GraphMask& mask, int node);

struct WeightedAdjacency {
  Eigen::MatrixXd weights;
  GraphMask mask;
};

WeightedAdjacency apply_mask(const Eigen::MatrixXd& weights, const GraphMask& mask);

// In-place projection used after optimizer updates.
void project_to_mask(Eigen::MatrixXd& weights, const GraphMask& mask);

}  // namespace dear
