#include "dear/causal_graph.hpp"

#include <algorithm>
#include <queue>
#include <string>

#include "dear/errors.hpp"

namespace dear {

GraphMask::GraphMask(int k) : edges_(Eigen::MatrixXi::Zero(k, k)) {
  if (k <= 0) throw InvalidMaskError("mask size must be positive, got " + std::to_string(k));
}

GraphMask::GraphMask(Eigen::MatrixXi edges) : edges_(std::move(edges)) { validate_mask(*this); }

GraphMask GraphMask::from_edge_list(int k, std::span<const std::pair<int, int>> one_based_edges) {
  GraphMask mask(k);
  for (const auto& [from, to] : one_based_edges) {
    if (from < 1 || from > k || to < 1 || to > k) {
      throw InvalidMaskError("edge " + std::to_string(from) + "->" + std::to_string(to) +
                             " out of range for " + std::to_string(k) + " nodes");
    }
    mask.set_edge(from - 1, to - 1);
  }
  validate_mask(mask);
  return mask;
}

int GraphMask::edge_count() const { return static_cast<int>((edges_.array() != 0).count()); }

bool GraphMask::contains(const GraphMask& other) const {
  if (other.size() != size()) return false;
  for (int i = 0; i < size(); ++i)
    for (int j = 0; j < size(); ++j)
      if (other.edge(i, j) && !edge(i, j)) return false;
  return true;
}

std::vector<int> GraphMask::parents(int j) const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (edge(i, j)) out.push_back(i);
  return out;
}

std::vector<int> GraphMask::children(int i) const {
  std::vector<int> out;
  for (int j = 0; j < size(); ++j)
    if (edge(i, j)) out.push_back(j);
  return out;
}

void validate_mask(const GraphMask& mask) {
  const auto& m = mask.matrix();
  if (m.rows() != m.cols() || m.rows() == 0) throw InvalidMaskError("mask must be a non-empty square matrix");
  for (int i = 0; i < m.rows(); ++i) {
    if (m(i, i) != 0) throw InvalidMaskError("self-loop on node " + std::to_string(i + 1));
    for (int j = 0; j < m.cols(); ++j)
      if (m(i, j) != 0 && m(i, j) != 1) throw InvalidMaskError("mask entries must be 0 or 1");
  }
}

namespace {

// Returns the Kahn order; nodes never released are left out.
std::vector<int> kahn(const GraphMask& mask) {
  const int k = mask.size();
  std::vector<int> indegree(k, 0);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      if (mask.edge(i, j)) ++indegree[j];

  std::priority_queue<int, std::vector<int>, std::greater<>> ready;
  for (int j = 0; j < k; ++j)
    if (indegree[j] == 0) ready.push(j);

  std::vector<int> order;
  order.reserve(k);
  while (!ready.empty()) {
    const int i = ready.top();
    ready.pop();
    order.push_back(i);
    for (int j = 0; j < k; ++j)
      if (mask.edge(i, j) && --indegree[j] == 0) ready.push(j);
  }
  return order;
}

}  // namespace

bool is_acyclic(const GraphMask& mask) {
  validate_mask(mask);
  return static_cast<int>(kahn(mask).size()) == mask.size();
}

std::vector<int> topological_order(const GraphMask& mask) {
  validate_mask(mask);
  auto order = kahn(mask);
  if (static_cast<int>(order.size()) == mask.size()) return order;

  // Every unreleased node either sits on a cycle or downstream of one. Walking
  // parents inside the unreleased set must eventually revisit a node.
  std::vector<bool> released(mask.size(), false);
  for (int i : order) released[i] = true;
  int node = 0;
  while (released[node]) ++node;
  std::vector<int> seen_at(mask.size(), -1);
  for (int step = 0; seen_at[node] < 0; ++step) {
    seen_at[node] = step;
    for (int p : mask.parents(node)) {
      if (!released[p]) {
        node = p;
        break;
      }
    }
  }
  throw CycleError(node, "graph has a directed cycle through node " + std::to_string(node + 1));
}

GraphMask super_graph_from_order(std::span<const int> order) {
  const int k = static_cast<int>(order.size());
  if (k == 0) throw InvalidPermutationError("empty causal order");
  std::vector<int> position(k, -1);
  for (int pos = 0; pos < k; ++pos) {
    const int node = order[pos];
    if (node < 0 || node >= k) throw InvalidPermutationError("order entry " + std::to_string(node + 1) + " out of range");
    if (position[node] >= 0) throw InvalidPermutationError("duplicate node " + std::to_string(node + 1) + " in causal order");
    position[node] = pos;
  }
  GraphMask mask(k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      if (position[i] < position[j]) mask.set_edge(i, j);
  return mask;
}

std::vector<int> descendants(const GraphMask& mask, int node) {
  std::vector<bool> seen(mask.size(), false);
  std::vector<int> stack{node};
  while (!stack.empty()) {
    const int i = stack.back();
    stack.pop_back();
    for (int j : mask.children(i)) {
      if (!seen[j]) {
        seen[j] = true;
        stack.push_back(j);
      }
    }
  }
  std::vector<int> out;
  for (int j = 0; j < mask.size(); ++j)
    if (seen[j] && j != node) out.push_back(j);
  return out;
}

WeightedAdjacency apply_mask(const Eigen::MatrixXd& weights, const GraphMask& mask) {
  WeightedAdjacency out{weights, mask};
  project_to_mask(out.weights, mask);
  return out;
}

void project_to_mask(Eigen::MatrixXd& weights, const GraphMask& mask) {
  if (weights.rows() != mask.size() || weights.cols() != mask.size()) {
    throw ShapeError("adjacency is " + std::to_string(weights.rows()) + "x" + std::to_string(weights.cols()) +
                     " but mask has " + std::to_string(mask.size()) + " nodes");
  }
  for (int i = 0; i < mask.size(); ++i)
    for (int j = 0; j < mask.size(); ++j)
      if (!mask.edge(i, j)) weights(i, j) = 0.0;
}

}  // namespace dear
