#pragma once

#include <Eigen/Dense>
#include <map>
#include <span>
#include <vector>

#include "dear/causal_graph.hpp"
#include "dear/elementwise_transform.hpp"

namespace dear {

// Gradients of a scalar objective with respect to the prior parameters.
struct PriorGrads {
  Eigen::MatrixXd adjacency;  // m x m, zero off the mask
  Eigen::VectorXd transform;  // laid out like ElementwiseTransform::parameters()
};

// Composite latent prior: a linear SCM after the element-wise transform f on the
// first m coordinates, standard normal noise passed through on the remaining k - m.
//
//   u = A^T u + eps_{1:m}    (solved by ancestral substitution)
//   z_{1:m} = f(u),  z_{m+1:k} = eps_{m+1:k}
class ScmPrior {
 public:
  ScmPrior() = default;
  ScmPrior(int k, WeightedAdjacency adjacency, ElementwiseTransform f);

  int k() const { return k_; }
  int m() const { return static_cast<int>(adjacency_.weights.rows()); }
  const WeightedAdjacency& adjacency() const { return adjacency_; }
  const GraphMask& mask() const { return adjacency_.mask; }
  const ElementwiseTransform& transform() const { return f_; }
  const std::vector<int>& order() const { return order_; }

  // Parameter updates; both re-project onto the valid set.
  void set_weights(const Eigen::MatrixXd& weights);
  void set_transform_parameters(const Eigen::VectorXd& params);

  Eigen::VectorXd sample(const Eigen::VectorXd& eps) const;
  Eigen::VectorXd invert(const Eigen::VectorXd& z) const;

  // do(z_j = c) for each assignment (0-based dims < m), then ancestral recomputation of
  // the unassigned causal coordinates with the noise inferred from z.
  Eigen::VectorXd intervene(const Eigen::VectorXd& z, const std::map<int, double>& assignments) const;

  // Column-wise versions; `pre_transform` receives u (m x n) for use in backward().
  Eigen::MatrixXd sample_batch(const Eigen::MatrixXd& eps, Eigen::MatrixXd* pre_transform = nullptr) const;

  // Pulls upstream dL/dz (k x n) back to the parameters, given u from sample_batch.
  PriorGrads backward(const Eigen::MatrixXd& pre_transform, const Eigen::MatrixXd& upstream) const;

  // Residual f^{-1}(z) - A^T f^{-1}(z) - eps on the causal coordinates.
  Eigen::VectorXd structural_residual(const Eigen::VectorXd& z, const Eigen::VectorXd& eps) const;

 private:
  void check_length(const Eigen::VectorXd& v, const char* what) const;

  int k_ = 0;
  WeightedAdjacency adjacency_;
  ElementwiseTransform f_;
  std::vector<int> order_;
  std::vector<std::vector<int>> parents_;
  std::vector<std::vector<int>> children_;
};

// One copy of z per grid value, with coordinate `dim` replaced by that value.
std::vector<Eigen::VectorXd> traverse(const Eigen::VectorXd& z, int dim, std::span<const double> grid);

}  // namespace dear
