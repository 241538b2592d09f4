#include "dear/scm_prior.hpp"

#include <string>

#include "dear/errors.hpp"

namespace dear {

ScmPrior::ScmPrior(int k, WeightedAdjacency adjacency, ElementwiseTransform f)
    : k_(k), adjacency_(std::move(adjacency)), f_(std::move(f)) {
  const int m = adjacency_.mask.size();
  if (m > k_) throw ShapeError("causal dimension m=" + std::to_string(m) + " exceeds latent dimension k=" + std::to_string(k_));
  if (f_.dim() != m) throw ShapeError("transform dimension does not match the causal dimension");
  project_to_mask(adjacency_.weights, adjacency_.mask);
  order_ = topological_order(adjacency_.mask);
  parents_.resize(m);
  children_.resize(m);
  for (int j = 0; j < m; ++j) {
    parents_[j] = adjacency_.mask.parents(j);
    children_[j] = adjacency_.mask.children(j);
  }
}

void ScmPrior::set_weights(const Eigen::MatrixXd& weights) {
  adjacency_.weights = weights;
  project_to_mask(adjacency_.weights, adjacency_.mask);
}

void ScmPrior::set_transform_parameters(const Eigen::VectorXd& params) {
  f_.set_parameters(params);
  f_.project();
}

void ScmPrior::check_length(const Eigen::VectorXd& v, const char* what) const {
  if (v.size() != k_) throw ShapeError(std::string(what) + " must have length " + std::to_string(k_));
}

Eigen::VectorXd ScmPrior::sample(const Eigen::VectorXd& eps) const {
  check_length(eps, "noise");
  Eigen::MatrixXd z = sample_batch(eps);
  return z.col(0);
}

Eigen::MatrixXd ScmPrior::sample_batch(const Eigen::MatrixXd& eps, Eigen::MatrixXd* pre_transform) const {
  if (eps.rows() != k_) throw ShapeError("noise batch must have " + std::to_string(k_) + " rows");
  const int m = this->m();
  const auto& a = adjacency_.weights;
  Eigen::MatrixXd u(m, eps.cols());
  for (int j : order_) {
    u.row(j) = eps.row(j);
    for (int i : parents_[j]) u.row(j) += a(i, j) * u.row(i);
  }
  Eigen::MatrixXd z = eps;
  for (int j = 0; j < m; ++j)
    for (int c = 0; c < eps.cols(); ++c) z(j, c) = f_.forward(j, u(j, c));
  if (pre_transform) *pre_transform = std::move(u);
  return z;
}

Eigen::VectorXd ScmPrior::invert(const Eigen::VectorXd& z) const {
  check_length(z, "latent");
  const int m = this->m();
  Eigen::VectorXd u(m);
  for (int j = 0; j < m; ++j) u[j] = f_.inverse(j, z[j]);
  Eigen::VectorXd eps = z;
  for (int j = 0; j < m; ++j) {
    double e = u[j];
    for (int i : parents_[j]) e -= adjacency_.weights(i, j) * u[i];
    eps[j] = e;
  }
  return eps;
}

Eigen::VectorXd ScmPrior::intervene(const Eigen::VectorXd& z, const std::map<int, double>& assignments) const {
  check_length(z, "latent");
  const int m = this->m();
  for (const auto& [dim, value] : assignments) {
    if (dim < 0 || dim >= m)
      throw OutOfRangeError("intervention on dimension " + std::to_string(dim + 1) + " but only " + std::to_string(m) +
                            " causal dimensions exist");
  }
  const Eigen::VectorXd eps = invert(z);

  // Coordinates that are neither assigned nor downstream of an assignment keep
  // their input values exactly; only the affected set is recomputed.
  std::vector<bool> affected(m, false);
  for (const auto& [dim, value] : assignments) {
    affected[dim] = true;
    for (int d : descendants(adjacency_.mask, dim)) affected[d] = true;
  }

  Eigen::VectorXd out = z;
  Eigen::VectorXd u(m);
  for (int j = 0; j < m; ++j) u[j] = f_.inverse(j, z[j]);
  for (int j : order_) {
    if (!affected[j]) continue;
    if (auto it = assignments.find(j); it != assignments.end()) {
      out[j] = it->second;
      u[j] = f_.inverse(j, it->second);
      continue;
    }
    double value = eps[j];
    for (int i : parents_[j]) value += adjacency_.weights(i, j) * u[i];
    u[j] = value;
    out[j] = f_.forward(j, value);
  }
  return out;
}

PriorGrads ScmPrior::backward(const Eigen::MatrixXd& pre_transform, const Eigen::MatrixXd& upstream) const {
  const int m = this->m();
  if (upstream.rows() != k_ || pre_transform.rows() != m || pre_transform.cols() != upstream.cols())
    throw ShapeError("prior backward: shapes of u and upstream disagree");
  const auto n = upstream.cols();
  PriorGrads grads{Eigen::MatrixXd::Zero(m, m), Eigen::VectorXd::Zero(f_.parameter_count())};

  // Through f: du_j = f'(u_j) dz_j.
  Eigen::MatrixXd du(m, n);
  for (int j = 0; j < m; ++j) {
    for (Eigen::Index c = 0; c < n; ++c) {
      const double u = pre_transform(j, c);
      const double g = upstream(j, c);
      du(j, c) = f_.derivative(j, u) * g;
      f_.accumulate_parameter_grad(j, u, g, grads.transform);
    }
  }

  // Adjoint of u = A^T u + eps: lambda_j = du_j + sum_{j -> c} A_jc lambda_c, in reverse order.
  Eigen::MatrixXd lambda(m, n);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    const int j = *it;
    lambda.row(j) = du.row(j);
    for (int c : children_[j]) lambda.row(j) += adjacency_.weights(j, c) * lambda.row(c);
  }
  for (int j = 0; j < m; ++j)
    for (int i : parents_[j]) grads.adjacency(i, j) = lambda.row(j).dot(pre_transform.row(i));
  return grads;
}

Eigen::VectorXd ScmPrior::structural_residual(const Eigen::VectorXd& z, const Eigen::VectorXd& eps) const {
  check_length(z, "latent");
  check_length(eps, "noise");
  const int m = this->m();
  Eigen::VectorXd u(m);
  for (int j = 0; j < m; ++j) u[j] = f_.inverse(j, z[j]);
  return u - adjacency_.weights.transpose() * u - eps.head(m);
}

std::vector<Eigen::VectorXd> traverse(const Eigen::VectorXd& z, int dim, std::span<const double> grid) {
  if (dim < 0 || dim >= z.size()) throw OutOfRangeError("traversal dimension " + std::to_string(dim + 1) + " out of range");
  std::vector<Eigen::VectorXd> out;
  out.reserve(grid.size());
  for (double value : grid) {
    Eigen::VectorXd v = z;
    v[dim] = value;
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace dear
