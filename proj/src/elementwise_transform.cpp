#include "dear/elementwise_transform.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dear/errors.hpp"

namespace dear {

ElementwiseTransform::ElementwiseTransform(LinearTransform t) : repr_(std::move(t)) { validate(); }

ElementwiseTransform::ElementwiseTransform(PiecewiseLinearTransform t) : repr_(std::move(t)) { validate(); }

ElementwiseTransform ElementwiseTransform::identity(int dim) {
  return ElementwiseTransform(LinearTransform{Eigen::VectorXd::Ones(dim), Eigen::VectorXd::Zero(dim)});
}

ElementwiseTransform ElementwiseTransform::unchecked(PiecewiseLinearTransform t) {
  ElementwiseTransform out;
  out.repr_ = std::move(t);
  return out;
}

ElementwiseTransform ElementwiseTransform::piecewise_identity(int dim, int knot_count, double lo, double hi) {
  if (knot_count < 1) throw InvalidTransformError("piecewise transform needs at least one knot");
  PiecewiseLinearTransform t;
  t.knots.resize(dim, knot_count);
  for (int k = 0; k < knot_count; ++k) {
    const double a = knot_count == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * k / (knot_count - 1);
    t.knots.col(k).setConstant(a);
  }
  t.increments = Eigen::MatrixXd::Zero(dim, knot_count + 1);
  t.increments.col(0).setOnes();
  t.bias = Eigen::VectorXd::Zero(dim);
  return ElementwiseTransform(std::move(t));
}

int ElementwiseTransform::dim() const {
  return std::visit([](const auto& t) { return static_cast<int>(t.bias.size()); }, repr_);
}

void ElementwiseTransform::validate() const {
  if (const auto* lin = std::get_if<LinearTransform>(&repr_)) {
    if (lin->slope.size() != lin->bias.size()) throw ShapeError("linear transform slope/bias size mismatch");
    for (int i = 0; i < lin->slope.size(); ++i)
      if (!(lin->slope[i] != 0.0) || !std::isfinite(lin->slope[i]))
        throw InvalidTransformError("linear slope " + std::to_string(i) + " must be finite and nonzero");
    return;
  }
  const auto& pwl = std::get<PiecewiseLinearTransform>(repr_);
  const auto dim = pwl.bias.size();
  if (pwl.knots.rows() != dim || pwl.increments.rows() != dim || pwl.increments.cols() != pwl.knots.cols() + 1) {
    throw ShapeError("piecewise transform parameter shapes disagree");
  }
  for (int i = 0; i < dim; ++i) {
    for (int t = 1; t < pwl.knots.cols(); ++t)
      if (!(pwl.knots(i, t) > pwl.knots(i, t - 1)))
        throw InvalidTransformError("knots must be strictly ascending in dimension " + std::to_string(i));
    double cumulative = 0.0;
    for (int t = 0; t < pwl.increments.cols(); ++t) {
      cumulative += pwl.increments(i, t);
      if (!(cumulative > 0.0))
        throw InvalidTransformError("cumulative slope " + std::to_string(t) + " in dimension " + std::to_string(i) +
                                    " is not positive");
    }
  }
}

double ElementwiseTransform::forward(int i, double u) const {
  if (const auto* lin = std::get_if<LinearTransform>(&repr_)) return lin->slope[i] * u + lin->bias[i];
  const auto& pwl = std::get<PiecewiseLinearTransform>(repr_);
  double v = pwl.increments(i, 0) * u + pwl.bias[i];
  for (int t = 0; t < pwl.knots.cols(); ++t) {
    const double a = pwl.knots(i, t);
    if (u < a) break;
    v += pwl.increments(i, t + 1) * (u - a);
  }
  return v;
}

double ElementwiseTransform::derivative(int i, double u) const {
  if (const auto* lin = std::get_if<LinearTransform>(&repr_)) return lin->slope[i];
  const auto& pwl = std::get<PiecewiseLinearTransform>(repr_);
  double slope = pwl.increments(i, 0);
  for (int t = 0; t < pwl.knots.cols() && u >= pwl.knots(i, t); ++t) slope += pwl.increments(i, t + 1);
  return slope;
}

double ElementwiseTransform::inverse(int i, double v) const {
  if (const auto* lin = std::get_if<LinearTransform>(&repr_)) return (v - lin->bias[i]) / lin->slope[i];
  const auto& pwl = std::get<PiecewiseLinearTransform>(repr_);
  // Walk the knot images, which ascend because every segment slope is positive.
  double slope = pwl.increments(i, 0);
  double seg_u = 0.0;
  double seg_v = pwl.bias[i];
  for (int t = 0; t < pwl.knots.cols(); ++t) {
    const double a = pwl.knots(i, t);
    const double va = forward(i, a);
    if (v < va) break;
    seg_u = a;
    seg_v = va;
    slope += pwl.increments(i, t + 1);
  }
  return seg_u + (v - seg_v) / slope;
}

Eigen::VectorXd ElementwiseTransform::forward(const Eigen::VectorXd& u) const {
  if (u.size() != dim()) throw ShapeError("transform input has wrong dimension");
  Eigen::VectorXd out(u.size());
  for (int i = 0; i < u.size(); ++i) out[i] = forward(i, u[i]);
  return out;
}

Eigen::VectorXd ElementwiseTransform::inverse(const Eigen::VectorXd& v) const {
  if (v.size() != dim()) throw ShapeError("transform input has wrong dimension");
  Eigen::VectorXd out(v.size());
  for (int i = 0; i < v.size(); ++i) out[i] = inverse(i, v[i]);
  return out;
}

int ElementwiseTransform::parameter_count() const {
  if (const auto* lin = std::get_if<LinearTransform>(&repr_)) return static_cast<int>(2 * lin->slope.size());
  const auto& pwl = std::get<PiecewiseLinearTransform>(repr_);
  return static_cast<int>(pwl.increments.size() + pwl.bias.size());
}

Eigen::VectorXd ElementwiseTransform::parameters() const {
  Eigen::VectorXd p(parameter_count());
  if (const auto* lin = std::get_if<LinearTransform>(&repr_)) {
    p << lin->slope, lin->bias;
    return p;
  }
  const auto& pwl = std::get<PiecewiseLinearTransform>(repr_);
  const int dim = static_cast<int>(pwl.bias.size());
  const int width = static_cast<int>(pwl.increments.cols());
  for (int i = 0; i < dim; ++i)
    for (int t = 0; t < width; ++t) p[i * width + t] = pwl.increments(i, t);
  p.tail(dim) = pwl.bias;
  return p;
}

void ElementwiseTransform::set_parameters(const Eigen::VectorXd& p) {
  if (p.size() != parameter_count()) throw ShapeError("transform parameter vector has wrong length");
  if (auto* lin = std::get_if<LinearTransform>(&repr_)) {
    const auto dim = lin->slope.size();
    lin->slope = p.head(dim);
    lin->bias = p.tail(dim);
    return;
  }
  auto& pwl = std::get<PiecewiseLinearTransform>(repr_);
  const int dim = static_cast<int>(pwl.bias.size());
  const int width = static_cast<int>(pwl.increments.cols());
  for (int i = 0; i < dim; ++i)
    for (int t = 0; t < width; ++t) pwl.increments(i, t) = p[i * width + t];
  pwl.bias = p.tail(dim);
}

void ElementwiseTransform::accumulate_parameter_grad(int i, double u, double upstream, Eigen::VectorXd& grad) const {
  if (const auto* lin = std::get_if<LinearTransform>(&repr_)) {
    const auto dim = lin->slope.size();
    grad[i] += upstream * u;
    grad[dim + i] += upstream;
    return;
  }
  const auto& pwl = std::get<PiecewiseLinearTransform>(repr_);
  const int dim = static_cast<int>(pwl.bias.size());
  const int width = static_cast<int>(pwl.increments.cols());
  grad[i * width] += upstream * u;
  for (int t = 0; t < pwl.knots.cols(); ++t) {
    const double a = pwl.knots(i, t);
    if (u < a) break;
    grad[i * width + t + 1] += upstream * (u - a);
  }
  grad[width * dim + i] += upstream;
}

void ElementwiseTransform::project() {
  if (auto* lin = std::get_if<LinearTransform>(&repr_)) {
    for (int i = 0; i < lin->slope.size(); ++i) {
      double& w = lin->slope[i];
      if (std::abs(w) < kMinSlope) w = w < 0.0 ? -kMinSlope : kMinSlope;
    }
    return;
  }
  auto& pwl = std::get<PiecewiseLinearTransform>(repr_);
  for (int i = 0; i < pwl.increments.rows(); ++i) {
    double previous = 0.0;
    double cumulative_in = 0.0;
    for (int t = 0; t < pwl.increments.cols(); ++t) {
      cumulative_in += pwl.increments(i, t);
      const double clamped = std::max(cumulative_in, kMinSlope);
      pwl.increments(i, t) = clamped - previous;
      previous = clamped;
    }
  }
}

bool ElementwiseTransform::operator==(const ElementwiseTransform& other) const {
  if (is_linear() != other.is_linear()) return false;
  if (is_linear()) return linear().slope == other.linear().slope && linear().bias == other.linear().bias;
  return piecewise().knots == other.piecewise().knots && piecewise().increments == other.piecewise().increments &&
         piecewise().bias == other.piecewise().bias;
}

PwlFit pwl_fit(std::span<const double> xs, std::span<const double> ys, int knot_count, double lo, double hi) {
  if (xs.size() != ys.size() || xs.empty()) throw ShapeError("pwl_fit needs equally sized, non-empty samples");
  if (knot_count < 1) throw InvalidTransformError("pwl_fit needs at least one knot");
  if (!(hi > lo)) throw DomainError("pwl_fit interval must satisfy lo < hi");

  const auto [min_it, max_it] = std::minmax_element(xs.begin(), xs.end());
  if (*min_it == *max_it) throw RankError("pwl_fit: all sample points coincide");

  const int n = static_cast<int>(xs.size());
  const double step = (hi - lo) / (knot_count + 1);
  Eigen::VectorXd knots(knot_count);
  for (int t = 0; t < knot_count; ++t) knots[t] = lo + step * (t + 1);

  // Basis: 1, x, (x - a_t)_+ for each knot.
  Eigen::MatrixXd basis(n, knot_count + 2);
  Eigen::VectorXd target(n);
  for (int r = 0; r < n; ++r) {
    const double x = xs[r];
    basis(r, 0) = 1.0;
    basis(r, 1) = x;
    for (int t = 0; t < knot_count; ++t) basis(r, t + 2) = x >= knots[t] ? x - knots[t] : 0.0;
    target[r] = ys[r];
  }
  const Eigen::VectorXd coef = basis.completeOrthogonalDecomposition().solve(target);

  PiecewiseLinearTransform t;
  t.knots = knots.transpose();
  t.increments.resize(1, knot_count + 1);
  t.increments(0, 0) = coef[1];
  for (int k = 0; k < knot_count; ++k) t.increments(0, k + 1) = coef[k + 2];
  t.bias = Eigen::VectorXd::Constant(1, coef[0]);

  PwlFit fit;
  // Bypasses validate(): the fitted function need not be monotone.
  fit.transform = ElementwiseTransform::unchecked(std::move(t));
  fit.sup_error = (basis * coef - target).cwiseAbs().maxCoeff();
  return fit;
}

}  // namespace dear
