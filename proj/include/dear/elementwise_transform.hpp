#pragma once

#include <Eigen/Dense>
#include <span>
#include <variant>

namespace dear {

// f(u) = slope * u + bias per dimension.
struct LinearTransform {
  Eigen::VectorXd slope;
  Eigen::VectorXd bias;
};

// f(u) = w_0 u + sum_t w_t (u - a_t) 1(u >= a_t) + b per dimension, t = 1..T.
// knots is dim x T (ascending per row), increments is dim x (T + 1) holding w_0..w_T.
struct PiecewiseLinearTransform {
  Eigen::MatrixXd knots;
  Eigen::MatrixXd increments;
  Eigen::VectorXd bias;
};

// Invertible element-wise map used by the SCM prior. Knot positions are fixed;
// slopes and biases are the learnable parameters.
class ElementwiseTransform {
 public:
  static constexpr double kMinSlope = 1e-3;

  ElementwiseTransform() = default;
  explicit ElementwiseTransform(LinearTransform t);
  explicit ElementwiseTransform(PiecewiseLinearTransform t);

  static ElementwiseTransform identity(int dim);
  // Skips the invertibility checks; for fitted, possibly non-monotone functions.
  static ElementwiseTransform unchecked(PiecewiseLinearTransform t);
  // Knots equally spaced on [lo, hi], cumulative slope 1 everywhere, zero bias.
  static ElementwiseTransform piecewise_identity(int dim, int knot_count, double lo = -3.0, double hi = 3.0);

  int dim() const;
  bool is_linear() const { return std::holds_alternative<LinearTransform>(repr_); }
  const LinearTransform& linear() const { return std::get<LinearTransform>(repr_); }
  const PiecewiseLinearTransform& piecewise() const { return std::get<PiecewiseLinearTransform>(repr_); }

  double forward(int i, double u) const;
  double inverse(int i, double v) const;
  double derivative(int i, double u) const;

  Eigen::VectorXd forward(const Eigen::VectorXd& u) const;
  Eigen::VectorXd inverse(const Eigen::VectorXd& v) const;

  // Learnable parameters, flattened: linear -> [slope; bias], piecewise -> [increments row-major; bias].
  int parameter_count() const;
  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& p);

  // Adds upstream * d f_i(u) / d params into grad (laid out like parameters()).
  void accumulate_parameter_grad(int i, double u, double upstream, Eigen::VectorXd& grad) const;

  // Restores invertibility after a gradient step: linear slopes keep their sign with
  // magnitude >= kMinSlope, piecewise cumulative slopes are clamped to >= kMinSlope.
  void project();

  bool operator==(const ElementwiseTransform& other) const;

 private:
  void validate() const;

  std::variant<LinearTransform, PiecewiseLinearTransform> repr_;
};

// Least-squares fit of a continuous piecewise-linear function with `knot_count`
// interior knots equally spaced on [lo, hi]. No monotonicity constraint.
struct PwlFit {
  ElementwiseTransform transform;
  double sup_error = 0.0;
};

PwlFit pwl_fit(std::span<const double> xs, std::span<const double> ys, int knot_count, double lo, double hi);

}  // namespace dear
