#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "dear/diffnet.hpp"
#include "dear/objectives.hpp"
#include "dear/scm_prior.hpp"

namespace dear::gradcheck {

// Linear-Gaussian model with x, z in R^2:
//   q: x ~ N(mu_x, sigma_x), z = w_e x + b_e + sigma_e nu
//   p: z1 = eps1, z2 = a z1 + eps2, x = w_g z + b_g + sigma_g eta
struct LinGaussSpec {
  Eigen::Vector2d mu_x = Eigen::Vector2d::Zero();
  Eigen::Matrix2d sigma_x = Eigen::Matrix2d::Identity();
  Eigen::Matrix2d w_e = Eigen::Matrix2d::Identity();
  Eigen::Vector2d b_e = Eigen::Vector2d::Zero();
  double sigma_e = 1.0;
  Eigen::Matrix2d w_g = Eigen::Matrix2d::Identity();
  Eigen::Vector2d b_g = Eigen::Vector2d::Zero();
  double sigma_g = 1.0;
  double a = 0.0;

  void validate() const;
  // Spec used by the gradient check; exp(D*) has finite moments up to order
  // six under p, so Monte-Carlo errors behave.
  static LinGaussSpec reference();
};

struct GaussianJoint {
  Eigen::VectorXd mean;  // (x, z)
  Eigen::MatrixXd cov;
};

GaussianJoint joint_q(const LinGaussSpec& spec);
GaussianJoint joint_p(const LinGaussSpec& spec);

// KL(q || p) between Gaussians of equal dimension.
double kl_gauss(const GaussianJoint& q, const GaussianJoint& p);
double kl_of(const LinGaussSpec& spec);

// D*(v) = log q(v) - log p(v) for v = (x, z).
class QuadraticDisc {
 public:
  QuadraticDisc(const GaussianJoint& q, const GaussianJoint& p);

  double value(const Eigen::Vector4d& v) const;
  Eigen::Vector4d gradient(const Eigen::Vector4d& v) const;

 private:
  Eigen::Vector4d mean_q_, mean_p_;
  Eigen::Matrix4d prec_q_, prec_p_;
  double constant_ = 0.0;
};

QuadraticDisc optimal_disc(const LinGaussSpec& spec);

// Central difference (f(p + h) - f(p - h)) / 2h.
double fd_grad(const std::function<double(double)>& f, double p, double h = 1e-5);

// Gradient coordinates, in order: w_g (row-major), b_g, w_e (row-major), b_e, a.
inline constexpr int kParamCount = 13;
const std::vector<std::string>& parameter_names();
Eigen::VectorXd pack(const LinGaussSpec& spec);
LinGaussSpec unpack(const LinGaussSpec& base, const Eigen::VectorXd& params);

// Finite-difference gradient of kl_of along every packed coordinate.
Eigen::VectorXd fd_kl_grad(const LinGaussSpec& spec, double h = 1e-5);

inline constexpr long kMinSamples = 10000;

// Monte-Carlo estimate of the KL gradient using the optimal critic, unclamped
// exp(D*) weights, and one set of draws shared by every coordinate.
Eigen::VectorXd mc_lemma1(const LinGaussSpec& spec, long n_samples, std::uint64_t seed);

struct GradcheckRow {
  std::string name;
  double mc = 0.0;
  double fd = 0.0;
  double abs_err = 0.0;
  double rel_err = 0.0;
  bool pass = false;
};

bool within_tolerance(double estimate, double reference);
std::vector<GradcheckRow> gradcheck_table(const LinGaussSpec& spec, long n_samples, const std::vector<std::uint64_t>& seeds);
void write_csv(std::ostream& out, const std::vector<GradcheckRow>& rows);

// The same model expressed with the training machinery: identity-activation
// single-layer nets and a two-node linear SCM prior.
struct LinGaussModel {
  Net encoder;
  Net generator;
  ScmPrior prior;
};

LinGaussModel to_model(const LinGaussSpec& spec);
LinGaussSpec from_model(const LinGaussSpec& base, const LinGaussModel& model);
Critic quadratic_critic(const QuadraticDisc& disc);

}  // namespace dear::gradcheck
