#pragma once

#include <Eigen/Dense>
#include <functional>
#include <span>

#include "dear/diffnet.hpp"
#include "dear/rng.hpp"
#include "dear/scm_prior.hpp"

namespace dear {

enum class SupLossKind { kCrossEntropy, kSquaredError };

struct LossAndGrad {
  double loss = 0.0;
  double grad = 0.0;
};

double sigmoid(double x);
double softplus(double x);

// Negative log-likelihood of y in [0, 1] under Bernoulli(sigmoid(logit)).
LossAndGrad sup_loss_ce(double logit, double y);
LossAndGrad sup_loss_l2(double e, double y);
LossAndGrad sup_loss(SupLossKind kind, double e, double y);

struct DiscLoss {
  double loss = 0.0;
  Eigen::VectorXd dreal;
  Eigen::VectorXd dfake;
};

// mean softplus(-D) over encoder pairs + mean softplus(D) over generator pairs.
DiscLoss disc_loss(const Eigen::VectorXd& real_scores, const Eigen::VectorXd& fake_scores);

// exp of the score clamped to [-clamp, clamp].
double scale_factor(double d_score, double clamp);

// Discriminator scores and their input gradients for a batch of (x, z) pairs.
struct CriticEval {
  Eigen::VectorXd score;
  Eigen::MatrixXd grad_x;
  Eigen::MatrixXd grad_z;
};

using Critic = std::function<CriticEval(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z)>;

// Evaluates a discriminator net on the concatenation (x ; z).
CriticEval evaluate_critic(const Net& disc, const Eigen::MatrixXd& x, const Eigen::MatrixXd& z);
Critic net_critic(const Net& disc);

struct GradBundle {
  Eigen::VectorXd theta;  // generator
  Eigen::VectorXd phi;    // encoder
  PriorGrads beta;
  double sup_loss = 0.0;  // mean supervised loss over the labeled subset (0 if none)
  double mean_scale = 0.0;
};

struct EstimatorOptions {
  double lambda = 5.0;
  SupLossKind sup_kind = SupLossKind::kSquaredError;
  double clamp = 4.0;
  double encoder_noise = 0.0;    // sigma_e of the stochastic encoder reading
  double generator_noise = 0.0;  // sigma_g; only the linear-Gaussian oracle uses it
};

// Inputs for one joint update. Labels are m x n_s and belong to the first n_s columns of x.
struct EstimatorBatch {
  const Eigen::MatrixXd& x;
  const Eigen::MatrixXd& eps;
  const Eigen::MatrixXd& labels;
};

// Monte-Carlo gradient estimates of L_gen + lambda L_sup for the encoder, generator
// and prior parameters, using the critic as the log density ratio log q/p:
//   theta: -mean s * (grad_x D)^T dG/dtheta
//   phi:    mean (grad_z D)^T dE/dphi + lambda * mean_labeled dL_sup/dphi
//   beta:  -mean s * [(grad_x D)^T dG/dz + (grad_z D)^T] dF/dbeta
GradBundle estimate_grads(const Net& encoder, const Net& generator, const ScmPrior& prior, const Critic& critic,
                          const EstimatorBatch& batch, const EstimatorOptions& options, Rng* noise_rng = nullptr);

}  // namespace dear
