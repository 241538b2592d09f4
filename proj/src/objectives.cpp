#include "dear/objectives.hpp"

#include <cmath>
#include <string>

#include "dear/errors.hpp"

namespace dear {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

LossAndGrad sup_loss_ce(double logit, double y) {
  if (!(y >= 0.0 && y <= 1.0)) throw DomainError("cross-entropy target must lie in [0, 1], got " + std::to_string(y));
  // -[y log s + (1 - y) log(1 - s)] = y softplus(-l) + (1 - y) softplus(l)
  return {y * softplus(-logit) + (1.0 - y) * softplus(logit), sigmoid(logit) - y};
}

LossAndGrad sup_loss_l2(double e, double y) {
  const double r = e - y;
  return {r * r, 2.0 * r};
}

LossAndGrad sup_loss(SupLossKind kind, double e, double y) {
  return kind == SupLossKind::kCrossEntropy ? sup_loss_ce(e, y) : sup_loss_l2(e, y);
}

DiscLoss disc_loss(const Eigen::VectorXd& real_scores, const Eigen::VectorXd& fake_scores) {
  if (real_scores.size() == 0 || fake_scores.size() == 0)
    throw ArityError("discriminator loss needs at least one real and one generated score");
  const double nr = static_cast<double>(real_scores.size());
  const double nf = static_cast<double>(fake_scores.size());
  DiscLoss out;
  out.dreal.resize(real_scores.size());
  out.dfake.resize(fake_scores.size());
  double real_sum = 0.0;
  for (Eigen::Index i = 0; i < real_scores.size(); ++i) {
    real_sum += softplus(-real_scores[i]);
    out.dreal[i] = -sigmoid(-real_scores[i]) / nr;
  }
  double fake_sum = 0.0;
  for (Eigen::Index i = 0; i < fake_scores.size(); ++i) {
    fake_sum += softplus(fake_scores[i]);
    out.dfake[i] = sigmoid(fake_scores[i]) / nf;
  }
  out.loss = real_sum / nr + fake_sum / nf;
  return out;
}

double scale_factor(double d_score, double clamp) {
  return std::exp(std::min(std::max(d_score, -clamp), clamp));
}

CriticEval evaluate_critic(const Net& disc, const Eigen::MatrixXd& x, const Eigen::MatrixXd& z) {
  if (x.cols() != z.cols()) throw ShapeError("critic: x and z batches differ in size");
  Eigen::MatrixXd joint(x.rows() + z.rows(), x.cols());
  joint << x, z;
  Tape tape;
  const Eigen::MatrixXd scores = disc.forward(joint, &tape);
  const Eigen::MatrixXd grad = disc.input_gradient(tape, Eigen::MatrixXd::Ones(1, x.cols()));
  return {scores.row(0).transpose(), grad.topRows(x.rows()), grad.bottomRows(z.rows())};
}

Critic net_critic(const Net& disc) {
  return [&disc](const Eigen::MatrixXd& x, const Eigen::MatrixXd& z) { return evaluate_critic(disc, x, z); };
}

namespace {

Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) out(i, j) = rng.normal();
  return out;
}

}  // namespace

GradBundle estimate_grads(const Net& encoder, const Net& generator, const ScmPrior& prior, const Critic& critic,
                          const EstimatorBatch& batch, const EstimatorOptions& options, Rng* noise_rng) {
  const auto n = batch.x.cols();
  const auto n_gen = batch.eps.cols();
  if (n == 0 || n_gen == 0) throw ArityError("estimate_grads needs a non-empty batch");
  if (batch.eps.rows() != prior.k()) throw ShapeError("noise batch must have k rows");
  const int m = prior.m();
  const auto n_labeled = batch.labels.cols();
  if (n_labeled > n || (n_labeled > 0 && batch.labels.rows() != m))
    throw ShapeError("labels must be m x n_s with n_s <= batch size");
  if ((options.encoder_noise > 0.0 || options.generator_noise > 0.0) && noise_rng == nullptr)
    throw ArityError("stochastic encoder/generator requires a noise source");

  GradBundle out;

  // Encoder side: (x, E(x)) pairs.
  Tape enc_tape;
  Eigen::MatrixXd z_enc = encoder.forward(batch.x, &enc_tape);
  if (options.encoder_noise > 0.0) z_enc += options.encoder_noise * gaussian_matrix(z_enc.rows(), n, *noise_rng);
  const CriticEval on_data = critic(batch.x, z_enc);
  Eigen::MatrixXd enc_upstream = on_data.grad_z / static_cast<double>(n);

  if (n_labeled > 0 && options.lambda > 0.0) {
    // Supervision acts on the deterministic part of the encoder.
    const Eigen::MatrixXd& mean_code = enc_tape.activations.back();
    const double weight = options.lambda / static_cast<double>(n_labeled);
    double total = 0.0;
    for (Eigen::Index c = 0; c < n_labeled; ++c) {
      for (int i = 0; i < m; ++i) {
        const auto lg = sup_loss(options.sup_kind, mean_code(i, c), batch.labels(i, c));
        total += lg.loss;
        enc_upstream(i, c) += weight * lg.grad;
      }
    }
    out.sup_loss = total / static_cast<double>(n_labeled);
  }
  out.phi = encoder.backward(enc_tape, enc_upstream);

  // Generator side: (G(F(eps)), F(eps)) pairs.
  Eigen::MatrixXd u;
  const Eigen::MatrixXd z_gen = prior.sample_batch(batch.eps, &u);
  Tape gen_tape;
  Eigen::MatrixXd x_gen = generator.forward(z_gen, &gen_tape);
  if (options.generator_noise > 0.0) x_gen += options.generator_noise * gaussian_matrix(x_gen.rows(), n_gen, *noise_rng);
  const CriticEval on_prior = critic(x_gen, z_gen);

  Eigen::VectorXd weights(n_gen);
  for (Eigen::Index c = 0; c < n_gen; ++c) weights[c] = -scale_factor(on_prior.score[c], options.clamp);
  out.mean_scale = -weights.mean();
  weights /= static_cast<double>(n_gen);

  const Eigen::MatrixXd gen_upstream = on_prior.grad_x * weights.asDiagonal();
  Eigen::MatrixXd dz_through_g;
  out.theta = generator.backward(gen_tape, gen_upstream, &dz_through_g);
  const Eigen::MatrixXd dz = dz_through_g + on_prior.grad_z * weights.asDiagonal();
  out.beta = prior.backward(u, dz);
  return out;
}

}  // namespace dear
