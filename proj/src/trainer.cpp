#include "dear/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "dear/errors.hpp"
#include "dear/evaluation.hpp"

namespace dear {

std::string to_string(PriorMode mode) { return mode == PriorMode::kScm ? "scm" : "independent"; }
std::string to_string(TransformMode mode) { return mode == TransformMode::kLinear ? "linear" : "pwl"; }
std::string to_string(SupLossKind kind) { return kind == SupLossKind::kCrossEntropy ? "ce" : "l2"; }

PriorMode prior_mode_from_string(const std::string& s) {
  if (s == "scm") return PriorMode::kScm;
  if (s == "independent") return PriorMode::kIndependent;
  throw ConfigError("prior_mode must be 'scm' or 'independent', got '" + s + "'");
}

TransformMode transform_mode_from_string(const std::string& s) {
  if (s == "linear") return TransformMode::kLinear;
  if (s == "pwl") return TransformMode::kPiecewise;
  throw ConfigError("f_mode must be 'linear' or 'pwl', got '" + s + "'");
}

SupLossKind sup_kind_from_string(const std::string& s) {
  if (s == "ce") return SupLossKind::kCrossEntropy;
  if (s == "l2") return SupLossKind::kSquaredError;
  throw ConfigError("sup_kind must be 'ce' or 'l2', got '" + s + "'");
}

void TrainConfig::validate() const {
  for (double lr : {lr_d, lr_eg, lr_prior_f, lr_a})
    if (!(lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  if (!(label_fraction > 0.0 && label_fraction <= 1.0)) throw ConfigError("label_fraction must lie in (0, 1]");
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (d_steps < 0) throw ConfigError("d_steps must be non-negative");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (m <= 0 || k < m) throw ConfigError("need 0 < m <= k");
  if (!(clamp_c > 0.0)) throw ConfigError("clamp_c must be positive");
  if (pwl_knots < 1) throw ConfigError("pwl_knots must be at least 1");
  if (hidden <= 0) throw ConfigError("hidden must be positive");
  if (encoder_noise < 0.0) throw ConfigError("encoder_noise must be non-negative");
  try {
    config_mask(*this);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("invalid graph: ") + e.what());
  }
}

GraphMask config_mask(const TrainConfig& config) {
  if (config.prior_mode == PriorMode::kIndependent) return GraphMask(config.m);
  if (!config.causal_order.empty()) {
    if (static_cast<int>(config.causal_order.size()) != config.m)
      throw ConfigError("causal_order must list all " + std::to_string(config.m) + " causal factors");
    std::vector<int> zero_based;
    for (int v : config.causal_order) zero_based.push_back(v - 1);
    return super_graph_from_order(zero_based);
  }
  GraphMask mask = GraphMask::from_edge_list(config.m, config.edges);
  if (!is_acyclic(mask)) throw ConfigError("configured edge list contains a cycle");
  return mask;
}

TrainState init_state(const TrainConfig& config, int pixels) {
  config.validate();
  TrainState s;
  s.config = config;
  s.encoder = Net::init(encoder_spec(pixels, config.k, config.hidden), config.seed * 8 + 1);
  s.generator = Net::init(generator_spec(config.k, pixels, config.hidden), config.seed * 8 + 2);
  s.discriminator = Net::init(discriminator_spec(pixels, config.k, config.hidden), config.seed * 8 + 3);

  const GraphMask mask = config_mask(config);
  Rng init_rng(config.seed, 0x41);
  Eigen::MatrixXd weights = Eigen::MatrixXd::Zero(config.m, config.m);
  for (int j = 0; j < config.m; ++j)
    for (int i = 0; i < config.m; ++i)
      if (mask.edge(i, j)) weights(i, j) = init_rng.uniform(-0.1, 0.1);
  ElementwiseTransform f = config.f_mode == TransformMode::kLinear
                               ? ElementwiseTransform::identity(config.m)
                               : ElementwiseTransform::piecewise_identity(config.m, config.pwl_knots);
  s.prior = ScmPrior(config.k, apply_mask(weights, mask), std::move(f));

  const AdamConfig base{};
  s.adam_d = AdamState({config.lr_d, base.beta1, base.beta2, base.eps}, s.discriminator.parameter_count());
  s.adam_e = AdamState({config.lr_eg, base.beta1, base.beta2, base.eps}, s.encoder.parameter_count());
  s.adam_g = AdamState({config.lr_eg, base.beta1, base.beta2, base.eps}, s.generator.parameter_count());
  s.adam_f = AdamState({config.lr_prior_f, base.beta1, base.beta2, base.eps}, s.prior.transform().parameter_count());
  s.adam_a = AdamState({config.lr_a, base.beta1, base.beta2, base.eps}, config.m * config.m);
  s.rng = Rng(config.seed, 0x747261696e);
  return s;
}

std::vector<bool> labeled_subset(int n, double fraction, std::uint64_t seed) {
  const int count = static_cast<int>(std::floor(fraction * n + 1e-9));
  std::vector<bool> labeled(n, false);
  if (count >= n) {
    labeled.assign(n, true);
    return labeled;
  }
  for (int i : random_subset(n, count, seed ^ 0x6c6162656cULL)) labeled[i] = true;
  return labeled;
}

namespace {

Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) out(i, j) = rng.normal();
  return out;
}

void require_finite(double value, const char* term) {
  if (!std::isfinite(value)) throw NonFiniteError(std::string("non-finite ") + term);
}

void require_finite(const Eigen::MatrixXd& values, const char* term) {
  if (!values.allFinite()) throw NonFiniteError(std::string("non-finite ") + term);
}

EstimatorOptions estimator_options(const TrainConfig& c) {
  EstimatorOptions o;
  o.lambda = c.lambda;
  o.sup_kind = c.sup_kind;
  o.clamp = c.clamp_c;
  o.encoder_noise = c.encoder_noise;
  return o;
}

}  // namespace

StepMetrics train_step(TrainState& state, const Eigen::MatrixXd& x_batch, const Eigen::MatrixXd& labels) {
  const auto n = x_batch.cols();
  if (n == 0) throw ArityError("train_step needs a non-empty batch");
  const TrainConfig& cfg = state.config;
  StepMetrics metrics;

  for (int d = 0; d < cfg.d_steps; ++d) {
    const Eigen::MatrixXd eps = normal_matrix(cfg.k, n, state.rng);
    Eigen::MatrixXd z_enc = state.encoder.forward(x_batch);
    if (cfg.encoder_noise > 0.0) z_enc += cfg.encoder_noise * normal_matrix(z_enc.rows(), n, state.rng);
    const Eigen::MatrixXd z_gen = state.prior.sample_batch(eps);
    const Eigen::MatrixXd x_gen = state.generator.forward(z_gen);

    Eigen::MatrixXd pairs(x_batch.rows() + cfg.k, 2 * n);
    pairs.topLeftCorner(x_batch.rows(), n) = x_batch;
    pairs.bottomLeftCorner(cfg.k, n) = z_enc;
    pairs.topRightCorner(x_batch.rows(), n) = x_gen;
    pairs.bottomRightCorner(cfg.k, n) = z_gen;
    Tape tape;
    const Eigen::MatrixXd scores = state.discriminator.forward(pairs, &tape);
    const Eigen::VectorXd real = scores.leftCols(n).row(0).transpose();
    const Eigen::VectorXd fake = scores.rightCols(n).row(0).transpose();
    const DiscLoss loss = disc_loss(real, fake);
    require_finite(loss.loss, "discriminator loss");

    Eigen::MatrixXd upstream(1, 2 * n);
    upstream.leftCols(n) = loss.dreal.transpose();
    upstream.rightCols(n) = loss.dfake.transpose();
    const Eigen::VectorXd grads = state.discriminator.backward(tape, upstream);
    require_finite(grads, "discriminator gradient");
    Eigen::VectorXd params = state.discriminator.parameters();
    adam_step(params, grads, state.adam_d);
    state.discriminator.set_parameters(params);

    metrics.disc_loss = loss.loss;
    metrics.d_real_mean = real.mean();
    metrics.d_fake_mean = fake.mean();
  }

  const Eigen::MatrixXd eps = normal_matrix(cfg.k, n, state.rng);
  const GradBundle g = estimate_grads(state.encoder, state.generator, state.prior, net_critic(state.discriminator),
                                      {x_batch, eps, labels}, estimator_options(cfg), &state.rng);
  require_finite(g.sup_loss, "supervised loss");
  require_finite(g.phi, "encoder gradient");
  require_finite(g.theta, "generator gradient");
  require_finite(g.beta.adjacency, "adjacency gradient");
  require_finite(g.beta.transform, "prior transform gradient");
  metrics.sup_loss = g.sup_loss;

  Eigen::VectorXd params = state.encoder.parameters();
  adam_step(params, g.phi, state.adam_e);
  state.encoder.set_parameters(params);

  params = state.generator.parameters();
  adam_step(params, g.theta, state.adam_g);
  state.generator.set_parameters(params);

  params = state.prior.transform().parameters();
  adam_step(params, g.beta.transform, state.adam_f);
  state.prior.set_transform_parameters(params);

  Eigen::MatrixXd weights = state.prior.adjacency().weights;
  Eigen::Map<Eigen::VectorXd> flat(weights.data(), weights.size());
  adam_step(flat, Eigen::Map<const Eigen::VectorXd>(g.beta.adjacency.data(), g.beta.adjacency.size()), state.adam_a);
  state.prior.set_weights(weights);

  ++state.step;
  return metrics;
}

Eigen::MatrixXd encode(const Net& encoder, const Eigen::MatrixXd& images, int chunk) {
  Eigen::MatrixXd codes(encoder.spec().output_size(), images.cols());
  for (Eigen::Index start = 0; start < images.cols(); start += chunk) {
    const Eigen::Index len = std::min<Eigen::Index>(chunk, images.cols() - start);
    codes.middleCols(start, len) = encoder.forward(images.middleCols(start, len));
  }
  return codes;
}

ValidationMetrics validate(const TrainState& state, const pendulum::Split& split) {
  const Eigen::MatrixXd codes = encode(state.encoder, split.images);
  const int m = state.config.m;
  double total = 0.0;
  for (int c = 0; c < split.size(); ++c)
    for (int i = 0; i < m; ++i) total += sup_loss(state.config.sup_kind, codes(i, c), split.factors(i, c)).loss;
  ValidationMetrics out;
  out.sup_loss = split.size() > 0 ? total / split.size() : 0.0;
  out.mean_abs_spearman = disent_report(codes.topRows(m), split.factors.topRows(m)).mean;
  return out;
}

void write_metrics_csv(const std::vector<EpochMetrics>& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "epoch,step,disc_loss,d_real_mean,d_fake_mean,sup_loss,val_sup_loss,val_mean_abs_spearman\n";
  out.precision(17);
  for (const auto& r : history) {
    out << r.epoch << ',' << r.step << ',' << r.disc_loss << ',' << r.d_real_mean << ',' << r.d_fake_mean << ','
        << r.sup_loss << ',' << r.val_sup_loss << ',' << r.val_mean_abs_spearman << '\n';
  }
}

void train(TrainState& state, const pendulum::Split& train_split, const pendulum::Split& val_split,
           const TrainOptions& options) {
  const TrainConfig& cfg = state.config;
  const int n = train_split.size();
  if (n == 0) throw DatasetError("training split is empty");
  if (train_split.pixels() != state.encoder.spec().input_size())
    throw ShapeError("training images do not match the encoder input size");
  if (cfg.m > pendulum::kFactorCount) throw ConfigError("m exceeds the number of labelled factors");

  const std::vector<bool> labeled = labeled_subset(n, cfg.label_fraction, cfg.seed);
  if (options.out_dir) std::filesystem::create_directories(*options.out_dir);

  std::vector<int> perm(n);
  int epochs_run = 0;
  while (state.epoch < cfg.epochs) {
    if (options.stop_after_epochs >= 0 && epochs_run >= options.stop_after_epochs) break;
    for (int i = 0; i < n; ++i) perm[i] = i;
    state.rng.shuffle(perm.begin(), perm.end());

    StepMetrics sums;
    int steps = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int len = std::min(cfg.batch_size, n - start);
      std::vector<int> idx(perm.begin() + start, perm.begin() + start + len);
      std::stable_partition(idx.begin(), idx.end(), [&](int i) { return labeled[i]; });
      const int n_labeled = static_cast<int>(std::count_if(idx.begin(), idx.end(), [&](int i) { return labeled[i]; }));

      Eigen::MatrixXd x(train_split.pixels(), len);
      for (int c = 0; c < len; ++c) x.col(c) = train_split.images.col(idx[c]);
      Eigen::MatrixXd labels(cfg.m, n_labeled);
      for (int c = 0; c < n_labeled; ++c) labels.col(c) = train_split.factors.col(idx[c]).head(cfg.m);

      const StepMetrics sm = train_step(state, x, labels);
      sums.disc_loss += sm.disc_loss;
      sums.d_real_mean += sm.d_real_mean;
      sums.d_fake_mean += sm.d_fake_mean;
      sums.sup_loss += sm.sup_loss;
      ++steps;
    }

    ++state.epoch;
    ++epochs_run;
    const ValidationMetrics val = validate(state, val_split);
    EpochMetrics row;
    row.epoch = state.epoch;
    row.step = state.step;
    row.disc_loss = sums.disc_loss / steps;
    row.d_real_mean = sums.d_real_mean / steps;
    row.d_fake_mean = sums.d_fake_mean / steps;
    row.sup_loss = sums.sup_loss / steps;
    row.val_sup_loss = val.sup_loss;
    row.val_mean_abs_spearman = val.mean_abs_spearman;
    state.history.push_back(row);
    if (options.out_dir) {
      save_checkpoint(state, *options.out_dir / "checkpoint_latest.bin");
      write_metrics_csv(state.history, *options.out_dir / "metrics.csv");
    }
    if (options.on_epoch) options.on_epoch(row);
  }
  if (options.out_dir) {
    save_checkpoint(state, *options.out_dir / "checkpoint_final.bin");
    write_metrics_csv(state.history, *options.out_dir / "metrics.csv");
  }
}

}  // namespace dear
