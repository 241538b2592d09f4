#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dear/diffnet.hpp"
#include "dear/objectives.hpp"
#include "dear/pendulum.hpp"
#include "dear/rng.hpp"
#include "dear/scm_prior.hpp"

namespace dear {

enum class PriorMode { kScm, kIndependent };
enum class TransformMode { kLinear, kPiecewise };

struct TrainConfig {
  double lr_d = 1e-4;
  double lr_eg = 5e-5;
  double lr_prior_f = 5e-5;
  double lr_a = 1e-3;
  int batch_size = 128;
  double lambda = 5.0;
  int d_steps = 1;
  int epochs = 200;
  double label_fraction = 1.0;
  double clamp_c = 4.0;
  std::uint64_t seed = 0;
  PriorMode prior_mode = PriorMode::kScm;
  TransformMode f_mode = TransformMode::kLinear;
  SupLossKind sup_kind = SupLossKind::kCrossEntropy;
  int k = 8;
  int m = 4;
  int pwl_knots = 8;
  int hidden = 256;
  double encoder_noise = 0.0;
  // Super-graph over the m causal factors: an explicit 1-based edge list, or a
  // causal order (1-based) which takes precedence when non-empty.
  std::vector<std::pair<int, int>> edges{{1, 3}, {1, 4}, {2, 3}, {2, 4}};
  std::vector<int> causal_order;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

std::string to_string(PriorMode mode);
std::string to_string(TransformMode mode);
std::string to_string(SupLossKind kind);
PriorMode prior_mode_from_string(const std::string& s);
TransformMode transform_mode_from_string(const std::string& s);
SupLossKind sup_kind_from_string(const std::string& s);

// Permitted structure implied by the config (empty for the independent prior).
GraphMask config_mask(const TrainConfig& config);

struct EpochMetrics {
  int epoch = 0;
  std::int64_t step = 0;
  double disc_loss = 0.0;
  double d_real_mean = 0.0;
  double d_fake_mean = 0.0;
  double sup_loss = 0.0;
  double val_sup_loss = 0.0;
  double val_mean_abs_spearman = 0.0;
  bool operator==(const EpochMetrics&) const = default;
};

struct TrainState {
  TrainConfig config;
  Net encoder;
  Net generator;
  Net discriminator;
  ScmPrior prior;
  AdamState adam_d;
  AdamState adam_e;  // E and G share the lr_eg group; Adam is element-wise so
  AdamState adam_g;  // two states are equivalent to one over the concatenation.
  AdamState adam_f;
  AdamState adam_a;
  int epoch = 0;
  std::int64_t step = 0;
  Rng rng;
  std::vector<EpochMetrics> history;
};

TrainState init_state(const TrainConfig& config, int pixels);

// Seed-fixed subset of floor(fraction * n) training indices whose labels are used.
std::vector<bool> labeled_subset(int n, double fraction, std::uint64_t seed);

struct StepMetrics {
  double disc_loss = 0.0;
  double d_real_mean = 0.0;
  double d_fake_mean = 0.0;
  double sup_loss = 0.0;
};

// d_steps discriminator updates followed by one joint update of encoder, generator
// and prior. `labels` (m x n_s) belong to the first n_s columns of x_batch.
StepMetrics train_step(TrainState& state, const Eigen::MatrixXd& x_batch, const Eigen::MatrixXd& labels);

// Encoder outputs (deterministic part) for every sample of a split, k x n.
Eigen::MatrixXd encode(const Net& encoder, const Eigen::MatrixXd& images, int chunk = 1024);

struct ValidationMetrics {
  double sup_loss = 0.0;
  double mean_abs_spearman = 0.0;
};

ValidationMetrics validate(const TrainState& state, const pendulum::Split& split);

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir{};  // checkpoints + metrics.csv
  std::function<void(const EpochMetrics&)> on_epoch{};
  // Stop after this many epochs in this call (for resume tests); -1 runs to config.epochs.
  int stop_after_epochs = -1;
};

// Runs the remaining epochs of `state` (starting at state.epoch).
void train(TrainState& state, const pendulum::Split& train_split, const pendulum::Split& val_split,
           const TrainOptions& options = {});

void write_metrics_csv(const std::vector<EpochMetrics>& history, const std::filesystem::path& path);

// Checkpoint file: "DEAR", u32 version, u64 header length, JSON header, little-endian
// f64 tensors in header order, CRC32 of header + tensors.
inline constexpr std::uint32_t kCheckpointVersion = 1;
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);
std::string serialize_checkpoint(const TrainState& state);
TrainState deserialize_checkpoint(const std::string& bytes);

}  // namespace dear
