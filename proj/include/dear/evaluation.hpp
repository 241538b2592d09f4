#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dear/diffnet.hpp"
#include "dear/pendulum.hpp"
#include "dear/trainer.hpp"

namespace dear {

// Pearson correlation of average ranks. Throws UndefinedCorrelationError when
// either input is constant.
double spearman(std::span<const double> a, std::span<const double> b);

struct DisentReport {
  std::vector<double> abs_spearman;  // per factor
  double mean = 0.0;
};

// Compares encoder coordinate i with factor i (factors: m x n, codes: >= m x n).
DisentReport disent_report(const Eigen::MatrixXd& codes, const Eigen::MatrixXd& factors);
DisentReport disent_report(const Net& encoder, const pendulum::Split& split);

// Mean absolute error of code i against factor i, per factor, over the selected columns.
std::vector<double> factor_mae(const Eigen::MatrixXd& codes, const Eigen::MatrixXd& factors,
                               const std::vector<int>& columns);

double efficiency_score(double acc_small, double acc_large);

struct GroupAccuracy {
  // cells[tau][spurious]
  std::array<std::array<double, 2>, 2> cells{};
  std::array<std::array<int, 2>, 2> counts{};
  double worst = 0.0;
  double average = 0.0;
};

GroupAccuracy group_worst_acc(std::span<const int> predictions, std::span<const int> tau, std::span<const int> spurious);

struct DownstreamOptions {
  int hidden = 100;
  double lr = 1e-2;
  int batch_size = 128;
  int epochs = 30;
  int min_steps = 200;
};

// Two-layer MLP on standardized features predicting a binary label.
struct Classifier {
  Net net;
  Eigen::VectorXd feature_mean;
  Eigen::VectorXd feature_scale;

  std::vector<int> predict(const Eigen::MatrixXd& features) const;
  double accuracy(const Eigen::MatrixXd& features, std::span<const int> labels) const;
};

Classifier train_downstream(const Eigen::MatrixXd& features, std::span<const int> labels, std::uint64_t seed,
                            const DownstreamOptions& options = {});

// Sample efficiency: classifiers on DEAR codes (first m encoder outputs) and on raw
// pixels, trained on a seed-fixed subset of `small_n` samples and on the full train
// split, scored on the test split. Accuracies in percent.
struct EfficiencyRow {
  std::string representation;
  double acc_small = 0.0;
  double acc_full = 0.0;
  double efficiency = 0.0;
};

std::vector<EfficiencyRow> efficiency_experiment(const Net& encoder, int m, const pendulum::Split& train,
                                                 const pendulum::Split& test, int small_n, std::uint64_t seed,
                                                 const DownstreamOptions& options = {});

// Worst-group robustness of the same two representations; train carries the
// spurious background, test an independent one.
struct RobustnessRow {
  std::string representation;
  GroupAccuracy groups;
};

std::vector<RobustnessRow> robustness_experiment(const Net& encoder, int m, const pendulum::Split& train,
                                                 const pendulum::Split& test, std::uint64_t seed,
                                                 const DownstreamOptions& options = {});

// Columns of `features` selected by index.
Eigen::MatrixXd select_columns(const Eigen::MatrixXd& features, std::span<const int> columns);
std::vector<int> select(std::span<const int> values, std::span<const int> columns);

// Seed-fixed subset of `count` indices out of n (sorted).
std::vector<int> random_subset(int n, int count, std::uint64_t seed);

enum class GridSource { kTestImage, kPriorSample };
enum class GridMode { kTraverse, kIntervene };

struct GridRequest {
  GridSource source = GridSource::kTestImage;
  GridMode mode = GridMode::kTraverse;
  std::vector<int> dims;  // 0-based
  std::vector<double> grid;
  int image_index = 0;       // test image used when source is kTestImage
  std::uint64_t seed = 0;    // noise for kPriorSample
};

struct GridResult {
  Eigen::VectorXd base_latent;
  std::vector<std::vector<Eigen::VectorXd>> latents;  // [row][column]
  std::vector<std::vector<std::string>> files;
};

// Decodes G on traversed / intervened latents and writes PGM tiles plus grid.json.
GridResult dump_grids(const TrainState& state, const pendulum::Split* test_split, const GridRequest& request,
                      const std::filesystem::path& out_dir);

void write_pgm(const std::filesystem::path& path, const Eigen::VectorXd& image, int size);

}  // namespace dear
