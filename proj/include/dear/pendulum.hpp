#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dear/rng.hpp"

namespace dear::pendulum {

inline constexpr int kFactorCount = 4;
inline constexpr double kPivotHeight = 10.0;
inline constexpr double kRodLength = 6.0;
inline constexpr double kLightRadius = 14.0;
inline constexpr double kDarkBackground = 0.1;
inline constexpr double kLightBackground = 0.9;

enum class Background { kDark = 0, kLight = 1 };

// Factor order everywhere: pendulum angle, light angle, shadow length, shadow position.
struct FactorVector {
  double pendulum_angle = 0.0;  // degrees
  double light_angle = 90.0;    // degrees
  double shadow_length = 0.0;   // world units
  double shadow_position = 0.0; // world units
};

// Affine maps between world units and [0, 1].
struct FactorRanges {
  std::array<double, kFactorCount> lo{-40.0, 60.0, 0.0, -7.0};
  std::array<double, kFactorCount> hi{40.0, 120.0, 7.0, 7.0};

  Eigen::Vector4d normalize(const FactorVector& f) const;
  FactorVector denormalize(const Eigen::Vector4d& xi) const;
  bool operator==(const FactorRanges&) const = default;
};

struct Shadow {
  double length = 0.0;
  double position = 0.0;
};

// Parallel light at light_angle degrees above the +x axis; the rod hangs from
// (0, 10) with length 6. Each endpoint projects to the ground at px - py / tan(light).
Shadow shadow_physics(double pendulum_angle_deg, double light_angle_deg);

struct FactorDraw {
  Eigen::Vector4d xi;  // normalized, clamped to [0, 1]
  int tau = 0;
};

struct SamplingOptions {
  double corruption_rate = 0.2;
  double noise_sigma = 0.05;  // normalized units
  FactorRanges ranges;
};

FactorDraw sample_factors(Rng& rng, const SamplingOptions& options = {});

struct RenderOptions {
  int image_size = 32;
};

double background_intensity(Background b);

// Row-major image_size x image_size grayscale image with values in [0, 1].
Eigen::VectorXd render(const FactorVector& factors, Background background, const RenderOptions& options = {});

struct Split {
  int image_size = 32;
  Eigen::MatrixXd images;   // pixels x n
  Eigen::MatrixXd factors;  // 4 x n, normalized; also the observed labels y
  std::vector<int> tau;
  std::vector<int> spurious;  // Background as int

  int size() const { return static_cast<int>(factors.cols()); }
  Eigen::Index pixels() const { return images.rows(); }
};

struct DatasetMeta {
  int n_train = 6724;
  int n_val = 6724;
  int n_test = 6724;
  std::uint64_t seed = 0;
  double corruption_rate = 0.2;
  double noise_sigma = 0.05;
  int image_size = 32;
  FactorRanges ranges;
  // Spurious background settings; correlation < 0 means not injected.
  double spurious_correlation = -1.0;
  std::uint64_t spurious_seed = 0;
  bool operator==(const DatasetMeta&) const = default;
};

struct Dataset {
  Split train;
  Split val;
  Split test;
  DatasetMeta meta;
};

Split make_split(int count, std::uint64_t seed, int split_id, const SamplingOptions& sampling, const RenderOptions& render);
Dataset make_dataset(const DatasetMeta& meta);

enum class SpuriousMode { kTrain, kTest };

// Assigns backgrounds and re-renders. Train mode: background is dark for tau = 1 and
// light for tau = 0 with probability `correlation`, flipped otherwise. Test mode: fair coin.
void inject_spurious(Split& split, const FactorRanges& ranges, double correlation, SpuriousMode mode, std::uint64_t seed);

// make_dataset, then backgrounds when meta.spurious_correlation >= 0: train split in
// train mode (spurious_seed), val and test in test mode (spurious_seed + 1, + 2).
Dataset generate_dataset(const DatasetMeta& meta);

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace dear::pendulum
