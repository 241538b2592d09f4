#include "dear/pendulum.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"

#include "dear/errors.hpp"

namespace dear::pendulum {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kWindowLeft = -12.0;
constexpr double kWindowRight = 12.0;
constexpr double kWindowBottom = -1.0;
constexpr double kWindowTop = 17.0;
constexpr double kShadowIntensity = 0.5;

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

double point_segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double dx = bx - ax;
  const double dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
  t = std::min(1.0, std::max(0.0, t));
  return std::hypot(px - (ax + t * dx), py - (ay + t * dy));
}

}  // namespace

Eigen::Vector4d FactorRanges::normalize(const FactorVector& f) const {
  const std::array<double, kFactorCount> raw{f.pendulum_angle, f.light_angle, f.shadow_length, f.shadow_position};
  Eigen::Vector4d xi;
  for (int i = 0; i < kFactorCount; ++i) xi[i] = (raw[i] - lo[i]) / (hi[i] - lo[i]);
  return xi;
}

FactorVector FactorRanges::denormalize(const Eigen::Vector4d& xi) const {
  std::array<double, kFactorCount> raw{};
  for (int i = 0; i < kFactorCount; ++i) raw[i] = lo[i] + xi[i] * (hi[i] - lo[i]);
  return {raw[0], raw[1], raw[2], raw[3]};
}

Shadow shadow_physics(double pendulum_angle_deg, double light_angle_deg) {
  const double theta = pendulum_angle_deg * kDeg;
  const double light = light_angle_deg * kDeg;
  const double cot = std::cos(light) / std::sin(light);
  const double bob_x = kRodLength * std::sin(theta);
  const double bob_y = kPivotHeight - kRodLength * std::cos(theta);
  const double s1 = 0.0 - kPivotHeight * cot;
  const double s2 = bob_x - bob_y * cot;
  return {std::abs(s2 - s1), 0.5 * (s1 + s2)};
}

FactorDraw sample_factors(Rng& rng, const SamplingOptions& options) {
  const auto& r = options.ranges;
  FactorVector f;
  f.pendulum_angle = rng.uniform(r.lo[0], r.hi[0]);
  f.light_angle = rng.uniform(r.lo[1], r.hi[1]);
  const Shadow s = shadow_physics(f.pendulum_angle, f.light_angle);
  f.shadow_length = s.length;
  f.shadow_position = s.position;
  const double noise_length = rng.normal();
  const double noise_position = rng.normal();
  const bool corrupted = rng.uniform() < options.corruption_rate;

  FactorDraw out;
  out.xi = r.normalize(f);
  if (corrupted) {
    out.xi[2] = rng.uniform();
    out.xi[3] = rng.uniform();
    out.tau = 1;
  } else {
    out.xi[2] += options.noise_sigma * noise_length;
    out.xi[3] += options.noise_sigma * noise_position;
  }
  for (int i = 0; i < kFactorCount; ++i) out.xi[i] = clamp01(out.xi[i]);
  return out;
}

double background_intensity(Background b) { return b == Background::kDark ? kDarkBackground : kLightBackground; }

Eigen::VectorXd render(const FactorVector& factors, Background background, const RenderOptions& options) {
  const int size = options.image_size;
  const double px_w = (kWindowRight - kWindowLeft) / size;
  const double px_h = (kWindowTop - kWindowBottom) / size;
  auto col_of = [&](double x) { return (x - kWindowLeft) / px_w - 0.5; };
  auto row_of = [&](double y) { return (kWindowTop - y) / px_h - 0.5; };

  const double bg = background_intensity(background);
  Eigen::VectorXd image = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(size) * size, bg);

  // Shadow bar on the bottom three rows, with fractional coverage at its ends.
  const double half = 0.5 * std::max(0.0, factors.shadow_length);
  const double left = factors.shadow_position - half;
  const double right = factors.shadow_position + half;
  for (int c = 0; c < size; ++c) {
    const double x0 = kWindowLeft + c * px_w;
    const double overlap = std::max(0.0, std::min(right, x0 + px_w) - std::max(left, x0));
    const double cover = std::min(1.0, overlap / px_w);
    if (cover <= 0.0) continue;
    for (int r = size - 3; r < size; ++r) {
      double& v = image[r * size + c];
      v += cover * (kShadowIntensity - v);
    }
  }

  // Rod, one pixel wide, pivot to bob.
  const double theta = factors.pendulum_angle * kDeg;
  const double pivot_c = col_of(0.0);
  const double pivot_r = row_of(kPivotHeight);
  const double bob_c = col_of(kRodLength * std::sin(theta));
  const double bob_r = row_of(kPivotHeight - kRodLength * std::cos(theta));
  // Light disc of radius 2 px on the arc of radius 14 about the origin.
  const double light = factors.light_angle * kDeg;
  const double light_c = col_of(kLightRadius * std::cos(light));
  const double light_r = row_of(kLightRadius * std::sin(light));

  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      double& v = image[r * size + c];
      const double rod = clamp01(1.0 - point_segment_distance(c, r, pivot_c, pivot_r, bob_c, bob_r));
      v += rod * (1.0 - v);
      const double disc = clamp01(2.5 - std::hypot(c - light_c, r - light_r));
      v += disc * (1.0 - v);
    }
  }
  return image;
}

Split make_split(int count, std::uint64_t seed, int split_id, const SamplingOptions& sampling,
                 const RenderOptions& render_options) {
  if (count <= 0) throw DatasetError("split sizes must be positive");
  Split split;
  split.image_size = render_options.image_size;
  const auto pixels = static_cast<Eigen::Index>(render_options.image_size) * render_options.image_size;
  split.images.resize(pixels, count);
  split.factors.resize(kFactorCount, count);
  split.tau.resize(count);
  split.spurious.assign(count, static_cast<int>(Background::kDark));
  const std::uint64_t split_seed = seed * 4 + static_cast<std::uint64_t>(split_id);
  for (int i = 0; i < count; ++i) {
    Rng rng(split_seed, static_cast<std::uint64_t>(i));
    const FactorDraw draw = sample_factors(rng, sampling);
    split.factors.col(i) = draw.xi;
    split.tau[i] = draw.tau;
    split.images.col(i) = render(sampling.ranges.denormalize(draw.xi), Background::kDark, render_options);
  }
  return split;
}

Dataset make_dataset(const DatasetMeta& meta) {
  if (meta.corruption_rate < 0.0 || meta.corruption_rate > 1.0) throw DatasetError("corruption rate must lie in [0, 1]");
  const SamplingOptions sampling{meta.corruption_rate, meta.noise_sigma, meta.ranges};
  const RenderOptions render_options{meta.image_size};
  Dataset ds;
  ds.meta = meta;
  ds.meta.spurious_correlation = -1.0;
  ds.train = make_split(meta.n_train, meta.seed, 0, sampling, render_options);
  ds.val = make_split(meta.n_val, meta.seed, 1, sampling, render_options);
  ds.test = make_split(meta.n_test, meta.seed, 2, sampling, render_options);
  return ds;
}

void inject_spurious(Split& split, const FactorRanges& ranges, double correlation, SpuriousMode mode, std::uint64_t seed) {
  if (correlation < 0.0 || correlation > 1.0) throw DatasetError("spurious correlation must lie in [0, 1]");
  Rng rng(seed, mode == SpuriousMode::kTrain ? 0x7472 : 0x7465);
  const RenderOptions render_options{split.image_size};
  for (int i = 0; i < split.size(); ++i) {
    Background b;
    if (mode == SpuriousMode::kTrain) {
      const Background matched = split.tau[i] == 1 ? Background::kDark : Background::kLight;
      const Background flipped = split.tau[i] == 1 ? Background::kLight : Background::kDark;
      b = rng.uniform() < correlation ? matched : flipped;
    } else {
      b = rng.uniform() < 0.5 ? Background::kDark : Background::kLight;
    }
    split.spurious[i] = static_cast<int>(b);
    split.images.col(i) = render(ranges.denormalize(split.factors.col(i)), b, render_options);
  }
}

Dataset generate_dataset(const DatasetMeta& meta) {
  Dataset ds = make_dataset(meta);
  if (meta.spurious_correlation < 0.0) return ds;
  inject_spurious(ds.train, meta.ranges, meta.spurious_correlation, SpuriousMode::kTrain, meta.spurious_seed);
  inject_spurious(ds.val, meta.ranges, meta.spurious_correlation, SpuriousMode::kTest, meta.spurious_seed + 1);
  inject_spurious(ds.test, meta.ranges, meta.spurious_correlation, SpuriousMode::kTest, meta.spurious_seed + 2);
  ds.meta.spurious_correlation = meta.spurious_correlation;
  ds.meta.spurious_seed = meta.spurious_seed;
  return ds;
}

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s, const fs::path& file) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw DatasetError("malformed number '" + s + "' in " + file.string());
  return v;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& file, const std::string& expected_header) {
  std::ifstream in(file);
  if (!in) throw DatasetError("missing file " + file.string());
  std::string line;
  if (!std::getline(in, line) || line != expected_header)
    throw DatasetError("unexpected header in " + file.string());
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

constexpr const char* kFactorsHeader = "theta_p,theta_l,shadow_len,shadow_pos";
constexpr const char* kLabelsHeader = "y1,y2,y3,y4,tau,spurious";

void save_split(const Split& split, const fs::path& dir) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "images.f32", std::ios::binary);
    if (!out) throw DatasetError("cannot write " + (dir / "images.f32").string());
    std::vector<float> buf(static_cast<std::size_t>(split.images.size()));
    for (Eigen::Index i = 0; i < split.images.size(); ++i) buf[i] = static_cast<float>(split.images.data()[i]);
    static_assert(std::endian::native == std::endian::little, "image files are little-endian");
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  std::ofstream factors(dir / "factors.csv");
  std::ofstream labels(dir / "labels.csv");
  factors << kFactorsHeader << '\n';
  labels << kLabelsHeader << '\n';
  for (int i = 0; i < split.size(); ++i) {
    std::string row;
    for (int f = 0; f < kFactorCount; ++f) row += (f ? "," : "") + format_double(split.factors(f, i));
    factors << row << '\n';
    labels << row << ',' << split.tau[i] << ',' << split.spurious[i] << '\n';
  }
}

Split load_split(const fs::path& dir, int expected_count, int image_size) {
  Split split;
  split.image_size = image_size;
  const auto pixels = static_cast<Eigen::Index>(image_size) * image_size;

  const auto factor_rows = read_csv(dir / "factors.csv", kFactorsHeader);
  const auto label_rows = read_csv(dir / "labels.csv", kLabelsHeader);
  if (static_cast<int>(factor_rows.size()) != expected_count || static_cast<int>(label_rows.size()) != expected_count)
    throw DatasetError("sample count in " + dir.string() + " does not match meta.json");

  split.factors.resize(kFactorCount, expected_count);
  split.tau.resize(expected_count);
  split.spurious.resize(expected_count);
  for (int i = 0; i < expected_count; ++i) {
    if (factor_rows[i].size() != kFactorCount || label_rows[i].size() != kFactorCount + 2)
      throw DatasetError("wrong column count in " + dir.string());
    for (int f = 0; f < kFactorCount; ++f) split.factors(f, i) = parse_double(factor_rows[i][f], dir / "factors.csv");
    split.tau[i] = static_cast<int>(parse_double(label_rows[i][4], dir / "labels.csv"));
    split.spurious[i] = static_cast<int>(parse_double(label_rows[i][5], dir / "labels.csv"));
  }

  const fs::path image_file = dir / "images.f32";
  std::ifstream in(image_file, std::ios::binary);
  if (!in) throw DatasetError("missing file " + image_file.string());
  std::vector<float> buf(static_cast<std::size_t>(pixels * expected_count));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)) || in.peek() != EOF)
    throw DatasetError("image file size in " + dir.string() + " does not match meta.json");
  split.images.resize(pixels, expected_count);
  for (std::size_t i = 0; i < buf.size(); ++i) split.images.data()[i] = buf[i];
  return split;
}

json meta_to_json(const DatasetMeta& m) {
  json j;
  j["counts"] = {{"train", m.n_train}, {"val", m.n_val}, {"test", m.n_test}};
  j["seed"] = m.seed;
  j["corruption_rate"] = m.corruption_rate;
  j["noise_sigma"] = m.noise_sigma;
  j["image_size"] = m.image_size;
  j["ranges"] = {{"lo", m.ranges.lo}, {"hi", m.ranges.hi},
                 {"names", {"theta_p", "theta_l", "shadow_len", "shadow_pos"}}};
  j["spurious"] = {{"correlation", m.spurious_correlation}, {"seed", m.spurious_seed}};
  return j;
}

DatasetMeta meta_from_json(const json& j) {
  DatasetMeta m;
  m.n_train = j.at("counts").at("train");
  m.n_val = j.at("counts").at("val");
  m.n_test = j.at("counts").at("test");
  m.seed = j.at("seed");
  m.corruption_rate = j.at("corruption_rate");
  m.noise_sigma = j.at("noise_sigma");
  m.image_size = j.at("image_size");
  m.ranges.lo = j.at("ranges").at("lo");
  m.ranges.hi = j.at("ranges").at("hi");
  m.spurious_correlation = j.at("spurious").at("correlation");
  m.spurious_seed = j.at("spurious").at("seed");
  return m;
}

}  // namespace

void save_dataset(const Dataset& dataset, const fs::path& dir) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "meta.json");
    if (!out) throw DatasetError("cannot write " + (dir / "meta.json").string());
    out << meta_to_json(dataset.meta).dump(2) << '\n';
  }
  save_split(dataset.train, dir / "train");
  save_split(dataset.val, dir / "val");
  save_split(dataset.test, dir / "test");
}

Dataset load_dataset(const fs::path& dir) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw DatasetError("missing file " + (dir / "meta.json").string());
  Dataset ds;
  try {
    ds.meta = meta_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw DatasetError(std::string("malformed meta.json: ") + e.what());
  }
  ds.train = load_split(dir / "train", ds.meta.n_train, ds.meta.image_size);
  ds.val = load_split(dir / "val", ds.meta.n_val, ds.meta.image_size);
  ds.test = load_split(dir / "test", ds.meta.n_test, ds.meta.image_size);
  return ds;
}

}  // namespace dear::pendulum
