#include "dear/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "dear/errors.hpp"
#include "dear/objectives.hpp"
#include "dear/rng.hpp"
#include "json.hpp"

namespace dear {

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  const auto n = v.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("spearman inputs differ in length");
  if (a.size() < 3) throw ArityError("spearman needs at least three pairs");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double mean = (n + 1.0) / 2.0;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    const double da = ra[i] - mean;
    const double db = rb[i] - mean;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw UndefinedCorrelationError("spearman correlation of a constant input is undefined");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

DisentReport disent_report(const Eigen::MatrixXd& codes, const Eigen::MatrixXd& factors) {
  if (codes.rows() < factors.rows() || codes.cols() != factors.cols())
    throw ShapeError("codes must cover every factor for every sample");
  DisentReport report;
  for (Eigen::Index i = 0; i < factors.rows(); ++i) {
    const Eigen::VectorXd c = codes.row(i).transpose();
    const Eigen::VectorXd f = factors.row(i).transpose();
    report.abs_spearman.push_back(std::abs(spearman({c.data(), static_cast<std::size_t>(c.size())},
                                                    {f.data(), static_cast<std::size_t>(f.size())})));
  }
  report.mean = std::accumulate(report.abs_spearman.begin(), report.abs_spearman.end(), 0.0) /
                static_cast<double>(report.abs_spearman.size());
  return report;
}

DisentReport disent_report(const Net& encoder, const pendulum::Split& split) {
  const Eigen::MatrixXd codes = encode(encoder, split.images);
  return disent_report(codes, split.factors);
}

std::vector<double> factor_mae(const Eigen::MatrixXd& codes, const Eigen::MatrixXd& factors,
                               const std::vector<int>& columns) {
  std::vector<double> mae(factors.rows(), 0.0);
  if (columns.empty()) return mae;
  for (int c : columns)
    for (Eigen::Index i = 0; i < factors.rows(); ++i) mae[i] += std::abs(codes(i, c) - factors(i, c));
  for (auto& v : mae) v /= static_cast<double>(columns.size());
  return mae;
}

double efficiency_score(double acc_small, double acc_large) {
  if (!(acc_large > 0.0)) throw DomainError("efficiency score needs a positive large-sample accuracy");
  return 100.0 * acc_small / acc_large;
}

GroupAccuracy group_worst_acc(std::span<const int> predictions, std::span<const int> tau, std::span<const int> spurious) {
  if (predictions.size() != tau.size() || tau.size() != spurious.size())
    throw ShapeError("predictions and group labels differ in length");
  GroupAccuracy out;
  std::array<std::array<int, 2>, 2> correct{};
  int total_correct = 0;
  for (std::size_t i = 0; i < tau.size(); ++i) {
    const int t = tau[i];
    const int s = spurious[i];
    if ((t != 0 && t != 1) || (s != 0 && s != 1)) throw DomainError("group labels must be binary");
    ++out.counts[t][s];
    if (predictions[i] == t) {
      ++correct[t][s];
      ++total_correct;
    }
  }
  out.worst = 1.0;
  for (int t = 0; t < 2; ++t) {
    for (int s = 0; s < 2; ++s) {
      if (out.counts[t][s] == 0)
        throw GroupingError("no test samples in cell tau=" + std::to_string(t) + ", spurious=" + std::to_string(s));
      out.cells[t][s] = static_cast<double>(correct[t][s]) / out.counts[t][s];
      out.worst = std::min(out.worst, out.cells[t][s]);
    }
  }
  out.average = static_cast<double>(total_correct) / static_cast<double>(tau.size());
  return out;
}

std::vector<int> Classifier::predict(const Eigen::MatrixXd& features) const {
  Eigen::MatrixXd x = (features.colwise() - feature_mean).array().colwise() / feature_scale.array();
  const Eigen::MatrixXd logits = net.forward(x);
  std::vector<int> out(features.cols());
  for (Eigen::Index c = 0; c < features.cols(); ++c) out[c] = logits(0, c) > 0.0 ? 1 : 0;
  return out;
}

double Classifier::accuracy(const Eigen::MatrixXd& features, std::span<const int> labels) const {
  const auto pred = predict(features);
  if (pred.size() != labels.size()) throw ShapeError("feature and label counts differ");
  int correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
  return pred.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(pred.size());
}

Classifier train_downstream(const Eigen::MatrixXd& features, std::span<const int> labels, std::uint64_t seed,
                            const DownstreamOptions& options) {
  const auto n = features.cols();
  if (n == 0 || static_cast<std::size_t>(n) != labels.size()) throw ShapeError("downstream training needs labelled samples");
  Classifier clf;
  clf.feature_mean = features.rowwise().mean();
  const Eigen::MatrixXd centered = features.colwise() - clf.feature_mean;
  clf.feature_scale = (centered.array().square().rowwise().sum() / static_cast<double>(n)).sqrt();
  for (Eigen::Index i = 0; i < clf.feature_scale.size(); ++i)
    if (!(clf.feature_scale[i] > 1e-12)) clf.feature_scale[i] = 1.0;
  const Eigen::MatrixXd x = centered.array().colwise() / clf.feature_scale.array();

  const NetSpec spec{{static_cast<int>(features.rows()), options.hidden, 1},
                     {Activation::kLeakyRelu, Activation::kIdentity},
                     NetRole::kGeneric};
  clf.net = Net::init(spec, seed);
  AdamState adam({options.lr, 0.9, 0.999, 1e-8}, clf.net.parameter_count());

  Rng rng(seed, 0x636c66);
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  const int batch = static_cast<int>(std::min<Eigen::Index>(options.batch_size, n));
  const int per_epoch = static_cast<int>((n + batch - 1) / batch);
  const int total_steps = std::max(options.epochs * per_epoch, options.min_steps);

  int cursor = static_cast<int>(n);
  for (int step = 0; step < total_steps; ++step) {
    if (cursor + batch > n) {
      rng.shuffle(perm.begin(), perm.end());
      cursor = 0;
    }
    Eigen::MatrixXd xb(x.rows(), batch);
    Eigen::VectorXd yb(batch);
    for (int c = 0; c < batch; ++c) {
      xb.col(c) = x.col(perm[cursor + c]);
      yb[c] = labels[perm[cursor + c]];
    }
    cursor += batch;
    Tape tape;
    const Eigen::MatrixXd logits = clf.net.forward(xb, &tape);
    Eigen::MatrixXd upstream(1, batch);
    for (int c = 0; c < batch; ++c) upstream(0, c) = (sigmoid(logits(0, c)) - yb[c]) / batch;
    const Eigen::VectorXd grads = clf.net.backward(tape, upstream);
    Eigen::VectorXd params = clf.net.parameters();
    adam_step(params, grads, adam);
    clf.net.set_parameters(params);
  }
  return clf;
}

Eigen::MatrixXd select_columns(const Eigen::MatrixXd& features, std::span<const int> columns) {
  Eigen::MatrixXd out(features.rows(), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t i = 0; i < columns.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = features.col(columns[i]);
  return out;
}

std::vector<int> select(std::span<const int> values, std::span<const int> columns) {
  std::vector<int> out;
  out.reserve(columns.size());
  for (int c : columns) out.push_back(values[c]);
  return out;
}

namespace {

Eigen::MatrixXd dear_features(const Net& encoder, int m, const pendulum::Split& split) {
  return encode(encoder, split.images).topRows(m);
}

}  // namespace

std::vector<EfficiencyRow> efficiency_experiment(const Net& encoder, int m, const pendulum::Split& train,
                                                 const pendulum::Split& test, int small_n, std::uint64_t seed,
                                                 const DownstreamOptions& options) {
  const auto subset = random_subset(train.size(), small_n, seed);
  const auto small_labels = select(train.tau, subset);
  std::vector<EfficiencyRow> rows;
  auto run = [&](const std::string& name, const Eigen::MatrixXd& train_x, const Eigen::MatrixXd& test_x) {
    EfficiencyRow row;
    row.representation = name;
    const Classifier small = train_downstream(select_columns(train_x, subset), small_labels, seed, options);
    const Classifier full = train_downstream(train_x, train.tau, seed, options);
    row.acc_small = 100.0 * small.accuracy(test_x, test.tau);
    row.acc_full = 100.0 * full.accuracy(test_x, test.tau);
    row.efficiency = efficiency_score(row.acc_small, row.acc_full);
    rows.push_back(row);
  };
  run("dear", dear_features(encoder, m, train), dear_features(encoder, m, test));
  run("pixels", train.images, test.images);
  return rows;
}

std::vector<RobustnessRow> robustness_experiment(const Net& encoder, int m, const pendulum::Split& train,
                                                 const pendulum::Split& test, std::uint64_t seed,
                                                 const DownstreamOptions& options) {
  std::vector<RobustnessRow> rows;
  auto run = [&](const std::string& name, const Eigen::MatrixXd& train_x, const Eigen::MatrixXd& test_x) {
    const Classifier clf = train_downstream(train_x, train.tau, seed, options);
    rows.push_back({name, group_worst_acc(clf.predict(test_x), test.tau, test.spurious)});
  };
  run("dear", dear_features(encoder, m, train), dear_features(encoder, m, test));
  run("pixels", train.images, test.images);
  return rows;
}

std::vector<int> random_subset(int n, int count, std::uint64_t seed) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed, 0x737562);
  rng.shuffle(idx.begin(), idx.end());
  idx.resize(std::min(count, n));
  std::sort(idx.begin(), idx.end());
  return idx;
}

void write_pgm(const std::filesystem::path& path, const Eigen::VectorXd& image, int size) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "P5\n" << size << ' ' << size << "\n255\n";
  for (Eigen::Index i = 0; i < image.size(); ++i) {
    const double v = std::clamp(image[i], 0.0, 1.0);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  }
}

GridResult dump_grids(const TrainState& state, const pendulum::Split* test_split, const GridRequest& request,
                      const std::filesystem::path& out_dir) {
  const int k = state.config.k;
  const int m = state.prior.m();
  for (int d : request.dims) {
    if (d < 0 || d >= k) throw OutOfRangeError("grid dimension " + std::to_string(d + 1) + " out of range");
    if (request.mode == GridMode::kIntervene && d >= m)
      throw OutOfRangeError("intervention dimension " + std::to_string(d + 1) + " is not causal");
  }

  GridResult result;
  if (request.source == GridSource::kTestImage) {
    if (test_split == nullptr || request.image_index < 0 || request.image_index >= test_split->size())
      throw OutOfRangeError("test image index out of range");
    result.base_latent = state.encoder.forward_one(test_split->images.col(request.image_index));
  } else {
    Rng rng(request.seed, 0x67726964);
    Eigen::VectorXd eps(k);
    for (int i = 0; i < k; ++i) eps[i] = rng.normal();
    result.base_latent = state.prior.sample(eps);
  }

  std::filesystem::create_directories(out_dir);
  const int size = static_cast<int>(std::lround(std::sqrt(static_cast<double>(state.generator.spec().output_size()))));
  nlohmann::json index;
  index["source"] = request.source == GridSource::kTestImage ? "test_image" : "prior_sample";
  index["mode"] = request.mode == GridMode::kTraverse ? "traverse" : "intervene";
  index["grid"] = request.grid;
  index["base_latent"] = std::vector<double>(result.base_latent.data(), result.base_latent.data() + k);
  index["rows"] = nlohmann::json::array();

  for (std::size_t r = 0; r < request.dims.size(); ++r) {
    const int dim = request.dims[r];
    std::vector<Eigen::VectorXd> row;
    if (request.mode == GridMode::kTraverse) {
      row = traverse(result.base_latent, dim, request.grid);
    } else {
      for (double v : request.grid) row.push_back(state.prior.intervene(result.base_latent, {{dim, v}}));
    }
    Eigen::MatrixXd latents(k, static_cast<Eigen::Index>(row.size()));
    for (std::size_t c = 0; c < row.size(); ++c) latents.col(static_cast<Eigen::Index>(c)) = row[c];
    const Eigen::MatrixXd images = state.generator.forward(latents);

    nlohmann::json row_json;
    row_json["dim"] = dim + 1;
    row_json["files"] = nlohmann::json::array();
    row_json["latents"] = nlohmann::json::array();
    std::vector<std::string> files;
    for (std::size_t c = 0; c < row.size(); ++c) {
      const std::string name = "dim" + std::to_string(dim + 1) + "_col" + std::to_string(c) + ".pgm";
      write_pgm(out_dir / name, images.col(static_cast<Eigen::Index>(c)), size);
      files.push_back(name);
      row_json["files"].push_back(name);
      row_json["latents"].push_back(std::vector<double>(row[c].data(), row[c].data() + k));
    }
    index["rows"].push_back(row_json);
    result.latents.push_back(std::move(row));
    result.files.push_back(std::move(files));
  }
  std::ofstream out(out_dir / "grid.json");
  out << index.dump(2) << '\n';
  return result;
}

}  // namespace dear
