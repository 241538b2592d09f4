#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

#include "json.hpp"

#include "dear/errors.hpp"
#include "dear/evaluation.hpp"
#include "doctest.h"

using namespace dear;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const pendulum::Split& test_split() {
  static const pendulum::Split split = [] {
    pendulum::SamplingOptions sampling;
    return pendulum::make_split(2000, 77, 2, sampling, {});
  }();
  return split;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.hidden = 16;
  c.seed = 3;
  return c;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("dear_eval_" + name)) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("spearman on hand examples") {
  const std::vector<double> a{1, 2, 3, 4, 5};
  const std::vector<double> rev{5, 4, 3, 2, 1};
  CHECK(spearman(a, a) == doctest::Approx(1.0));
  CHECK(spearman(a, rev) == doctest::Approx(-1.0));
  const std::vector<double> x{1, 2, 3}, y{1, 3, 2};
  CHECK(spearman(x, y) == doctest::Approx(0.5));
  // ties take the average rank: ranks (1.5, 1.5, 3) against (1, 2, 3)
  const std::vector<double> t{7, 7, 9}, u{1, 2, 3};
  CHECK(spearman(t, u) == doctest::Approx(std::sqrt(3.0) / 2.0));
}

TEST_CASE("spearman rejects constant, short and mismatched inputs") {
  const std::vector<double> c{2, 2, 2, 2}, v{1, 2, 3, 4}, s{1, 2, 3};
  CHECK_THROWS_AS(spearman(c, v), UndefinedCorrelationError);
  CHECK_THROWS_AS(spearman(v, c), UndefinedCorrelationError);
  CHECK_THROWS_AS(spearman(v, s), ShapeError);
}

TEST_CASE("oracle encoders score perfectly") {
  const auto& split = test_split();
  const int n = split.size();
  SUBCASE("normalized factors padded with zeros") {
    Eigen::MatrixXd codes = Eigen::MatrixXd::Zero(8, n);
    codes.topRows(4) = split.factors;
    const DisentReport r = disent_report(codes, split.factors);
    for (double rho : r.abs_spearman) CHECK(rho == doctest::Approx(1.0));
    CHECK(r.mean == doctest::Approx(1.0));
  }
  SUBCASE("logit of the factors") {
    const Eigen::MatrixXd clipped = split.factors.array().max(1e-6).min(1.0 - 1e-6).matrix();
    const Eigen::MatrixXd codes = (clipped.array() / (1.0 - clipped.array())).log().matrix();
    const DisentReport r = disent_report(codes, split.factors);
    for (double rho : r.abs_spearman) CHECK(rho == doctest::Approx(1.0));
  }
}

TEST_CASE("disent report is invariant under monotone reparameterization") {
  std::mt19937 gen(4);
  std::normal_distribution<double> g;
  Eigen::MatrixXd factors(4, 300), codes(4, 300);
  for (int j = 0; j < 300; ++j)
    for (int i = 0; i < 4; ++i) {
      factors(i, j) = g(gen);
      codes(i, j) = factors(i, j) + 0.7 * g(gen);
    }
  const DisentReport base = disent_report(codes, factors);
  Eigen::MatrixXd warped = codes;
  warped.row(0) = codes.row(0).array().exp();
  warped.row(1) = -codes.row(1).array().cube();
  warped.row(2) = codes.row(2).array().tanh();
  warped.row(3) = 3.0 * codes.row(3).array() - 2.0;
  const DisentReport after = disent_report(warped, factors);
  for (int i = 0; i < 4; ++i) CHECK(after.abs_spearman[i] == doctest::Approx(base.abs_spearman[i]).epsilon(1e-12));
}

TEST_CASE("random pixel projection is a poor encoder") {
  const auto& split = test_split();
  std::mt19937 gen(12345);
  std::normal_distribution<double> g;
  Eigen::MatrixXd proj(4, split.pixels());
  for (Eigen::Index i = 0; i < proj.size(); ++i) proj.data()[i] = g(gen);
  const DisentReport r = disent_report(proj * split.images, split.factors);
  CHECK(r.mean < 0.3);
}

TEST_CASE("factor MAE over selected columns") {
  Eigen::MatrixXd factors(2, 4), codes(2, 4);
  factors << 0.1, 0.2, 0.3, 0.4,  //
      0.5, 0.5, 0.5, 0.5;
  codes << 0.1, 0.4, 0.3, 1.0,  //
      0.6, 0.5, 0.4, 0.0;
  const auto mae = factor_mae(codes, factors, {0, 1, 2});
  REQUIRE(mae.size() == 2u);
  CHECK(mae[0] == doctest::Approx(0.2 / 3.0));
  CHECK(mae[1] == doctest::Approx(0.2 / 3.0));
}

TEST_CASE("efficiency score") {
  const double s = efficiency_score(68.06, 79.51);
  CHECK(s >= 85.5);
  CHECK(s <= 85.7);
  CHECK(std::abs(s - 85.59) < 0.1);
  CHECK(efficiency_score(80.0, 80.0) == doctest::Approx(100.0));
  CHECK(efficiency_score(50.0, 100.0) == doctest::Approx(50.0));
  CHECK_THROWS_AS(efficiency_score(50.0, 0.0), DomainError);
}

TEST_CASE("worst-group accuracy cell accounting") {
  // two samples per (tau, spurious) cell
  const std::vector<int> tau{0, 0, 0, 0, 1, 1, 1, 1};
  const std::vector<int> sp{0, 0, 1, 1, 0, 0, 1, 1};

  SUBCASE("all correct") {
    const GroupAccuracy g = group_worst_acc(tau, tau, sp);
    for (const auto& row : g.cells)
      for (double c : row) CHECK(c == 1.0);
    CHECK(g.worst == 1.0);
    CHECK(g.average == 1.0);
  }
  SUBCASE("predicting the spurious label") {
    // dark (0) is matched with tau 1 and light (1) with tau 0: predict 1 - spurious
    std::vector<int> pred(sp.size());
    for (std::size_t i = 0; i < sp.size(); ++i) pred[i] = 1 - sp[i];
    const GroupAccuracy g = group_worst_acc(pred, tau, sp);
    CHECK(g.cells[1][0] == 1.0);
    CHECK(g.cells[0][1] == 1.0);
    CHECK(g.cells[0][0] == 0.0);
    CHECK(g.cells[1][1] == 0.0);
    CHECK(g.worst == 0.0);
  }
  SUBCASE("single miss") {
    const std::vector<int> t{0, 0, 0, 0, 1, 1, 1, 1, 1, 1};
    const std::vector<int> s{0, 0, 1, 1, 0, 0, 1, 1, 1, 1};
    std::vector<int> pred = t;
    pred[9] = 0;
    const GroupAccuracy g = group_worst_acc(pred, t, s);
    CHECK(g.worst == doctest::Approx(3.0 / 4.0));
    // sample-weighted mean of the cells
    double weighted = 0.0;
    int total = 0;
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        weighted += g.cells[a][b] * g.counts[a][b];
        total += g.counts[a][b];
      }
    CHECK(g.average == doctest::Approx(weighted / total));
    CHECK(g.average == doctest::Approx(0.9));
  }
  SUBCASE("empty cell is named") {
    const std::vector<int> t{0, 0, 1};
    const std::vector<int> s{0, 1, 0};
    try {
      group_worst_acc(t, t, s);
      FAIL("expected a grouping error");
    } catch (const GroupingError& e) {
      CHECK(std::string(e.what()).find("tau=1") != std::string::npos);
    }
  }
}

TEST_CASE("downstream classifier") {
  std::mt19937 gen(8);
  std::normal_distribution<double> g;
  const int n = 600;
  Eigen::MatrixXd x(3, n);
  std::vector<int> y(n);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < 3; ++i) x(i, j) = g(gen);
    y[j] = x(0, j) + 0.5 * x(1, j) > 0.2 ? 1 : 0;
  }
  const Eigen::MatrixXd xtr = x.leftCols(400), xte = x.rightCols(200);
  const std::vector<int> ytr(y.begin(), y.begin() + 400), yte(y.begin() + 400, y.end());

  SUBCASE("separable toy data is learned") {
    const Classifier clf = train_downstream(xtr, ytr, 1);
    CHECK(clf.accuracy(xte, yte) >= 0.97);
    CHECK(clf.accuracy(xtr, ytr) >= 0.98);
  }
  SUBCASE("same seed, same accuracy") {
    const double a = train_downstream(xtr, ytr, 5).accuracy(xte, yte);
    const double b = train_downstream(xtr, ytr, 5).accuracy(xte, yte);
    CHECK(a == b);
  }
  SUBCASE("shuffled labels stay near the majority rate") {
    std::vector<int> shuffled = y;
    std::shuffle(shuffled.begin(), shuffled.end(), gen);
    const std::vector<int> str(shuffled.begin(), shuffled.begin() + 400), ste(shuffled.begin() + 400, shuffled.end());
    const double ones = std::count(ste.begin(), ste.end(), 1) / 200.0;
    const double majority = std::max(ones, 1.0 - ones);
    DownstreamOptions opts;
    opts.epochs = 5;
    const double acc = train_downstream(xtr, str, 2, opts).accuracy(xte, ste);
    CHECK(std::abs(acc - majority) <= 0.05 + 1e-12);
  }
  SUBCASE("fewer samples than a batch") {
    const Eigen::MatrixXd few = xtr.leftCols(20);
    const std::vector<int> yf(ytr.begin(), ytr.begin() + 20);
    const Classifier clf = train_downstream(few, yf, 1);
    CHECK(clf.accuracy(few, yf) >= 0.9);
  }
}

TEST_CASE("random subsets are sorted, distinct and seed-fixed") {
  const auto a = random_subset(1000, 100, 4);
  const auto b = random_subset(1000, 100, 4);
  CHECK(a == b);
  CHECK(a.size() == 100u);
  CHECK(std::is_sorted(a.begin(), a.end()));
  CHECK(std::adjacent_find(a.begin(), a.end()) == a.end());
  CHECK(random_subset(1000, 100, 5) != a);
}

TEST_CASE("grid dumps") {
  TrainState state = init_state(tiny_config(), 32 * 32);
  const auto& split = test_split();
  // give the prior a nontrivial graph
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(4, 4);
  w(0, 2) = 0.8;
  w(0, 3) = -0.5;
  w(1, 2) = 0.6;
  w(1, 3) = 0.4;
  state.prior.set_weights(w);

  SUBCASE("the unmodified coordinate reproduces the reconstruction tile") {
    TempDir d("recon");
    GridRequest req;
    req.dims = {1};
    req.grid = {0.0};
    req.image_index = 5;
    const GridResult first = dump_grids(state, &split, req, d.path);
    req.grid = {-1.0, first.base_latent[1], 1.0};
    const GridResult r = dump_grids(state, &split, req, d.path);
    CHECK(r.latents[0][1] == r.base_latent);
    write_pgm(d.path / "recon.pgm", state.generator.forward_one(r.base_latent), 32);
    CHECK(slurp(d.path / r.files[0][1]) == slurp(d.path / "recon.pgm"));
    CHECK(slurp(d.path / r.files[0][0]) != slurp(d.path / "recon.pgm"));
  }
  SUBCASE("intervening on an effect leaves the causes unchanged") {
    TempDir d("effect");
    GridRequest req;
    req.source = GridSource::kPriorSample;
    req.mode = GridMode::kIntervene;
    req.dims = {2, 3};
    req.grid = {-2.0, -1.0, 0.0, 1.0, 2.0};
    req.seed = 9;
    const GridResult r = dump_grids(state, nullptr, req, d.path);
    for (std::size_t row = 0; row < 2; ++row) {
      const int dim = req.dims[row];
      for (std::size_t c = 0; c < req.grid.size(); ++c) {
        const Eigen::VectorXd& z = r.latents[row][c];
        for (int i = 0; i < z.size(); ++i) {
          if (i == dim) continue;
          CHECK(z[i] == r.base_latent[i]);  // no descendants among the effects
        }
      }
    }
    // the logged latents match the returned ones
    const auto index = nlohmann::json::parse(slurp(d.path / "grid.json"));
    CHECK(index["mode"] == "intervene");
    CHECK(index["rows"][1]["dim"] == 4);
    CHECK(index["rows"][1]["latents"][4].get<std::vector<double>>() ==
          std::vector<double>(r.latents[1][4].data(), r.latents[1][4].data() + r.latents[1][4].size()));
  }
  SUBCASE("intervening on a cause moves only its descendants") {
    TempDir d("cause");
    GridRequest req;
    req.source = GridSource::kPriorSample;
    req.mode = GridMode::kIntervene;
    req.dims = {0};
    req.grid = {-1.0, 1.0};
    const GridResult r = dump_grids(state, nullptr, req, d.path);
    for (const auto& z : r.latents[0]) {
      CHECK(z[1] == r.base_latent[1]);
      for (int i = 4; i < z.size(); ++i) CHECK(z[i] == r.base_latent[i]);
    }
    CHECK(r.latents[0][0][2] != r.latents[0][1][2]);
  }
  SUBCASE("traverse and intervene coincide without edges") {
    state.prior.set_weights(Eigen::MatrixXd::Zero(4, 4));
    TempDir a("trav"), b("interv");
    GridRequest req;
    req.dims = {0, 1, 2, 3};
    req.grid = {-2.0, 0.0, 2.0};
    const GridResult t = dump_grids(state, &split, req, a.path);
    req.mode = GridMode::kIntervene;
    const GridResult v = dump_grids(state, &split, req, b.path);
    CHECK(t.latents == v.latents);
    for (std::size_t row = 0; row < t.files.size(); ++row)
      for (std::size_t c = 0; c < t.files[row].size(); ++c)
        CHECK(slurp(a.path / t.files[row][c]) == slurp(b.path / v.files[row][c]));
  }
  SUBCASE("bad dimensions are rejected") {
    TempDir d("bad");
    GridRequest req;
    req.grid = {0.0};
    req.dims = {8};
    CHECK_THROWS_AS(dump_grids(state, &split, req, d.path), OutOfRangeError);
    req.dims = {5};
    req.mode = GridMode::kIntervene;
    CHECK_THROWS_AS(dump_grids(state, &split, req, d.path), OutOfRangeError);
    req.dims = {0};
    req.mode = GridMode::kTraverse;
    req.image_index = 5000;
    CHECK_THROWS_AS(dump_grids(state, &split, req, d.path), OutOfRangeError);
  }
}

TEST_CASE("pgm output") {
  TempDir d("pgm");
  fs::create_directories(d.path);
  Eigen::VectorXd img(4);
  img << 0.0, 0.5, 1.0, 2.0;
  write_pgm(d.path / "t.pgm", img, 2);
  const std::string bytes = slurp(d.path / "t.pgm");
  const std::string header = "P5\n2 2\n255\n";
  REQUIRE(bytes.size() == header.size() + 4);
  CHECK(bytes.substr(0, header.size()) == header);
  CHECK(static_cast<unsigned char>(bytes[header.size()]) == 0);
  CHECK(static_cast<unsigned char>(bytes[header.size() + 2]) == 255);
  CHECK(static_cast<unsigned char>(bytes[header.size() + 3]) == 255);
}
