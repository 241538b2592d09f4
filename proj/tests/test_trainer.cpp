#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "dear/errors.hpp"
#include "dear/gradcheck.hpp"
#include "dear/trainer.hpp"
#include "doctest.h"

using namespace dear;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("dear_trainer_" + name)) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

const pendulum::Dataset& tiny_data() {
  static const pendulum::Dataset ds = [] {
    pendulum::DatasetMeta m;
    m.n_train = 96;
    m.n_val = 40;
    m.n_test = 8;
    m.image_size = 8;
    m.seed = 5;
    return pendulum::make_dataset(m);
  }();
  return ds;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.hidden = 12;
  c.batch_size = 32;
  c.epochs = 2;
  c.seed = 4;
  c.lr_eg = 1e-3;
  return c;
}

TrainState tiny_state(const TrainConfig& c) { return init_state(c, 64); }

Eigen::MatrixXd batch_images(int n) { return tiny_data().train.images.leftCols(n); }
Eigen::MatrixXd batch_labels(int n) { return tiny_data().train.factors.leftCols(n); }

}  // namespace

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  auto rejects = [](auto mutate) {
    TrainConfig bad;
    mutate(bad);
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  };
  rejects([](TrainConfig& t) { t.lr_d = 0.0; });
  rejects([](TrainConfig& t) { t.lr_a = -1.0; });
  rejects([](TrainConfig& t) { t.lambda = -0.5; });
  rejects([](TrainConfig& t) { t.label_fraction = 0.0; });
  rejects([](TrainConfig& t) { t.label_fraction = 1.5; });
  rejects([](TrainConfig& t) { t.m = 9; });
  rejects([](TrainConfig& t) { t.edges = {{1, 3}, {3, 1}}; });
  rejects([](TrainConfig& t) { t.causal_order = {1, 2, 3}; });
  CHECK_THROWS_AS(prior_mode_from_string("causal"), ConfigError);
  CHECK(transform_mode_from_string("pwl") == TransformMode::kPiecewise);
  CHECK(sup_kind_from_string("l2") == SupLossKind::kSquaredError);
}

TEST_CASE("config masks") {
  TrainConfig c;
  const GraphMask truth = config_mask(c);
  CHECK(truth.edge(0, 2));
  CHECK(truth.edge(1, 3));
  CHECK_FALSE(truth.edge(0, 1));
  CHECK_FALSE(truth.edge(2, 3));
  c.causal_order = {1, 2, 3, 4};
  const GraphMask full = config_mask(c);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(full.edge(i, j) == (i < j));
  c.prior_mode = PriorMode::kIndependent;
  const GraphMask none = config_mask(c);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK_FALSE(none.edge(i, j));
}

TEST_CASE("initial adjacency is small and respects the mask") {
  TrainConfig c;
  c.hidden = 8;
  c.causal_order = {1, 2, 3, 4};
  const TrainState s = init_state(c, 64);
  const Eigen::MatrixXd& w = s.prior.adjacency().weights;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      if (i < j) {
        CHECK(std::abs(w(i, j)) <= 0.1);
        CHECK(w(i, j) != 0.0);
      } else {
        CHECK(w(i, j) == 0.0);
      }
    }
}

TEST_CASE("labelled subset has floor(fraction * n) members") {
  for (int n : {96, 1000, 6724}) {
    const auto a = labeled_subset(n, 0.1, 3);
    CHECK(std::count(a.begin(), a.end(), true) == n / 10);
    CHECK(labeled_subset(n, 0.1, 3) == a);
  }
  const auto all = labeled_subset(50, 1.0, 0);
  CHECK(std::count(all.begin(), all.end(), true) == 50);
}

TEST_CASE("one step is deterministic") {
  TrainState a = tiny_state(tiny_config());
  TrainState b = tiny_state(tiny_config());
  const auto x = batch_images(32);
  const auto y = batch_labels(20);
  const StepMetrics ma = train_step(a, x, y);
  const StepMetrics mb = train_step(b, x, y);
  CHECK(ma.disc_loss == mb.disc_loss);
  CHECK(ma.sup_loss == mb.sup_loss);
  CHECK(serialize_checkpoint(a) == serialize_checkpoint(b));
  CHECK(a.step == 1);
  CHECK_THROWS_AS(train_step(a, Eigen::MatrixXd(64, 0), Eigen::MatrixXd(4, 0)), ArityError);
}

TEST_CASE("a constant frozen discriminator with no supervision moves nothing") {
  TrainConfig c = tiny_config();
  c.d_steps = 0;
  c.lambda = 0.0;
  TrainState s = tiny_state(c);
  s.discriminator.set_parameters(Eigen::VectorXd::Zero(s.discriminator.parameters().size()));
  const Eigen::VectorXd theta = s.generator.parameters();
  const Eigen::VectorXd phi = s.encoder.parameters();
  const Eigen::MatrixXd a = s.prior.adjacency().weights;
  const Eigen::VectorXd f = s.prior.transform().parameters();
  train_step(s, batch_images(32), batch_labels(32));
  CHECK(s.generator.parameters() == theta);
  CHECK(s.encoder.parameters() == phi);
  CHECK(s.prior.adjacency().weights == a);
  CHECK(s.prior.transform().parameters() == f);
}

TEST_CASE("independent prior keeps A at zero and masks hold after every step") {
  for (bool independent : {true, false}) {
    TrainConfig c = tiny_config();
    if (independent) c.prior_mode = PriorMode::kIndependent;
    TrainState s = tiny_state(c);
    const GraphMask mask = config_mask(c);
    for (int step = 0; step < 10; ++step) {
      train_step(s, batch_images(32), batch_labels(32));
      const Eigen::MatrixXd& w = s.prior.adjacency().weights;
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
          if (!mask.edge(i, j)) CHECK(w(i, j) == 0.0);
      if (independent) CHECK(w.isZero(0.0));
    }
  }
}

TEST_CASE("zero epochs writes the initial state") {
  TempDir d("zero");
  TrainConfig c = tiny_config();
  c.epochs = 0;
  TrainState s = tiny_state(c);
  const std::string init = serialize_checkpoint(s);
  train(s, tiny_data().train, tiny_data().val, {.out_dir = d.path});
  CHECK(slurp(d.path / "checkpoint_final.bin") == init);
  CHECK(s.history.empty());
}

TEST_CASE("training runs the expected number of steps and is reproducible") {
  TempDir a("run_a"), b("run_b");
  TrainState sa = tiny_state(tiny_config());
  TrainState sb = tiny_state(tiny_config());
  int calls = 0;
  TrainOptions oa{.out_dir = a.path};
  oa.on_epoch = [&](const EpochMetrics&) { ++calls; };
  train(sa, tiny_data().train, tiny_data().val, oa);
  train(sb, tiny_data().train, tiny_data().val, {.out_dir = b.path});
  CHECK(calls == 2);
  CHECK(sa.step == 2 * 3);  // ceil(96 / 32) per epoch
  CHECK(sa.history.size() == 2u);
  CHECK(slurp(a.path / "metrics.csv") == slurp(b.path / "metrics.csv"));
  CHECK(slurp(a.path / "checkpoint_final.bin") == slurp(b.path / "checkpoint_final.bin"));
  const std::string header = "epoch,step,disc_loss,d_real_mean,d_fake_mean,sup_loss,val_sup_loss,val_mean_abs_spearman\n";
  CHECK(slurp(a.path / "metrics.csv").rfind(header, 0) == 0);
}

TEST_CASE("resuming reproduces the uninterrupted run") {
  TrainConfig c = tiny_config();
  c.epochs = 3;
  TrainState full = tiny_state(c);
  train(full, tiny_data().train, tiny_data().val);

  TempDir d("resume");
  TrainState part = tiny_state(c);
  TrainOptions stop{.out_dir = d.path};
  stop.stop_after_epochs = 2;
  train(part, tiny_data().train, tiny_data().val, stop);
  REQUIRE(part.epoch == 2);
  TrainState resumed = load_checkpoint(d.path / "checkpoint_latest.bin");
  train(resumed, tiny_data().train, tiny_data().val);
  REQUIRE(resumed.history.size() == 3u);
  CHECK(resumed.history[2] == full.history[2]);
  CHECK(serialize_checkpoint(resumed) == serialize_checkpoint(full));
}

TEST_CASE("checkpoint roundtrip") {
  TrainState s = tiny_state(tiny_config());
  train_step(s, batch_images(32), batch_labels(32));
  s.epoch = 1;
  s.history.push_back({1, 1, 0.5, 0.1, -0.1, 0.2, 0.3, 0.4});
  TempDir d("ckpt");
  fs::create_directories(d.path);
  save_checkpoint(s, d.path / "a.bin");
  const TrainState r = load_checkpoint(d.path / "a.bin");
  CHECK(r.config == s.config);
  CHECK(r.encoder.parameters() == s.encoder.parameters());
  CHECK(r.generator.parameters() == s.generator.parameters());
  CHECK(r.discriminator.parameters() == s.discriminator.parameters());
  CHECK(r.prior.adjacency().weights == s.prior.adjacency().weights);
  CHECK(r.prior.transform().parameters() == s.prior.transform().parameters());
  CHECK(r.adam_d.first_moment == s.adam_d.first_moment);
  CHECK(r.adam_a.second_moment == s.adam_a.second_moment);
  CHECK(r.adam_e.step == s.adam_e.step);
  CHECK(r.epoch == 1);
  CHECK(r.step == s.step);
  CHECK(r.history == s.history);
  // the RNG stream continues where it left off
  Rng a = s.rng, b = r.rng;
  CHECK(a.next() == b.next());
  save_checkpoint(r, d.path / "b.bin");
  CHECK(slurp(d.path / "a.bin") == slurp(d.path / "b.bin"));
}

TEST_CASE("checkpoint corruption is reported with distinct codes") {
  const TrainState s = tiny_state(tiny_config());
  const std::string good = serialize_checkpoint(s);
  auto code_of = [](const std::string& bytes) {
    try {
      deserialize_checkpoint(bytes);
    } catch (const CheckpointError& e) {
      return e.code();
    }
    FAIL("corrupted checkpoint was accepted");
    return CheckpointErrorCode::kIo;
  };

  std::string bad = good;
  bad[0] = 'X';
  CHECK(code_of(bad) == CheckpointErrorCode::kBadMagic);

  bad = good;
  bad[4] = static_cast<char>(bad[4] + 1);
  CHECK(code_of(bad) == CheckpointErrorCode::kVersionMismatch);

  // header length field at offset 8
  bad = good;
  std::uint64_t len = 0;
  std::memcpy(&len, bad.data() + 8, 8);
  len += 1u << 30;
  std::memcpy(bad.data() + 8, &len, 8);
  CHECK(code_of(bad) == CheckpointErrorCode::kTruncated);

  CHECK(code_of(good.substr(0, good.size() - 100)) == CheckpointErrorCode::kTruncated);
  CHECK(code_of(good.substr(0, 6)) == CheckpointErrorCode::kTruncated);

  bad = good;
  bad[bad.size() - 20] ^= 0x01;
  CHECK(code_of(bad) == CheckpointErrorCode::kChecksum);

  CHECK_THROWS_AS(load_checkpoint(fs::temp_directory_path() / "dear_no_such_checkpoint.bin"), CheckpointError);
}

TEST_CASE("linear-Gaussian smoke run lowers the closed-form KL") {
  using namespace dear::gradcheck;
  const LinGaussSpec start = LinGaussSpec::reference();
  LinGaussModel model = to_model(start);
  const Eigen::Matrix2d lx = start.sigma_x.llt().matrixL();
  EstimatorOptions opts;
  opts.lambda = 0.0;
  opts.encoder_noise = start.sigma_e;
  opts.generator_noise = start.sigma_g;
  Rng rng(21, 0);
  const int n = 512;
  const double lr = 0.02;
  const double kl0 = kl_of(start);
  double kl = kl0;
  int increases = 0;
  for (int step = 0; step < 200; ++step) {
    const LinGaussSpec cur = from_model(start, model);
    const Critic critic = quadratic_critic(optimal_disc(cur));
    Eigen::MatrixXd x(2, n), eps(2, n);
    for (int c = 0; c < n; ++c) {
      x.col(c) = cur.mu_x + lx * Eigen::Vector2d(rng.normal(), rng.normal());
      eps.col(c) = Eigen::Vector2d(rng.normal(), rng.normal());
    }
    const auto g = estimate_grads(model.encoder, model.generator, model.prior, critic, {x, eps, Eigen::MatrixXd(2, 0)},
                                  opts, &rng);
    model.encoder.set_parameters(model.encoder.parameters() - lr * g.phi);
    model.generator.set_parameters(model.generator.parameters() - lr * g.theta);
    Eigen::MatrixXd w = model.prior.adjacency().weights;
    w -= lr * g.beta.adjacency;
    model.prior.set_weights(w);
    const double next = kl_of(from_model(start, model));
    increases += next > kl;
    kl = next;
  }
  MESSAGE("KL ", kl0, " -> ", kl);
  CHECK(kl < 0.5 * kl0);
  CHECK(increases < 100);
}
