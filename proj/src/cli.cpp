#include "dear/cli.hpp"

#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "dear/config.hpp"
#include "dear/errors.hpp"
#include "dear/evaluation.hpp"
#include "dear/gradcheck.hpp"
#include "dear/pendulum.hpp"
#include "dear/trainer.hpp"
#include "json.hpp"

namespace dear::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Command {
  std::string name;
  std::string summary;
  std::function<int(const std::vector<std::string>&, std::ostream&)> handler;
};

struct UsageError : Error {
  using Error::Error;
};

// Parses args into app; returns true when --help was requested.
bool parse(CLI::App& app, const std::vector<std::string>& args, std::ostream& out) {
  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return true;
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }
  return false;
}

std::vector<double> parse_grid(const std::vector<double>& explicit_grid, double lo, double hi, int steps) {
  if (!explicit_grid.empty()) return explicit_grid;
  if (steps < 1) throw UsageError("--steps must be positive");
  std::vector<double> grid;
  for (int i = 0; i < steps; ++i)
    grid.push_back(steps == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(steps - 1));
  return grid;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

int cmd_gen_data(const std::vector<std::string>& args, std::ostream& out) {
  CLI::App app("Generate the Pendulum dataset", "dear gen-data");
  pendulum::DatasetMeta meta;
  std::string dir;
  app.option_defaults()->always_capture_default();
  app.add_option("--out", dir, "Output dataset directory")->required();
  app.add_option("--seed", meta.seed, "Dataset seed");
  app.add_option("--n_train,--n-train", meta.n_train, "Training samples");
  app.add_option("--n_val,--n-val", meta.n_val, "Validation samples");
  app.add_option("--n_test,--n-test", meta.n_test, "Test samples");
  app.add_option("--corruption_rate,--corruption-rate", meta.corruption_rate, "Fraction of samples with a random shadow");
  app.add_option("--noise_sigma,--noise-sigma", meta.noise_sigma, "Shadow noise std in normalized units");
  app.add_option("--spurious_correlation,--spurious-correlation", meta.spurious_correlation,
                 "When >= 0, the train background matches the corruption flag with this probability and "
                 "val/test backgrounds are fair coins");
  app.add_option("--spurious_seed,--spurious-seed", meta.spurious_seed, "Seed of the background assignment");
  if (parse(app, args, out)) return 0;

  const pendulum::Dataset ds = pendulum::generate_dataset(meta);
  pendulum::save_dataset(ds, dir);
  out << "wrote " << ds.train.size() << '/' << ds.val.size() << '/' << ds.test.size() << " samples to " << dir << '\n';
  return 0;
}

int cmd_train(const std::vector<std::string>& args, std::ostream& out) {
  CLI::App app("Train DEAR on a Pendulum dataset", "dear train");
  RunConfig config;
  ListOptions edges;
  std::string resume;
  bool quiet = false;
  add_run_options(app, config, edges);
  app.add_option("--resume", resume, "Continue from a checkpoint (its config is kept)");
  app.add_flag("--quiet", quiet, "Suppress per-epoch log lines");
  if (parse(app, args, out)) return 0;
  try {
    finalize_run_config(config, edges);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  if (config.data_dir.empty()) throw UsageError("train requires --data_dir");
  if (config.out_dir.empty()) throw UsageError("train requires --out_dir");

  const pendulum::Dataset ds = pendulum::load_dataset(config.data_dir);
  TrainState state = resume.empty() ? init_state(config.train, static_cast<int>(ds.train.pixels()))
                                    : load_checkpoint(resume);
  if (!resume.empty()) config.train = state.config;
  write_resolved_config(config, config.out_dir);

  TrainOptions options;
  options.out_dir = fs::path(config.out_dir);
  if (!quiet) {
    options.on_epoch = [&out](const EpochMetrics& m) {
      out << "epoch " << m.epoch << " step " << m.step << " disc_loss " << m.disc_loss << " sup_loss " << m.sup_loss
          << " val_sup_loss " << m.val_sup_loss << " val_spearman " << m.val_mean_abs_spearman << '\n';
    };
  }
  train(state, ds.train, ds.val, options);
  out << "finished " << state.epoch << " epochs; checkpoint in " << config.out_dir << '\n';
  return 0;
}

int cmd_grid(const std::vector<std::string>& args, std::ostream& out, GridMode mode) {
  const bool traverse_mode = mode == GridMode::kTraverse;
  CLI::App app(traverse_mode ? "Decode latent traversals" : "Decode interventions on the SCM prior",
               traverse_mode ? "dear traverse" : "dear intervene");
  std::string checkpoint, data_dir, out_dir, source = "test";
  std::vector<int> dims;
  std::vector<double> grid;
  double lo = -2.0, hi = 2.0;
  int steps = 7;
  GridRequest request;
  request.mode = mode;
  app.option_defaults()->always_capture_default();
  app.add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
  app.add_option("--data_dir,--data-dir", data_dir, "Dataset directory (needed for --source test)");
  app.add_option("--out", out_dir, "Output directory for PGM tiles and grid.json")->required();
  app.add_option("--source", source, "Base latent: test (encoded test image) or prior (prior sample)")
      ->check(CLI::IsMember({"test", "prior"}));
  app.add_option("--image_index,--image-index", request.image_index, "Test image index");
  app.add_option("--seed", request.seed, "Noise seed for --source prior");
  app.add_option("--dims", dims, "Latent dimensions, 1-based (default: all causal dimensions)");
  app.add_option("--grid", grid, "Explicit grid values (overrides --min/--max/--steps)");
  app.add_option("--min", lo, "Grid start");
  app.add_option("--max", hi, "Grid end");
  app.add_option("--steps", steps, "Grid size");
  if (parse(app, args, out)) return 0;

  const TrainState state = load_checkpoint(checkpoint);
  request.source = source == "test" ? GridSource::kTestImage : GridSource::kPriorSample;
  request.grid = parse_grid(grid, lo, hi, steps);
  if (dims.empty())
    for (int d = 1; d <= state.prior.m(); ++d) dims.push_back(d);
  for (int d : dims) request.dims.push_back(d - 1);

  std::optional<pendulum::Dataset> ds;
  if (request.source == GridSource::kTestImage) {
    if (data_dir.empty()) throw UsageError("--source test requires --data_dir");
    ds = pendulum::load_dataset(data_dir);
  }
  const GridResult result = dump_grids(state, ds ? &ds->test : nullptr, request, out_dir);
  out << "wrote " << result.latents.size() << " rows of " << request.grid.size() << " tiles to " << out_dir << '\n';
  return 0;
}

int cmd_eval_disent(const std::vector<std::string>& args, std::ostream& out) {
  CLI::App app("Score disentanglement of a trained encoder", "dear eval-disent");
  std::string checkpoint, data_dir, out_dir, split_name = "test";
  app.option_defaults()->always_capture_default();
  app.add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
  app.add_option("--data_dir,--data-dir", data_dir, "Dataset directory")->required();
  app.add_option("--split", split_name, "Split to score")->check(CLI::IsMember({"train", "val", "test"}));
  app.add_option("--out", out_dir, "Directory for report.json");
  if (parse(app, args, out)) return 0;

  const TrainState state = load_checkpoint(checkpoint);
  const pendulum::Dataset ds = pendulum::load_dataset(data_dir);
  const pendulum::Split& split = split_name == "train" ? ds.train : split_name == "val" ? ds.val : ds.test;
  const Eigen::MatrixXd codes = encode(state.encoder, split.images);
  const DisentReport report = disent_report(codes, split.factors);
  std::vector<int> clean;
  for (int i = 0; i < split.size(); ++i)
    if (split.tau[i] == 0) clean.push_back(i);
  const auto mae = factor_mae(codes, split.factors, clean);

  static const char* names[] = {"theta_p", "theta_l", "shadow_len", "shadow_pos"};
  out << "factor,abs_spearman,mae_uncorrupted\n";
  for (std::size_t i = 0; i < report.abs_spearman.size(); ++i)
    out << (i < 4 ? names[i] : std::to_string(i + 1)) << ',' << report.abs_spearman[i] << ',' << mae[i] << '\n';
  out << "mean," << report.mean << ",\n";
  const Eigen::MatrixXd& a = state.prior.adjacency().weights;
  out << "adjacency (row = parent, column = child):\n";
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) out << (j ? " " : "") << a(i, j);
    out << '\n';
  }
  if (!out_dir.empty()) {
    json j;
    j["split"] = split_name;
    j["abs_spearman"] = report.abs_spearman;
    j["mean_abs_spearman"] = report.mean;
    j["mae_uncorrupted"] = mae;
    j["adjacency"] = json::array();
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      std::vector<double> row(a.cols());
      for (Eigen::Index c = 0; c < a.cols(); ++c) row[c] = a(i, c);
      j["adjacency"].push_back(row);
    }
    write_text(fs::path(out_dir) / "report.json", j.dump(2) + '\n');
  }
  return 0;
}

DownstreamOptions downstream_options(CLI::App& app, DownstreamOptions& o) {
  app.add_option("--clf_hidden,--clf-hidden", o.hidden, "Classifier hidden width");
  app.add_option("--clf_lr,--clf-lr", o.lr, "Classifier Adam learning rate");
  app.add_option("--clf_epochs,--clf-epochs", o.epochs, "Classifier epochs");
  app.add_option("--clf_min_steps,--clf-min-steps", o.min_steps, "Minimum classifier updates");
  return o;
}

int cmd_downstream(const std::vector<std::string>& args, std::ostream& out) {
  CLI::App app("Sample-efficiency comparison of DEAR codes and raw pixels", "dear downstream");
  std::string checkpoint, data_dir, out_dir;
  int small_n = 100;
  std::uint64_t seed = 0;
  DownstreamOptions opts;
  app.option_defaults()->always_capture_default();
  app.add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
  app.add_option("--data_dir,--data-dir", data_dir, "Dataset directory")->required();
  app.add_option("--out", out_dir, "Directory for efficiency.csv and report.json");
  app.add_option("--small_n,--small-n", small_n, "Size of the small training subset");
  app.add_option("--seed", seed, "Subset and classifier seed");
  downstream_options(app, opts);
  if (parse(app, args, out)) return 0;

  const TrainState state = load_checkpoint(checkpoint);
  const pendulum::Dataset ds = pendulum::load_dataset(data_dir);
  const auto rows = efficiency_experiment(state.encoder, state.prior.m(), ds.train, ds.test, small_n, seed, opts);
  std::ostringstream csv;
  csv << "representation,acc_" << small_n << ",acc_all,efficiency\n";
  for (const auto& r : rows) csv << r.representation << ',' << r.acc_small << ',' << r.acc_full << ',' << r.efficiency << '\n';
  out << csv.str();
  if (!out_dir.empty()) {
    write_text(fs::path(out_dir) / "efficiency.csv", csv.str());
    json j = json::array();
    for (const auto& r : rows)
      j.push_back({{"representation", r.representation}, {"acc_small", r.acc_small}, {"acc_all", r.acc_full},
                   {"efficiency", r.efficiency}, {"small_n", small_n}});
    write_text(fs::path(out_dir) / "report.json", json{{"downstream", j}}.dump(2) + '\n');
  }
  return 0;
}

int cmd_robustness(const std::vector<std::string>& args, std::ostream& out) {
  CLI::App app("Worst-group accuracy of DEAR codes and raw pixels under a spurious background",
               "dear robustness");
  std::string checkpoint, data_dir, out_dir;
  std::uint64_t seed = 0;
  DownstreamOptions opts;
  app.option_defaults()->always_capture_default();
  app.add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
  app.add_option("--data_dir,--data-dir", data_dir, "Dataset generated with --spurious_correlation")->required();
  app.add_option("--out", out_dir, "Directory for robustness.csv and report.json");
  app.add_option("--seed", seed, "Classifier seed");
  downstream_options(app, opts);
  if (parse(app, args, out)) return 0;

  const TrainState state = load_checkpoint(checkpoint);
  const pendulum::Dataset ds = pendulum::load_dataset(data_dir);
  if (ds.meta.spurious_correlation < 0.0) throw DatasetError("dataset carries no spurious background");
  const auto rows = robustness_experiment(state.encoder, state.prior.m(), ds.train, ds.test, seed, opts);
  std::ostringstream csv;
  csv << "representation,worst_group_acc,average_acc,acc_tau0_dark,acc_tau0_light,acc_tau1_dark,acc_tau1_light\n";
  for (const auto& r : rows) {
    const auto& g = r.groups;
    csv << r.representation << ',' << 100.0 * g.worst << ',' << 100.0 * g.average << ',' << 100.0 * g.cells[0][0] << ','
        << 100.0 * g.cells[0][1] << ',' << 100.0 * g.cells[1][0] << ',' << 100.0 * g.cells[1][1] << '\n';
  }
  out << csv.str();
  if (!out_dir.empty()) {
    write_text(fs::path(out_dir) / "robustness.csv", csv.str());
    json j = json::array();
    for (const auto& r : rows)
      j.push_back({{"representation", r.representation}, {"worst", r.groups.worst}, {"average", r.groups.average},
                   {"cells", r.groups.cells}, {"counts", r.groups.counts}});
    write_text(fs::path(out_dir) / "report.json", json{{"robustness", j}}.dump(2) + '\n');
  }
  return 0;
}

int cmd_gradcheck(const std::vector<std::string>& args, std::ostream& out) {
  CLI::App app("Check the gradient estimators against the closed-form linear-Gaussian KL", "dear gradcheck");
  long samples = 1000000;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string out_file;
  app.option_defaults()->always_capture_default();
  app.add_option("--samples", samples, "Monte-Carlo samples per seed (>= 10000)");
  app.add_option("--seeds", seeds, "Seeds averaged in the estimate");
  app.add_option("--out", out_file, "Also write the CSV table to this file");
  if (parse(app, args, out)) return 0;

  const auto rows = gradcheck::gradcheck_table(gradcheck::LinGaussSpec::reference(), samples, seeds);
  std::ostringstream csv;
  gradcheck::write_csv(csv, rows);
  out << csv.str();
  if (!out_file.empty()) write_text(out_file, csv.str());
  const bool all = std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.pass; });
  return all ? 0 : 2;
}

const std::vector<Command>& commands() {
  static const std::vector<Command> list = {
      {"gen-data", "Generate the Pendulum dataset", cmd_gen_data},
      {"train", "Train DEAR", cmd_train},
      {"traverse", "Decode latent traversals of a trained model",
       [](const auto& a, auto& o) { return cmd_grid(a, o, GridMode::kTraverse); }},
      {"intervene", "Decode interventions on the learned SCM prior",
       [](const auto& a, auto& o) { return cmd_grid(a, o, GridMode::kIntervene); }},
      {"eval-disent", "Per-factor |Spearman| and MAE of a trained encoder", cmd_eval_disent},
      {"downstream", "Sample-efficiency table for DEAR codes vs raw pixels", cmd_downstream},
      {"robustness", "Worst-group accuracy table under a spurious background", cmd_robustness},
      {"gradcheck", "Monte-Carlo gradient estimators vs finite differences of the closed-form KL", cmd_gradcheck},
  };
  return list;
}

void usage(std::ostream& os) {
  os << "Usage: dear <command> [options]\n\nCommands:\n";
  for (const auto& c : commands()) os << "  " << std::left << std::setw(13) << c.name << c.summary << '\n';
  os << "\nRun 'dear <command> --help' for the options of a command.\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (args.empty()) {
    usage(err);
    return 1;
  }
  if (args[0] == "--help" || args[0] == "-h" || args[0] == "help") {
    usage(out);
    return 0;
  }
  const auto& list = commands();
  const auto it = std::find_if(list.begin(), list.end(), [&](const Command& c) { return c.name == args[0]; });
  if (it == list.end()) {
    err << "unknown command '" << args[0] << "'; valid commands:";
    for (const auto& c : list) err << ' ' << c.name;
    err << '\n';
    return 1;
  }
  try {
    return it->handler(std::vector<std::string>(args.begin() + 1, args.end()), out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\nRun 'dear " << it->name << " --help' for usage.\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace dear::cli
