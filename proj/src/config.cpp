#include "dear/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "CLI11.hpp"
#include "dear/errors.hpp"

namespace dear {

namespace {

std::string number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, res.ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + '"';
}

// Splits on commas after dropping brackets and blanks; empty items are skipped.
std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::string cur;
  for (char c : text) {
    if (c == '[' || c == ']' || c == ' ' || c == '\t' || c == '"') continue;
    if (c == ',') {
      if (!cur.empty()) items.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) items.push_back(cur);
  return items;
}

int parse_int(std::string_view text, const char* key) {
  int v = 0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || p != text.data() + text.size())
    throw ConfigError(std::string(key) + ": '" + std::string(text) + "' is not an integer");
  return v;
}

}  // namespace

std::vector<std::pair<int, int>> parse_edges(const std::vector<std::string>& tokens) {
  // Tokens arrive either as "i->j" strings or as a flattened nested array
  // ([[1,3],[1,4]] reaches us as "1", "3", "1", "4").
  std::string joined;
  for (const auto& t : tokens) joined += t + ",";
  std::vector<std::pair<int, int>> edges;
  if (joined.find("->") != std::string::npos) {
    for (const auto& item : split_list(joined)) {
      const auto arrow = item.find("->");
      if (arrow == std::string::npos) throw ConfigError("edge '" + item + "' is not of the form i->j");
      edges.emplace_back(parse_int(item.substr(0, arrow), "edges"), parse_int(item.substr(arrow + 2), "edges"));
    }
    return edges;
  }
  const auto items = split_list(joined);
  if (items.size() % 2 != 0) throw ConfigError("edges must be pairs [parent, child]");
  for (std::size_t i = 0; i < items.size(); i += 2)
    edges.emplace_back(parse_int(items[i], "edges"), parse_int(items[i + 1], "edges"));
  return edges;
}

std::vector<int> parse_order(const std::vector<std::string>& tokens) {
  std::string joined;
  for (const auto& t : tokens) joined += t + ",";
  std::vector<int> order;
  for (const auto& item : split_list(joined)) order.push_back(parse_int(item, "causal_order"));
  return order;
}

std::string format_edge(const std::pair<int, int>& edge) {
  return std::to_string(edge.first) + "," + std::to_string(edge.second);
}

void add_run_options(CLI::App& app, RunConfig& c, ListOptions& lists) {
  auto& t = c.train;
  app.set_config("--config", "", "TOML config file with flat keys named like the flags");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.option_defaults()->always_capture_default();

  app.add_option("--data_dir,--data-dir", c.data_dir, "Dataset directory written by gen-data");
  app.add_option("--out_dir,--out-dir,--out", c.out_dir, "Output directory");
  app.add_option("--tag", c.tag, "Experiment tag recorded in the resolved config");

  app.add_option("--lr_d,--lr-d", t.lr_d, "Discriminator learning rate");
  app.add_option("--lr_eg,--lr-eg", t.lr_eg, "Encoder and generator learning rate");
  app.add_option("--lr_prior_f,--lr-prior-f", t.lr_prior_f, "Learning rate of the prior transform f");
  app.add_option("--lr_a,--lr-a", t.lr_a, "Learning rate of the adjacency weights A");
  app.add_option("--batch_size,--batch-size", t.batch_size, "Minibatch size");
  app.add_option("--lambda", t.lambda, "Supervised regularizer coefficient");
  app.add_option("--d_steps,--d-steps", t.d_steps, "Discriminator updates per joint update");
  app.add_option("--epochs", t.epochs, "Training epochs");
  app.add_option("--label_fraction,--label-fraction", t.label_fraction, "Fraction of training samples with labels");
  app.add_option("--clamp_c,--clamp-c", t.clamp_c, "Clamp on D inside the scaling factor exp(D)");
  app.add_option("--seed", t.seed, "Random seed");
  app.add_option("--prior_mode,--prior-mode", t.prior_mode, "Latent prior: scm or independent")
      ->transform(CLI::CheckedTransformer(std::map<std::string, PriorMode>{{"scm", PriorMode::kScm},
                                                                           {"independent", PriorMode::kIndependent}}))
      ->default_str(to_string(t.prior_mode));
  app.add_option("--f_mode,--f-mode", t.f_mode, "Prior transform f: linear or pwl")
      ->transform(CLI::CheckedTransformer(std::map<std::string, TransformMode>{{"linear", TransformMode::kLinear},
                                                                               {"pwl", TransformMode::kPiecewise}}))
      ->default_str(to_string(t.f_mode));
  app.add_option("--sup_kind,--sup-kind", t.sup_kind, "Supervised loss: ce or l2")
      ->transform(CLI::CheckedTransformer(std::map<std::string, SupLossKind>{{"ce", SupLossKind::kCrossEntropy},
                                                                             {"l2", SupLossKind::kSquaredError}}))
      ->default_str(to_string(t.sup_kind));
  app.add_option("--k", t.k, "Latent dimension");
  app.add_option("--m", t.m, "Number of causal latent dimensions");
  app.add_option("--pwl_knots,--pwl-knots", t.pwl_knots, "Knots per dimension of the piecewise-linear f");
  app.add_option("--hidden", t.hidden, "Hidden width of encoder, generator and discriminator");
  app.add_option("--encoder_noise,--encoder-noise", t.encoder_noise, "Std of the stochastic encoder reading");
  lists.edges.clear();
  for (const auto& e : t.edges) lists.edges.push_back(format_edge(e));
  lists.causal_order.clear();
  app.add_option("--edges", lists.edges,
                 "Super-graph edges over causal factors, 1-based: 1,3 2,4 on the command line, "
                 "[[1,3],[2,4]] in a config file")
      ->expected(0, CLI::detail::expected_max_vector_size)
      ->default_str("[[1,3],[1,4],[2,3],[2,4]]");
  app.add_option("--causal_order,--causal-order", lists.causal_order,
                 "Causal order (1-based); when given, the super-graph is the full graph consistent with it")
      ->expected(0, CLI::detail::expected_max_vector_size)
      ->default_str("[]");
}

void finalize_run_config(RunConfig& config, const ListOptions& lists) {
  config.train.edges = parse_edges(lists.edges);
  config.train.causal_order = parse_order(lists.causal_order);
  try {
    config.train.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  RunConfig config;
  ListOptions edges;
  CLI::App app("config");
  add_run_options(app, config, edges);
  if (!path.empty() && !std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  std::vector<std::string> args;
  if (!path.empty()) args = {"--config", path.string()};
  args.insert(args.end(), overrides.begin(), overrides.end());
  std::reverse(args.begin(), args.end());  // CLI11 consumes the vector from the back
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    throw ConfigError(e.what());
  }
  finalize_run_config(config, edges);
  return config;
}

std::string to_toml(const RunConfig& c) {
  const auto& t = c.train;
  std::ostringstream out;
  out << "data_dir = " << quoted(c.data_dir) << '\n';
  out << "out_dir = " << quoted(c.out_dir) << '\n';
  out << "tag = " << quoted(c.tag) << '\n';
  out << "lr_d = " << number(t.lr_d) << '\n';
  out << "lr_eg = " << number(t.lr_eg) << '\n';
  out << "lr_prior_f = " << number(t.lr_prior_f) << '\n';
  out << "lr_a = " << number(t.lr_a) << '\n';
  out << "batch_size = " << t.batch_size << '\n';
  out << "lambda = " << number(t.lambda) << '\n';
  out << "d_steps = " << t.d_steps << '\n';
  out << "epochs = " << t.epochs << '\n';
  out << "label_fraction = " << number(t.label_fraction) << '\n';
  out << "clamp_c = " << number(t.clamp_c) << '\n';
  out << "seed = " << t.seed << '\n';
  out << "prior_mode = " << quoted(to_string(t.prior_mode)) << '\n';
  out << "f_mode = " << quoted(to_string(t.f_mode)) << '\n';
  out << "sup_kind = " << quoted(to_string(t.sup_kind)) << '\n';
  out << "k = " << t.k << '\n';
  out << "m = " << t.m << '\n';
  out << "pwl_knots = " << t.pwl_knots << '\n';
  out << "hidden = " << t.hidden << '\n';
  out << "encoder_noise = " << number(t.encoder_noise) << '\n';
  out << "edges = [";
  for (std::size_t i = 0; i < t.edges.size(); ++i) out << (i ? ", " : "") << '[' << format_edge(t.edges[i]) << ']';
  out << "]\n";
  out << "causal_order = [";
  for (std::size_t i = 0; i < t.causal_order.size(); ++i) out << (i ? ", " : "") << t.causal_order[i];
  out << "]\n";
  return out.str();
}

void write_resolved_config(const RunConfig& config, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream out(out_dir / "config.resolved.toml", std::ios::binary);
  if (!out) throw Error("cannot write resolved config under " + out_dir.string());
  out << to_toml(config);
}

}  // namespace dear
