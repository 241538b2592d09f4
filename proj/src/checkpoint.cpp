#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dear/errors.hpp"
#include "dear/trainer.hpp"
#include "json.hpp"

namespace dear {

namespace {

using nlohmann::json;
static_assert(std::endian::native == std::endian::little, "checkpoint tensors are written little-endian");

constexpr char kMagic[4] = {'D', 'E', 'A', 'R'};

json config_to_json(const TrainConfig& c) {
  json j;
  j["lr_d"] = c.lr_d;
  j["lr_eg"] = c.lr_eg;
  j["lr_prior_f"] = c.lr_prior_f;
  j["lr_a"] = c.lr_a;
  j["batch_size"] = c.batch_size;
  j["lambda"] = c.lambda;
  j["d_steps"] = c.d_steps;
  j["epochs"] = c.epochs;
  j["label_fraction"] = c.label_fraction;
  j["clamp_c"] = c.clamp_c;
  j["seed"] = c.seed;
  j["prior_mode"] = to_string(c.prior_mode);
  j["f_mode"] = to_string(c.f_mode);
  j["sup_kind"] = to_string(c.sup_kind);
  j["k"] = c.k;
  j["m"] = c.m;
  j["pwl_knots"] = c.pwl_knots;
  j["hidden"] = c.hidden;
  j["encoder_noise"] = c.encoder_noise;
  j["edges"] = c.edges;
  j["causal_order"] = c.causal_order;
  return j;
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.lr_d = j.at("lr_d");
  c.lr_eg = j.at("lr_eg");
  c.lr_prior_f = j.at("lr_prior_f");
  c.lr_a = j.at("lr_a");
  c.batch_size = j.at("batch_size");
  c.lambda = j.at("lambda");
  c.d_steps = j.at("d_steps");
  c.epochs = j.at("epochs");
  c.label_fraction = j.at("label_fraction");
  c.clamp_c = j.at("clamp_c");
  c.seed = j.at("seed");
  c.prior_mode = prior_mode_from_string(j.at("prior_mode"));
  c.f_mode = transform_mode_from_string(j.at("f_mode"));
  c.sup_kind = sup_kind_from_string(j.at("sup_kind"));
  c.k = j.at("k");
  c.m = j.at("m");
  c.pwl_knots = j.at("pwl_knots");
  c.hidden = j.at("hidden");
  c.encoder_noise = j.at("encoder_noise");
  c.edges = j.at("edges").get<std::vector<std::pair<int, int>>>();
  c.causal_order = j.at("causal_order").get<std::vector<int>>();
  return c;
}

json spec_to_json(const NetSpec& s) {
  json acts = json::array();
  for (auto a : s.activations) acts.push_back(to_string(a));
  return {{"layer_sizes", s.layer_sizes}, {"activations", acts}, {"role", static_cast<int>(s.role)}};
}

NetSpec spec_from_json(const json& j) {
  NetSpec s;
  s.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
  for (const auto& a : j.at("activations")) s.activations.push_back(activation_from_string(a.get<std::string>()));
  s.role = static_cast<NetRole>(j.at("role").get<int>());
  return s;
}

json metrics_to_json(const EpochMetrics& r) {
  return {{"epoch", r.epoch},         {"step", r.step},
          {"disc_loss", r.disc_loss}, {"d_real_mean", r.d_real_mean},
          {"d_fake_mean", r.d_fake_mean}, {"sup_loss", r.sup_loss},
          {"val_sup_loss", r.val_sup_loss}, {"val_mean_abs_spearman", r.val_mean_abs_spearman}};
}

EpochMetrics metrics_from_json(const json& j) {
  EpochMetrics r;
  r.epoch = j.at("epoch");
  r.step = j.at("step");
  r.disc_loss = j.at("disc_loss");
  r.d_real_mean = j.at("d_real_mean");
  r.d_fake_mean = j.at("d_fake_mean");
  r.sup_loss = j.at("sup_loss");
  r.val_sup_loss = j.at("val_sup_loss");
  r.val_mean_abs_spearman = j.at("val_mean_abs_spearman");
  return r;
}

struct TensorRef {
  std::string name;
  const double* data;
  Eigen::Index rows;
  Eigen::Index cols;
};

std::vector<TensorRef> tensors_of(const TrainState& s, const Eigen::VectorXd& f_params, const Eigen::MatrixXd& mask,
                                  const Eigen::MatrixXd* knots) {
  auto vec = [](std::string name, const Eigen::VectorXd& v) { return TensorRef{std::move(name), v.data(), v.size(), 1}; };
  auto mat = [](std::string name, const Eigen::MatrixXd& m) { return TensorRef{std::move(name), m.data(), m.rows(), m.cols()}; };
  std::vector<TensorRef> t{
      vec("encoder", s.encoder.parameters()),
      vec("generator", s.generator.parameters()),
      vec("discriminator", s.discriminator.parameters()),
      mat("prior.adjacency", s.prior.adjacency().weights),
      mat("prior.mask", mask),
      vec("prior.f", f_params),
  };
  if (knots) t.push_back(mat("prior.knots", *knots));
  const std::pair<const char*, const AdamState*> adams[] = {
      {"adam.d", &s.adam_d}, {"adam.e", &s.adam_e}, {"adam.g", &s.adam_g}, {"adam.f", &s.adam_f}, {"adam.a", &s.adam_a}};
  for (const auto& [name, a] : adams) {
    t.push_back(vec(std::string(name) + ".m", a->first_moment));
    t.push_back(vec(std::string(name) + ".v", a->second_moment));
  }
  return t;
}

json adam_to_json(const AdamState& a) {
  return {{"lr", a.config.lr}, {"beta1", a.config.beta1}, {"beta2", a.config.beta2}, {"eps", a.config.eps}, {"step", a.step}};
}

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t offset) {
  T value;
  std::memcpy(&value, in.data() + offset, sizeof(T));
  return value;
}

std::uint32_t crc_of(const char* data, std::size_t len) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in bounded chunks.
  while (len > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(len, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    len -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::string serialize_checkpoint(const TrainState& s) {
  const Eigen::VectorXd f_params = s.prior.transform().parameters();
  const Eigen::MatrixXd mask = s.prior.mask().as_double();
  const bool pwl = !s.prior.transform().is_linear();
  const Eigen::MatrixXd* knots = pwl ? &s.prior.transform().piecewise().knots : nullptr;
  const auto tensors = tensors_of(s, f_params, mask, knots);

  json header;
  header["config"] = config_to_json(s.config);
  header["nets"] = {{"encoder", spec_to_json(s.encoder.spec())},
                    {"generator", spec_to_json(s.generator.spec())},
                    {"discriminator", spec_to_json(s.discriminator.spec())}};
  header["prior"] = {{"k", s.prior.k()}, {"m", s.prior.m()}, {"f_kind", pwl ? "pwl" : "linear"}};
  header["adam"] = {{"d", adam_to_json(s.adam_d)}, {"e", adam_to_json(s.adam_e)}, {"g", adam_to_json(s.adam_g)},
                    {"f", adam_to_json(s.adam_f)}, {"a", adam_to_json(s.adam_a)}};
  header["epoch"] = s.epoch;
  header["step"] = s.step;
  header["rng"] = s.rng.state();
  json hist = json::array();
  for (const auto& r : s.history) hist.push_back(metrics_to_json(r));
  header["history"] = hist;
  json shapes = json::array();
  for (const auto& t : tensors) shapes.push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}});
  header["tensors"] = shapes;

  const std::string header_text = header.dump();
  std::string payload = header_text;
  for (const auto& t : tensors)
    payload.append(reinterpret_cast<const char*>(t.data), static_cast<std::size_t>(t.rows * t.cols) * sizeof(double));

  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, header_text.size());
  out += payload;
  put<std::uint32_t>(out, crc_of(payload.data(), payload.size()));
  return out;
}

TrainState deserialize_checkpoint(const std::string& bytes) {
  using Code = CheckpointErrorCode;
  constexpr std::size_t kPrefix = 4 + 4 + 8;
  if (bytes.size() < kPrefix + 4) throw CheckpointError(Code::kTruncated, "checkpoint shorter than its fixed prefix");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError(Code::kBadMagic, "not a checkpoint file");
  const auto version = get<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion)
    throw CheckpointError(Code::kVersionMismatch, "checkpoint version " + std::to_string(version) + ", expected " +
                                                      std::to_string(kCheckpointVersion));
  const auto header_len = get<std::uint64_t>(bytes, 8);
  if (header_len > bytes.size() - kPrefix - 4) throw CheckpointError(Code::kTruncated, "header length exceeds file size");

  json header;
  try {
    header = json::parse(bytes.begin() + kPrefix, bytes.begin() + kPrefix + static_cast<std::ptrdiff_t>(header_len));
  } catch (const json::exception& e) {
    throw CheckpointError(Code::kMalformed, std::string("unreadable checkpoint header: ") + e.what());
  }

  std::size_t tensor_bytes = 0;
  for (const auto& t : header.at("tensors")) {
    tensor_bytes += t.at("shape")[0].get<std::size_t>() * t.at("shape")[1].get<std::size_t>() * sizeof(double);
  }
  const std::size_t expected = kPrefix + header_len + tensor_bytes + 4;
  if (bytes.size() < expected) throw CheckpointError(Code::kTruncated, "checkpoint truncated");
  if (bytes.size() > expected) throw CheckpointError(Code::kMalformed, "trailing bytes after checkpoint");
  const auto stored_crc = get<std::uint32_t>(bytes, expected - 4);
  if (stored_crc != crc_of(bytes.data() + kPrefix, header_len + tensor_bytes))
    throw CheckpointError(Code::kChecksum, "checkpoint checksum mismatch");

  try {
    std::map<std::string, Eigen::MatrixXd> tensors;
    std::size_t offset = kPrefix + header_len;
    for (const auto& t : header.at("tensors")) {
      const auto rows = t.at("shape")[0].get<Eigen::Index>();
      const auto cols = t.at("shape")[1].get<Eigen::Index>();
      Eigen::MatrixXd m(rows, cols);
      std::memcpy(m.data(), bytes.data() + offset, static_cast<std::size_t>(rows * cols) * sizeof(double));
      offset += static_cast<std::size_t>(rows * cols) * sizeof(double);
      tensors.emplace(t.at("name").get<std::string>(), std::move(m));
    }
    auto vec = [&](const std::string& name) -> Eigen::VectorXd {
      const auto& m = tensors.at(name);
      return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
    };

    TrainState s;
    s.config = config_from_json(header.at("config"));
    s.encoder = Net(spec_from_json(header.at("nets").at("encoder")), vec("encoder"));
    s.generator = Net(spec_from_json(header.at("nets").at("generator")), vec("generator"));
    s.discriminator = Net(spec_from_json(header.at("nets").at("discriminator")), vec("discriminator"));

    const int m = header.at("prior").at("m");
    const GraphMask mask(tensors.at("prior.mask").cast<int>());
    ElementwiseTransform f;
    if (header.at("prior").at("f_kind") == "pwl") {
      const Eigen::MatrixXd& knots = tensors.at("prior.knots");
      PiecewiseLinearTransform t{knots, Eigen::MatrixXd::Zero(m, knots.cols() + 1), Eigen::VectorXd::Zero(m)};
      t.increments.col(0).setOnes();
      f = ElementwiseTransform(std::move(t));
    } else {
      f = ElementwiseTransform::identity(m);
    }
    f.set_parameters(vec("prior.f"));
    s.prior = ScmPrior(header.at("prior").at("k"), apply_mask(tensors.at("prior.adjacency"), mask), f);

    const std::pair<const char*, AdamState*> adams[] = {
        {"d", &s.adam_d}, {"e", &s.adam_e}, {"g", &s.adam_g}, {"f", &s.adam_f}, {"a", &s.adam_a}};
    for (const auto& [key, a] : adams) {
      const auto& j = header.at("adam").at(key);
      a->config = {j.at("lr"), j.at("beta1"), j.at("beta2"), j.at("eps")};
      a->step = j.at("step");
      a->first_moment = vec(std::string("adam.") + key + ".m");
      a->second_moment = vec(std::string("adam.") + key + ".v");
    }
    s.epoch = header.at("epoch");
    s.step = header.at("step");
    s.rng.set_state(header.at("rng").get<std::string>());
    for (const auto& r : header.at("history")) s.history.push_back(metrics_from_json(r));
    return s;
  } catch (const json::exception& e) {
    throw CheckpointError(Code::kMalformed, std::string("checkpoint header missing fields: ") + e.what());
  } catch (const std::out_of_range& e) {
    throw CheckpointError(Code::kMalformed, std::string("checkpoint lacks a tensor: ") + e.what());
  }
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(state);
  const auto tmp = std::filesystem::path(path).concat(".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError(CheckpointErrorCode::kIo, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError(CheckpointErrorCode::kIo, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrorCode::kIo, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace dear
