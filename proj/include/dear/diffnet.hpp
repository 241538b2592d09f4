#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace dear {

enum class Activation { kLeakyRelu, kTanh, kSigmoid, kIdentity };

inline constexpr double kLeakySlope = 0.2;

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

enum class NetRole { kGeneric, kEncoder, kGenerator, kDiscriminator };

struct NetSpec {
  std::vector<int> layer_sizes;         // input size first, output size last
  std::vector<Activation> activations;  // one per affine layer
  NetRole role = NetRole::kGeneric;

  int layer_count() const { return static_cast<int>(activations.size()); }
  int input_size() const { return layer_sizes.front(); }
  int output_size() const { return layer_sizes.back(); }
  void validate() const;
  bool operator==(const NetSpec&) const = default;
};

NetSpec encoder_spec(int pixels, int latent, int hidden = 256);
NetSpec generator_spec(int latent, int pixels, int hidden = 256);
NetSpec discriminator_spec(int pixels, int latent, int hidden = 256);

class Net;

// Cached activations of one forward pass; consumed by Net::backward.
struct Tape {
  std::vector<Eigen::MatrixXd> inputs;       // input to each layer
  std::vector<Eigen::MatrixXd> activations;  // output of each layer
  std::uint64_t generation = 0;
  const Net* owner = nullptr;
};

// Feedforward network with every parameter in one contiguous vector: for each
// layer the weight (out x in, column-major) followed by the bias. Batches are
// column-major with one sample per column.
class Net {
 public:
  Net() = default;
  Net(NetSpec spec, Eigen::VectorXd params);

  // Glorot-uniform weights, zero biases.
  static Net init(const NetSpec& spec, std::uint64_t seed);

  const NetSpec& spec() const { return spec_; }
  const Eigen::VectorXd& parameters() const { return params_; }
  Eigen::Index parameter_count() const { return params_.size(); }
  void set_parameters(const Eigen::VectorXd& params);

  Eigen::Map<const Eigen::MatrixXd> weight(int layer) const;
  Eigen::Map<const Eigen::VectorXd> bias(int layer) const;
  // Mutable views; each call invalidates outstanding tapes.
  Eigen::Map<Eigen::MatrixXd> weight(int layer);
  Eigen::Map<Eigen::VectorXd> bias(int layer);

  Eigen::MatrixXd forward(const Eigen::MatrixXd& input, Tape* tape = nullptr) const;
  Eigen::VectorXd forward_one(const Eigen::VectorXd& input) const;

  // Vector-Jacobian product: returns dL/dparams for upstream = dL/doutput, and
  // writes dL/dinput when requested.
  Eigen::VectorXd backward(const Tape& tape, const Eigen::MatrixXd& upstream,
                           Eigen::MatrixXd* input_grad = nullptr) const;

  // Input gradient only; skips the parameter-gradient products.
  Eigen::MatrixXd input_gradient(const Tape& tape, const Eigen::MatrixXd& upstream) const;

 private:
  Eigen::VectorXd backward_impl(const Tape& tape, const Eigen::MatrixXd& upstream, Eigen::MatrixXd* input_grad,
                                bool want_params) const;
  void compute_offsets();

  NetSpec spec_;
  Eigen::VectorXd params_;
  std::vector<Eigen::Index> offsets_;
  std::uint64_t generation_ = 0;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
  std::int64_t step = 0;

  AdamState() = default;
  AdamState(AdamConfig cfg, Eigen::Index size)
      : config(cfg), first_moment(Eigen::VectorXd::Zero(size)), second_moment(Eigen::VectorXd::Zero(size)) {}
};

// One bias-corrected Adam update of params in place.
void adam_step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grads, AdamState& state);

}  // namespace dear
