#include "dear/diffnet.hpp"

#include <cmath>

#include "dear/errors.hpp"
#include "dear/rng.hpp"

namespace dear {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kLeakyRelu: return "leaky_relu";
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kIdentity: return "identity";
  }
  return "?";
}

Activation activation_from_string(const std::string& name) {
  if (name == "leaky_relu") return Activation::kLeakyRelu;
  if (name == "tanh") return Activation::kTanh;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "identity") return Activation::kIdentity;
  throw ConfigError("unknown activation '" + name + "'");
}

void NetSpec::validate() const {
  if (activations.empty()) throw ShapeError("network needs at least one layer");
  if (layer_sizes.size() != activations.size() + 1) throw ShapeError("layer_sizes must have one more entry than activations");
  for (int s : layer_sizes)
    if (s <= 0) throw ShapeError("layer sizes must be positive");
  if (role == NetRole::kDiscriminator && output_size() != 1) throw ShapeError("discriminator must output a scalar");
  if (role == NetRole::kGenerator && activations.back() != Activation::kTanh && activations.back() != Activation::kSigmoid)
    throw ShapeError("generator head must be bounded (tanh or sigmoid)");
}

NetSpec encoder_spec(int pixels, int latent, int hidden) {
  return {{pixels, hidden, hidden, latent},
          {Activation::kLeakyRelu, Activation::kLeakyRelu, Activation::kIdentity},
          NetRole::kEncoder};
}

NetSpec generator_spec(int latent, int pixels, int hidden) {
  return {{latent, hidden, hidden, pixels},
          {Activation::kLeakyRelu, Activation::kLeakyRelu, Activation::kSigmoid},
          NetRole::kGenerator};
}

NetSpec discriminator_spec(int pixels, int latent, int hidden) {
  return {{pixels + latent, hidden, hidden, 1},
          {Activation::kLeakyRelu, Activation::kLeakyRelu, Activation::kIdentity},
          NetRole::kDiscriminator};
}

namespace {

void activate(Activation a, Eigen::MatrixXd& x) {
  switch (a) {
    case Activation::kLeakyRelu:
      x = x.array().max(kLeakySlope * x.array());
      break;
    case Activation::kTanh:
      x = x.array().tanh();
      break;
    case Activation::kSigmoid:
      x = (1.0 + (-x.array()).exp()).inverse();
      break;
    case Activation::kIdentity:
      break;
  }
}

// Multiplies grad by the activation derivative, expressed through the layer output.
void activation_backward(Activation a, const Eigen::MatrixXd& output, Eigen::MatrixXd& grad) {
  switch (a) {
    case Activation::kLeakyRelu:
      grad = (output.array() > 0.0).select(grad.array(), kLeakySlope * grad.array());
      break;
    case Activation::kTanh:
      grad.array() *= 1.0 - output.array().square();
      break;
    case Activation::kSigmoid:
      grad.array() *= output.array() * (1.0 - output.array());
      break;
    case Activation::kIdentity:
      break;
  }
}

}  // namespace

Net::Net(NetSpec spec, Eigen::VectorXd params) : spec_(std::move(spec)), params_(std::move(params)) {
  spec_.validate();
  compute_offsets();
  if (params_.size() != offsets_.back()) throw ShapeError("parameter vector does not match the network spec");
}

void Net::compute_offsets() {
  offsets_.assign(1, 0);
  for (int l = 0; l < spec_.layer_count(); ++l) {
    const Eigen::Index in = spec_.layer_sizes[l];
    const Eigen::Index out = spec_.layer_sizes[l + 1];
    offsets_.push_back(offsets_.back() + in * out + out);
  }
}

Net Net::init(const NetSpec& spec, std::uint64_t seed) {
  spec.validate();
  Net net;
  net.spec_ = spec;
  net.compute_offsets();
  net.params_ = Eigen::VectorXd::Zero(net.offsets_.back());
  Rng rng(seed, 0x6e6574);
  for (int l = 0; l < spec.layer_count(); ++l) {
    const double fan_in = spec.layer_sizes[l];
    const double fan_out = spec.layer_sizes[l + 1];
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    auto w = net.weight(l);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(-limit, limit);
  }
  return net;
}

void Net::set_parameters(const Eigen::VectorXd& params) {
  if (params.size() != params_.size()) throw ShapeError("parameter vector has wrong length");
  params_ = params;
  ++generation_;
}

Eigen::Map<const Eigen::MatrixXd> Net::weight(int layer) const {
  return {params_.data() + offsets_[layer], spec_.layer_sizes[layer + 1], spec_.layer_sizes[layer]};
}

Eigen::Map<const Eigen::VectorXd> Net::bias(int layer) const {
  const Eigen::Index out = spec_.layer_sizes[layer + 1];
  return {params_.data() + offsets_[layer + 1] - out, out};
}

Eigen::Map<Eigen::MatrixXd> Net::weight(int layer) {
  ++generation_;
  return {params_.data() + offsets_[layer], spec_.layer_sizes[layer + 1], spec_.layer_sizes[layer]};
}

Eigen::Map<Eigen::VectorXd> Net::bias(int layer) {
  ++generation_;
  const Eigen::Index out = spec_.layer_sizes[layer + 1];
  return {params_.data() + offsets_[layer + 1] - out, out};
}

Eigen::MatrixXd Net::forward(const Eigen::MatrixXd& input, Tape* tape) const {
  if (input.rows() != spec_.input_size())
    throw ShapeError("network expects " + std::to_string(spec_.input_size()) + " inputs, got " +
                     std::to_string(input.rows()));
  if (tape) {
    tape->inputs.clear();
    tape->activations.clear();
    tape->generation = generation_;
    tape->owner = this;
  }
  Eigen::MatrixXd x = input;
  for (int l = 0; l < spec_.layer_count(); ++l) {
    Eigen::MatrixXd y = weight(l) * x;
    y.colwise() += bias(l);
    activate(spec_.activations[l], y);
    if (tape) {
      tape->inputs.push_back(std::move(x));
      tape->activations.push_back(y);
    }
    x = std::move(y);
  }
  return x;
}

Eigen::VectorXd Net::forward_one(const Eigen::VectorXd& input) const {
  return forward(Eigen::MatrixXd(input)).col(0);
}

Eigen::VectorXd Net::backward(const Tape& tape, const Eigen::MatrixXd& upstream, Eigen::MatrixXd* input_grad) const {
  return backward_impl(tape, upstream, input_grad, true);
}

Eigen::MatrixXd Net::input_gradient(const Tape& tape, const Eigen::MatrixXd& upstream) const {
  Eigen::MatrixXd grad;
  backward_impl(tape, upstream, &grad, false);
  return grad;
}

Eigen::VectorXd Net::backward_impl(const Tape& tape, const Eigen::MatrixXd& upstream, Eigen::MatrixXd* input_grad,
                                   bool want_params) const {
  if (tape.owner != this || tape.generation != generation_ ||
      static_cast<int>(tape.inputs.size()) != spec_.layer_count())
    throw TapeError("tape does not come from the current state of this network");
  const auto batch = tape.inputs.front().cols();
  if (upstream.rows() != spec_.output_size() || upstream.cols() != batch)
    throw ShapeError("upstream gradient shape does not match the network output");

  Eigen::VectorXd grads;
  if (want_params) grads = Eigen::VectorXd::Zero(params_.size());
  Eigen::MatrixXd delta = upstream;
  for (int l = spec_.layer_count() - 1; l >= 0; --l) {
    activation_backward(spec_.activations[l], tape.activations[l], delta);
    if (want_params) {
      const Eigen::Index in = spec_.layer_sizes[l];
      const Eigen::Index out = spec_.layer_sizes[l + 1];
      Eigen::Map<Eigen::MatrixXd> gw(grads.data() + offsets_[l], out, in);
      gw.noalias() = delta * tape.inputs[l].transpose();
      Eigen::Map<Eigen::VectorXd>(grads.data() + offsets_[l + 1] - out, out) = delta.rowwise().sum();
    }
    if (l > 0 || input_grad) {
      Eigen::MatrixXd next = weight(l).transpose() * delta;
      delta = std::move(next);
    }
  }
  if (input_grad) *input_grad = std::move(delta);
  return grads;
}

void adam_step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grads, AdamState& state) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size())
    throw ShapeError("adam: parameter, gradient and state sizes differ");
  const auto& c = state.config;
  ++state.step;
  state.first_moment = c.beta1 * state.first_moment + (1.0 - c.beta1) * grads;
  state.second_moment = c.beta2 * state.second_moment + (1.0 - c.beta2) * grads.cwiseAbs2();
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  params.array() -= c.lr * (state.first_moment.array() / correction1) /
                    ((state.second_moment.array() / correction2).sqrt() + c.eps);
}

}  // namespace dear
