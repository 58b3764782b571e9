#include "pda/model.hpp"

#include <cmath>
#include <cstring>

#include "pda/errors.hpp"
#include "pda/numerics.hpp"
#include "pda/rng.hpp"

namespace pda {

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "identity"; }

Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + name + "'");
}

void EncoderGradients::add(const EncoderGradients& other, double scale) {
  if (other.layers.size() != layers.size()) throw InvalidInput("gradient layer count mismatch");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    axpy(scale, other.layers[l].weights, layers[l].weights);
    auto& b = layers[l].bias;
    const auto& ob = other.layers[l].bias;
    for (std::size_t i = 0; i < b.size(); ++i) b[i] += scale * ob[i];
  }
}

namespace {

std::vector<std::size_t> layer_dims(const EncoderArchitecture& arch) {
  std::vector<std::size_t> dims{arch.input_dim};
  dims.insert(dims.end(), arch.hidden.begin(), arch.hidden.end());
  dims.push_back(arch.code_dim);
  return dims;
}

void fill_glorot(Matrix& m, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : m.values()) v = dist(rng);
}

}  // namespace

Encoder::Encoder(EncoderArchitecture arch, std::uint64_t seed) : arch_(std::move(arch)), seed_(seed) {
  if (arch_.input_dim == 0 || arch_.code_dim == 0) throw ConfigError("encoder dims must be positive");
  const auto dims = layer_dims(arch_);
  Rng rng = make_rng(seed, RngStream::encoder_init);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    if (dims[l + 1] == 0) throw ConfigError("encoder hidden width must be positive");
    DenseLayer layer{Matrix(dims[l + 1], dims[l]), std::vector<double>(dims[l + 1], 0.0)};
    fill_glorot(layer.weights, dims[l], dims[l + 1], rng);
    layers_.push_back(std::move(layer));
  }
}

Encoder::Encoder(EncoderArchitecture arch, std::vector<DenseLayer> layers, std::uint64_t seed)
    : arch_(std::move(arch)), layers_(std::move(layers)), seed_(seed) {
  const auto dims = layer_dims(arch_);
  if (layers_.size() + 1 != dims.size()) throw InvalidInput("encoder layer count mismatch");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (layer.weights.rows() != dims[l + 1] || layer.weights.cols() != dims[l] ||
        layer.bias.size() != dims[l + 1]) {
      throw InvalidInput("encoder layer " + std::to_string(l) + " has wrong shape");
    }
    for (double v : layer.weights.values()) {
      if (!std::isfinite(v)) throw InvalidInput("encoder parameters must be finite");
    }
  }
}

std::size_t Encoder::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weights.size() + l.bias.size();
  return n;
}

EncoderGradients Encoder::zero_gradients() const {
  EncoderGradients g;
  for (const auto& l : layers_) {
    g.layers.push_back({Matrix(l.weights.rows(), l.weights.cols()),
                        std::vector<double>(l.bias.size(), 0.0)});
  }
  return g;
}

std::vector<double> Encoder::flat_parameters() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& l : layers_) {
    out.insert(out.end(), l.weights.values().begin(), l.weights.values().end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
  return out;
}

void Encoder::set_flat_parameters(std::span<const double> values) {
  if (values.size() != parameter_count()) throw InvalidInput("flat parameter size mismatch");
  std::size_t k = 0;
  for (auto& l : layers_) {
    for (double& v : l.weights.values()) v = values[k++];
    for (double& v : l.bias) v = values[k++];
  }
}

std::vector<double> flatten(const EncoderGradients& grads) {
  std::vector<double> out;
  for (const auto& l : grads.layers) {
    out.insert(out.end(), l.weights.values().begin(), l.weights.values().end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
  return out;
}

EncodeResult encode(const Encoder& encoder, const Matrix& inputs) {
  const auto& arch = encoder.architecture();
  if (inputs.cols() != arch.input_dim) {
    throw InvalidInput("encode: expected input dimension " + std::to_string(arch.input_dim));
  }
  EncodeResult res;
  const auto& layers = encoder.layers();
  Matrix x = inputs;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Matrix y = matmul_nt(x, layers[l].weights);
    const bool last = l + 1 == layers.size();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto row = y.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) {
        double v = row[c] + layers[l].bias[c];
        if (!last && arch.activation == Activation::tanh) v = std::tanh(v);
        if (!std::isfinite(v)) {
          throw NumericFailure("non-finite activation in encoder layer " + std::to_string(l));
        }
        row[c] = v;
      }
    }
    res.context.layer_inputs.push_back(std::move(x));
    x = y;
    res.context.layer_outputs.push_back(std::move(y));
  }
  res.codes = std::move(x);
  res.unit_codes = Matrix(res.codes.rows(), res.codes.cols());
  res.context.code_norms.resize(res.codes.rows());
  res.context.degenerate.resize(res.codes.rows());
  for (std::size_t r = 0; r < res.codes.rows(); ++r) {
    const UnitVector u = l2_normalize(res.codes.row(r));
    std::copy(u.values().begin(), u.values().end(), res.unit_codes.row(r).begin());
    const double n = norm2(res.codes.row(r));
    res.context.degenerate[r] = u.degenerate();
    res.context.code_norms[r] = u.degenerate() ? kNormEps : n;
    if (u.degenerate()) ++res.degenerate_rows;
  }
  return res;
}

EncoderGradients encoder_backward(const Encoder& encoder, const EncodeResult& forward,
                                  const Matrix& d_unit_codes) {
  const auto& layers = encoder.layers();
  const auto& ctx = forward.context;
  if (d_unit_codes.rows() != forward.unit_codes.rows() ||
      d_unit_codes.cols() != forward.unit_codes.cols()) {
    throw InvalidInput("encoder_backward: gradient shape mismatch");
  }

  // d z = (I - u uᵀ) d u / ‖z‖, or d u / eps on degenerate rows.
  Matrix grad(d_unit_codes.rows(), d_unit_codes.cols());
  for (std::size_t r = 0; r < grad.rows(); ++r) {
    auto g = d_unit_codes.row(r);
    auto u = forward.unit_codes.row(r);
    auto out = grad.row(r);
    const double inv = 1.0 / ctx.code_norms[r];
    const double proj = ctx.degenerate[r] ? 0.0 : dot(u, g);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] = (g[c] - proj * u[c]) * inv;
  }

  EncoderGradients grads = encoder.zero_gradients();
  const bool tanh_act = encoder.architecture().activation == Activation::tanh;
  for (std::size_t l = layers.size(); l-- > 0;) {
    const bool last = l + 1 == layers.size();
    if (!last && tanh_act) {
      const Matrix& y = ctx.layer_outputs[l];
      auto gv = grad.values();
      auto yv = y.values();
      for (std::size_t i = 0; i < gv.size(); ++i) gv[i] *= 1.0 - yv[i] * yv[i];
    }
    grads.layers[l].weights = matmul_tn(grad, ctx.layer_inputs[l]);
    auto& b = grads.layers[l].bias;
    for (std::size_t r = 0; r < grad.rows(); ++r) {
      auto row = grad.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) b[c] += row[c];
    }
    if (l > 0) grad = matmul(grad, layers[l].weights);
  }
  return grads;
}

PrototypeMatrix::PrototypeMatrix(std::size_t code_dim, std::size_t num_classes, std::uint64_t seed)
    : weights_(code_dim, num_classes) {
  Rng rng = make_rng(seed, RngStream::prototype_init);
  fill_glorot(weights_, code_dim, num_classes, rng);
}

Matrix& PrototypeMatrix::mutable_weights() {
  if (frozen_) throw InvalidInput("prototype matrix is frozen");
  return weights_;
}

std::uint64_t checksum(const Matrix& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : m.values()) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::uint64_t checksum(const PrototypeMatrix& p) { return checksum(p.weights()); }

Matrix linear_logits(const Matrix& weights, const Matrix& unit_codes) {
  if (weights.rows() != unit_codes.cols()) {
    throw InvalidInput("classifier expects code dimension " + std::to_string(weights.rows()));
  }
  return matmul(unit_codes, weights);
}

ClassifierOutput classify(const Matrix& weights, const Matrix& unit_codes) {
  ClassifierOutput out;
  out.logits = linear_logits(weights, unit_codes);
  out.probs = softmax_rows(out.logits);
  return out;
}

LinearBackward linear_backward(const Matrix& weights, const Matrix& unit_codes,
                               const Matrix& d_logits) {
  return {matmul_tn(unit_codes, d_logits), matmul_nt(d_logits, weights)};
}

void apply_sgd_momentum(std::span<double> params, std::span<const double> grads,
                        std::span<double> velocity, double lr, double momentum) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw InvalidInput("sgd: parameter, gradient and velocity sizes differ");
  }
  for (double g : grads) {
    if (!std::isfinite(g)) throw NumericFailure("sgd: non-finite gradient");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grads[i];
    params[i] -= lr * velocity[i];
    if (!std::isfinite(params[i])) throw NumericFailure("sgd: non-finite parameter after update");
  }
}

void apply_sgd_momentum(Encoder& encoder, const EncoderGradients& grads,
                        EncoderGradients& velocity, double lr, double momentum) {
  auto& layers = encoder.layers();
  if (grads.layers.size() != layers.size() || velocity.layers.size() != layers.size()) {
    throw InvalidInput("sgd: encoder gradient layer count mismatch");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    apply_sgd_momentum(layers[l].weights.values(), grads.layers[l].weights.values(),
                       velocity.layers[l].weights.values(), lr, momentum);
    apply_sgd_momentum(layers[l].bias, grads.layers[l].bias, velocity.layers[l].bias, lr,
                       momentum);
  }
}

void apply_sgd_momentum(Matrix& weights, const Matrix& grads, Matrix& velocity, double lr,
                        double momentum) {
  if (grads.rows() != weights.rows() || grads.cols() != weights.cols()) {
    throw InvalidInput("sgd: gradient shape mismatch");
  }
  apply_sgd_momentum(weights.values(), grads.values(), velocity.values(), lr, momentum);
}

void apply_sgd_momentum(PrototypeMatrix& prototypes, const Matrix& grads, Matrix& velocity,
                        double lr, double momentum) {
  if (prototypes.frozen()) return;
  apply_sgd_momentum(prototypes.mutable_weights(), grads, velocity, lr, momentum);
}

double lr_schedule(std::size_t epoch, double lr0, double gamma, double alpha) {
  return lr0 * std::pow(1.0 + gamma * static_cast<double>(epoch), -alpha);
}

}  // namespace pda
