#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pda/matrix.hpp"

namespace pda {

enum class Activation { tanh, identity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

// Fully connected layer y = x Wᵀ + b, weights stored out × in.
struct DenseLayer {
  Matrix weights;
  std::vector<double> bias;

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct EncoderArchitecture {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t code_dim = 32;
  Activation activation = Activation::tanh;

  friend bool operator==(const EncoderArchitecture&, const EncoderArchitecture&) = default;
};

// Per-layer gradients; same shapes as the encoder's layers.
struct EncoderGradients {
  std::vector<DenseLayer> layers;

  void add(const EncoderGradients& other, double scale = 1.0);
};

// MLP encoder d_x -> hidden... -> d_z. Hidden layers apply the activation,
// the output layer is linear.
class Encoder {
 public:
  // Glorot-uniform initialization from `seed`, zero biases.
  Encoder(EncoderArchitecture arch, std::uint64_t seed);
  // Explicit parameters; shapes are validated against `arch`.
  Encoder(EncoderArchitecture arch, std::vector<DenseLayer> layers, std::uint64_t seed = 0);

  const EncoderArchitecture& architecture() const noexcept { return arch_; }
  std::uint64_t init_seed() const noexcept { return seed_; }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::vector<DenseLayer>& layers() noexcept { return layers_; }
  std::size_t parameter_count() const;

  EncoderGradients zero_gradients() const;

  // Flattened copy of every parameter (layer order, weights then bias).
  std::vector<double> flat_parameters() const;
  void set_flat_parameters(std::span<const double> values);

  friend bool operator==(const Encoder&, const Encoder&) = default;

 private:
  EncoderArchitecture arch_;
  std::vector<DenseLayer> layers_;
  std::uint64_t seed_ = 0;
};

std::vector<double> flatten(const EncoderGradients& grads);

// Intermediate values kept by encode() for backpropagation.
struct EncodeContext {
  std::vector<Matrix> layer_inputs;   // input of each layer
  std::vector<Matrix> layer_outputs;  // post-activation output of each layer
  std::vector<double> code_norms;     // ‖z‖ per row (clamped to eps)
  std::vector<bool> degenerate;       // rows whose norm fell below eps
};

struct EncodeResult {
  Matrix codes;       // z
  Matrix unit_codes;  // z / ‖z‖
  EncodeContext context;
  std::size_t degenerate_rows = 0;
};

EncodeResult encode(const Encoder& encoder, const Matrix& inputs);

// Backpropagates dL/d(unit_codes) through the normalization and the MLP.
EncoderGradients encoder_backward(const Encoder& encoder, const EncodeResult& forward,
                                  const Matrix& d_unit_codes);

// Zero-bias linear classifier weights, d_z × K_s, one column per class.
class PrototypeMatrix {
 public:
  PrototypeMatrix() = default;
  explicit PrototypeMatrix(Matrix weights, bool frozen = false)
      : weights_(std::move(weights)), frozen_(frozen) {}
  // Glorot-uniform random prototypes.
  PrototypeMatrix(std::size_t code_dim, std::size_t num_classes, std::uint64_t seed);

  const Matrix& weights() const noexcept { return weights_; }
  // Throws InvalidInput once frozen.
  Matrix& mutable_weights();
  std::size_t code_dim() const noexcept { return weights_.rows(); }
  std::size_t num_classes() const noexcept { return weights_.cols(); }
  bool frozen() const noexcept { return frozen_; }
  void freeze() noexcept { frozen_ = true; }

  friend bool operator==(const PrototypeMatrix&, const PrototypeMatrix&) = default;

 private:
  Matrix weights_;
  bool frozen_ = false;
};

// FNV-1a over the raw bytes of the weights.
std::uint64_t checksum(const Matrix& m);
std::uint64_t checksum(const PrototypeMatrix& p);

struct ClassifierOutput {
  Matrix logits;  // n × K_s
  Matrix probs;   // softmax(logits) per row
};

// logits_c = w_cᵀ z_l2 for every row of `unit_codes`.
Matrix linear_logits(const Matrix& weights, const Matrix& unit_codes);
ClassifierOutput classify(const Matrix& weights, const Matrix& unit_codes);

struct LinearBackward {
  Matrix d_weights;  // d_z × K_s
  Matrix d_codes;    // n × d_z
};
LinearBackward linear_backward(const Matrix& weights, const Matrix& unit_codes,
                               const Matrix& d_logits);

inline constexpr double kDefaultMomentum = 0.9;

// Classical momentum: v <- momentum v + g; θ <- θ - lr v.
void apply_sgd_momentum(std::span<double> params, std::span<const double> grads,
                        std::span<double> velocity, double lr,
                        double momentum = kDefaultMomentum);

void apply_sgd_momentum(Encoder& encoder, const EncoderGradients& grads,
                        EncoderGradients& velocity, double lr,
                        double momentum = kDefaultMomentum);

void apply_sgd_momentum(Matrix& weights, const Matrix& grads, Matrix& velocity, double lr,
                        double momentum = kDefaultMomentum);

// Frozen prototypes are left bitwise untouched.
void apply_sgd_momentum(PrototypeMatrix& prototypes, const Matrix& grads, Matrix& velocity,
                        double lr, double momentum = kDefaultMomentum);

inline constexpr double kLrGamma = 0.0002;
inline constexpr double kLrAlpha = 0.75;
// Learning-rate multiplier for classifier layers relative to the encoder.
inline constexpr double kClassifierLrScale = 10.0;

// lr(n) = lr0 (1 + gamma n)^(-alpha)
double lr_schedule(std::size_t epoch, double lr0, double gamma = kLrGamma,
                   double alpha = kLrAlpha);

}  // namespace pda
