#include "pda/source_trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "pda/errors.hpp"
#include "pda/numerics.hpp"

namespace pda {

namespace {

void check_labels(const Matrix& probs, std::span<const int> labels) {
  if (labels.size() != probs.rows()) throw InvalidInput("label count does not match batch size");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= probs.cols()) {
      throw InvalidInput("label index " + std::to_string(y) + " >= K_s");
    }
  }
}

// d L / d s_k = p_k (u_k - Σ_c p_c u_c) for u = d L / d p.
void softmax_backward_row(std::span<const double> p, std::span<const double> u,
                          std::span<double> out) {
  double pu = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) pu += p[c] * u[c];
  for (std::size_t c = 0; c < p.size(); ++c) out[c] = p[c] * (u[c] - pu);
}

}  // namespace

LogitLoss loss_ce(const Matrix& probs, std::span<const int> labels) {
  check_labels(probs, labels);
  const std::size_t n = probs.rows();
  LogitLoss out{0.0, Matrix(n, probs.cols())};
  if (n == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto p = probs.row(i);
    auto d = out.d_logits.row(i);
    const auto g = static_cast<std::size_t>(labels[i]);
    out.value -= clamped_log(p[g]);
    for (std::size_t c = 0; c < p.size(); ++c) d[c] = (p[c] - (c == g ? 1.0 : 0.0)) * inv_n;
  }
  out.value *= inv_n;
  return out;
}

double complement_term(std::span<const double> p, int label) {
  const auto g = static_cast<std::size_t>(label);
  double rest = 0.0;
  double acc = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (c == g) continue;
    rest += p[c];
    acc += p[c] * clamped_log(p[c]);
  }
  // (1-p_g) Σ q log q  ==  Σ p_c log p_c - (1-p_g) log(1-p_g)
  return acc - rest * clamped_log(rest);
}

LogitLoss loss_comp(const Matrix& probs, std::span<const int> labels) {
  check_labels(probs, labels);
  const std::size_t n = probs.rows();
  const std::size_t k = probs.cols();
  if (k < 2) throw InvalidInput("complement loss needs K_s >= 2");
  LogitLoss out{0.0, Matrix(n, k)};
  if (n == 0) return out;
  const double scale = 1.0 / (static_cast<double>(n) * static_cast<double>(k - 1));
  std::vector<double> u(k);
  for (std::size_t i = 0; i < n; ++i) {
    auto p = probs.row(i);
    const auto g = static_cast<std::size_t>(labels[i]);
    out.value += complement_term(p, labels[i]);

    double rest = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      if (c != g) rest += p[c];
    }
    const double d_rest = clamped_log(rest) + (rest >= kLogClamp ? 1.0 : 0.0);
    for (std::size_t c = 0; c < k; ++c) {
      u[c] = c == g ? 0.0
                    : clamped_log(p[c]) + (p[c] >= kLogClamp ? 1.0 : 0.0) - d_rest;
    }
    auto d = out.d_logits.row(i);
    softmax_backward_row(p, u, d);
    for (double& v : d) v *= scale;
  }
  out.value *= scale;
  return out;
}

void SourcePhaseConfig::validate() const {
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw ConfigError("eta must be >= 0");
  if (!(lr0 >= 0.0) || !std::isfinite(lr0)) throw ConfigError("source lr0 must be >= 0");
  if (batch_size == 0) throw ConfigError("source batch_size must be >= 1");
}

std::string format_metric(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 10);
  return std::string(buf, res.ptr);
}

std::string format_source_log_row(const SourceEpochMetrics& m) {
  return std::to_string(m.epoch) + "," + format_metric(m.loss_ce) + "," +
         format_metric(m.loss_comp) + "," + format_metric(m.source_acc) + "," +
         format_metric(m.lr);
}

std::vector<int> predict(const Encoder& encoder, const Matrix& weights, const Matrix& inputs) {
  const auto fwd = encode(encoder, inputs);
  const Matrix logits = linear_logits(weights, fwd.unit_codes);
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

double source_accuracy(const Encoder& encoder, const Matrix& weights, const Dataset& source) {
  if (source.empty()) return 0.0;
  std::vector<std::size_t> idx(source.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto pred = predict(encoder, weights, source.features(idx));
  const auto labels = source.labels(idx);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

SourceTrainingResult train_source(Encoder& encoder, PrototypeMatrix& prototypes,
                                  const Dataset& source, const SourcePhaseConfig& cfg,
                                  const SourceMetricSink& sink) {
  cfg.validate();
  if (source.role() != DomainRole::source) throw InvalidInput("train_source needs a source dataset");
  if (source.dim() != encoder.architecture().input_dim) {
    throw InvalidInput("source feature dimension does not match the encoder");
  }
  if (prototypes.num_classes() != source.num_classes() ||
      prototypes.code_dim() != encoder.architecture().code_dim) {
    throw InvalidInput("prototype matrix shape does not match encoder / dataset");
  }
  if (prototypes.frozen()) throw InvalidInput("prototypes are already frozen");

  SourceTrainingResult result;
  EncoderGradients enc_velocity = encoder.zero_gradients();
  Matrix proto_velocity(prototypes.code_dim(), prototypes.num_classes());
  Rng rng = make_rng(cfg.seed, RngStream::source_batches);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, cfg.lr0);
    SourceEpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    try {
      for (const auto& batch : epoch_batches(source, cfg.batch_size, rng)) {
        const Matrix x = source.features(batch);
        const auto y = source.labels(batch);
        const auto fwd = encode(encoder, x);
        m.degenerate_codes += fwd.degenerate_rows;
        const auto out = classify(prototypes.weights(), fwd.unit_codes);

        LogitLoss ce = loss_ce(out.probs, y);
        Matrix d_logits = std::move(ce.d_logits);
        const double w = static_cast<double>(batch.size());
        m.loss_ce += ce.value * w;
        if (cfg.use_complement) {
          const LogitLoss comp = loss_comp(out.probs, y);
          axpy(cfg.eta, comp.d_logits, d_logits);
          m.loss_comp += comp.value * w;
        }
        if (!std::isfinite(m.loss_ce) || !std::isfinite(m.loss_comp)) {
          throw NumericFailure("non-finite source loss");
        }

        const auto lin = linear_backward(prototypes.weights(), fwd.unit_codes, d_logits);
        const auto enc_grads = encoder_backward(encoder, fwd, lin.d_codes);
        apply_sgd_momentum(encoder, enc_grads, enc_velocity, lr);
        apply_sgd_momentum(prototypes, lin.d_weights, proto_velocity, lr * kClassifierLrScale);
      }
    } catch (const NumericFailure& e) {
      throw NumericFailure("source training diverged at epoch " + std::to_string(epoch) + ": " +
                           e.what());
    }
    const double n = static_cast<double>(source.size());
    m.loss_ce /= n;
    m.loss_comp /= n;
    m.source_acc = source_accuracy(encoder, prototypes.weights(), source);
    result.log.push_back(m);
    if (sink) sink(m);
  }
  prototypes.freeze();
  return result;
}

}  // namespace pda
