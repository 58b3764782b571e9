#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pda/datasets.hpp"
#include "pda/model.hpp"

namespace pda {

// Scalar loss together with its gradient w.r.t. the classifier logits.
struct LogitLoss {
  double value = 0.0;
  Matrix d_logits;
};

// -(1/n) Σ_i log p_{i,y_i}; gradient (p - y) / n.
LogitLoss loss_ce(const Matrix& probs, std::span<const int> labels);

// Complement entropy over non-ground-truth classes:
//   (1 / (n (K-1))) Σ_i (1 - p_g) Σ_{c≠g} q_c log q_c,  q_c = p_c / (1 - p_g)
// Non-positive; zero when every prediction is one-hot on its label.
LogitLoss loss_comp(const Matrix& probs, std::span<const int> labels);

// Unnormalized per-sample term (1 - p_g) Σ_{c≠g} q_c log q_c.
double complement_term(std::span<const double> probs, int label);

struct SourcePhaseConfig {
  double eta = 1.5;
  std::size_t epochs = 250;
  double lr0 = 0.01;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  // When false the complement objective is never evaluated (pure CE run).
  bool use_complement = true;

  void validate() const;
};

struct SourceEpochMetrics {
  std::size_t epoch = 0;
  double loss_ce = 0.0;
  double loss_comp = 0.0;
  double source_acc = 0.0;
  double lr = 0.0;
  std::size_t degenerate_codes = 0;

  friend bool operator==(const SourceEpochMetrics&, const SourceEpochMetrics&) = default;
};

inline constexpr const char* kSourceLogHeader = "epoch,loss_ce,loss_comp,source_acc,lr";
std::string format_source_log_row(const SourceEpochMetrics& m);

using SourceMetricSink = std::function<void(const SourceEpochMetrics&)>;

struct SourceTrainingResult {
  std::vector<SourceEpochMetrics> log;
};

// Jointly trains encoder and prototypes on the labeled source set under
// L_ce + eta L_comp, then freezes the prototypes. The sink, if set, receives
// each epoch's metrics as soon as the epoch completes.
SourceTrainingResult train_source(Encoder& encoder, PrototypeMatrix& prototypes,
                                  const Dataset& source, const SourcePhaseConfig& cfg,
                                  const SourceMetricSink& sink = {});

// Accuracy of argmax(classify(weights, encode(x))) against source labels.
double source_accuracy(const Encoder& encoder, const Matrix& weights, const Dataset& source);

// Predicted class per row (lowest index on ties).
std::vector<int> predict(const Encoder& encoder, const Matrix& weights, const Matrix& inputs);

std::string format_metric(double v);

}  // namespace pda
