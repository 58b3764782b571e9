#include "pda/evaluation.hpp"

#include <limits>

#include "pda/errors.hpp"
#include "pda/source_trainer.hpp"

namespace pda {

AccuracyReport score_predictions(const std::vector<int>& predictions, const std::vector<int>& labels,
                                 std::size_t num_classes) {
  if (predictions.size() != labels.size()) {
    throw InvalidInput("prediction count does not match label count");
  }
  AccuracyReport report;
  report.samples = labels.size();
  report.per_class_accuracy.assign(num_classes, std::numeric_limits<double>::quiet_NaN());
  if (labels.empty()) return report;

  std::vector<std::size_t> hits(num_classes, 0);
  std::vector<std::size_t> totals(num_classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    if (y >= num_classes) throw InvalidInput("label out of range");
    ++totals[y];
    if (predictions[i] == labels[i]) {
      ++hits[y];
      ++correct;
    }
  }
  std::size_t private_hits = 0;
  for (int p : predictions) {
    if (p < 0 || static_cast<std::size_t>(p) >= num_classes) throw InvalidInput("prediction out of range");
    if (totals[static_cast<std::size_t>(p)] == 0) ++private_hits;
  }
  const double n = static_cast<double>(labels.size());
  report.accuracy = static_cast<double>(correct) / n;
  report.negative_transfer = static_cast<double>(private_hits) / n;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (totals[c] > 0) {
      report.per_class_accuracy[c] = static_cast<double>(hits[c]) / static_cast<double>(totals[c]);
    }
  }
  return report;
}

AccuracyReport evaluate(const Encoder& encoder, const Matrix& weights, const Dataset& dataset) {
  std::vector<int> labels;
  if (dataset.role() == DomainRole::source) {
    for (const auto& s : dataset.samples()) labels.push_back(*s.label);
  } else if (dataset.hidden_labels_) {
    labels = *dataset.hidden_labels_;
  } else {
    throw EvaluationUnavailable("dataset has no hidden labels to evaluate against");
  }
  const auto predictions = predict(encoder, weights, dataset.all_features());
  return score_predictions(predictions, labels, dataset.num_classes());
}

}  // namespace pda
