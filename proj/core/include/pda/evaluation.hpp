#pragma once

#include <vector>

#include "pda/datasets.hpp"
#include "pda/model.hpp"

namespace pda {

struct AccuracyReport {
  double accuracy = 0.0;
  // Accuracy per class present in the hidden labels; NaN for absent classes.
  std::vector<double> per_class_accuracy;
  // Fraction of samples predicted into classes that never occur in the hidden
  // labels (the source-private classes for a partial target set).
  double negative_transfer = 0.0;
  std::size_t samples = 0;
};

// The only reader of target hidden labels. Throws EvaluationUnavailable when
// the dataset carries none.
AccuracyReport evaluate(const Encoder& encoder, const Matrix& weights, const Dataset& dataset);

// Same metrics from precomputed predictions; `labels` are ground truth.
AccuracyReport score_predictions(const std::vector<int>& predictions, const std::vector<int>& labels,
                                 std::size_t num_classes);

}  // namespace pda
