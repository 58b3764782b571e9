#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pda/datasets.hpp"
#include "pda/model.hpp"
#include "pda/numerics.hpp"
#include "pda/source_trainer.hpp"

namespace pda {

struct AdaptConfig {
  std::size_t history = 10;         // n_a, epochs in the logit moving average
  std::size_t ensemble_size = 3;    // n_e
  std::size_t complement_size = 3;  // n_cl, indices per complementary set
  double alpha = 0.5;               // inter-class weight
  double beta = 1.5;                // intra-class weight
  std::size_t epochs = 2500;
  std::size_t warmup_epochs = 5;
  std::size_t switch_epoch = 15;
  double lr0 = 0.01;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  // false: every target sample is treated as confident.
  bool use_confident_subset = true;
  // true: one complementary set is drawn per sample and shared by all members.
  bool share_complement_set = false;

  void validate(std::size_t num_classes) const;

  friend bool operator==(const AdaptConfig&, const AdaptConfig&) = default;
};

// Last n_a epochs of ensemble-mean logits for every target sample; one
// n_t × K_s matrix per epoch, oldest first.
class LogitHistory {
 public:
  explicit LogitHistory(std::size_t capacity = 1);

  void push(Matrix logits);
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  bool empty() const noexcept { return entries_.empty(); }
  const std::deque<Matrix>& entries() const noexcept { return entries_; }

  Matrix mean() const;
  // Sum of every entry except the most recent one (zeros when size() == 1).
  Matrix sum_except_latest() const;

 private:
  std::size_t capacity_;
  std::deque<Matrix> entries_;
};

struct EnsembleState {
  std::vector<Matrix> weights;  // n_e matrices, d_z × K_s
  LogitHistory history;
  std::size_t epoch_counter = 0;

  // Every member starts as an exact copy of the prototypes.
  static EnsembleState from_prototypes(const PrototypeMatrix& prototypes, std::size_t ensemble_size,
                                       std::size_t history);

  // (1/n_e) Σ_m (w^m)ᵀ z_l2 per row.
  Matrix mean_logits(const Matrix& unit_codes) const;
};

struct PseudoLabelTable {
  std::vector<ProbVector> probs;  // moving-average ensemble prediction
  std::vector<int> labels;        // argmax, lowest index on ties
  std::vector<double> cac;
};

// p̃ = softmax(mean of stored logits); throws InvalidInput on empty history.
PseudoLabelTable pseudo_labels_from_history(const LogitHistory& history);

// Pushes this epoch's ensemble-mean logits for the full target set, then
// recomputes the table from the history.
PseudoLabelTable update_pseudo_labels(EnsembleState& ensemble, const Matrix& unit_codes);

// Confidence-adjusted certainty 1 - H_2(p) (1 - max p) / log2 K, in [0, 1].
double cac(const ProbVector& p, std::size_t num_classes);

struct ComplementSets {
  std::vector<std::vector<std::size_t>> sets;  // one per ensemble member

  friend bool operator==(const ComplementSets&, const ComplementSets&) = default;
};

// Draws n_e disjoint sets of n_cl class indices, none equal to the pseudo-label,
// sampling without replacement from the shrinking pool of unused indices.
ComplementSets gen_complement_sets(std::size_t pseudo_label, std::size_t num_classes,
                                   std::size_t ensemble_size, std::size_t complement_size,
                                   Rng& rng);

struct ConfidentSubset {
  double tau = 0.0;
  std::vector<std::size_t> members;  // ascending sample indices
};

// tau = mean score; members have score strictly above tau.
ConfidentSubset build_confident_subset(std::span<const double> cac_scores);

// Loss with gradient w.r.t. the l2-normalized codes of the batch.
struct CodeLoss {
  double value = 0.0;
  Matrix d_codes;
};

struct AlignLoss {
  double value = 0.0;
  Matrix d_codes;
  // Always zero: the prototypes are frozen during adaptation.
  Matrix d_prototypes;
};

// Mean prediction entropy (natural log) under the frozen prototypes.
AlignLoss loss_align(const PrototypeMatrix& prototypes, const Matrix& unit_codes);

struct NlBatch {
  const std::vector<Matrix>* weights = nullptr;  // current ensemble
  const Matrix* unit_codes = nullptr;            // b × d_z, live
  const Matrix* history_sum = nullptr;           // b × K_s, earlier epochs (constants)
  std::size_t history_count = 1;                 // entries in the average, current included
  std::span<const ComplementSets> sets;          // one per batch row
};

struct NlLoss {
  double value = 0.0;
  Matrix d_codes;
  // d_weights[m] carries only the gradient of member m's own term.
  std::vector<Matrix> d_weights;
};

// Negative learning over the complementary sets:
//   (1/n_e) Σ_m -(1/(b n_cl)) Σ_j Σ_{c∈cl_m(j)} (1 - p̃_jc) log(1 - p̃_jc)
// with p̃ = softmax((history_sum + mean_m (w^m)ᵀ z) / history_count).
NlLoss loss_nl(const NlBatch& batch);

// -( mean δ over differently-labeled code pairs + mean δ(z, μ_c) over c ≠ ỹ )
CodeLoss loss_inter(const Matrix& unit_codes, std::span<const int> pseudo_labels,
                    const PrototypeMatrix& prototypes);
// mean δ over same-label code pairs + mean δ(z, μ_ỹ)
CodeLoss loss_intra(const Matrix& unit_codes, std::span<const int> pseudo_labels,
                    const PrototypeMatrix& prototypes);

enum class AdaptPhase { warmup, negative_learning, self_training };

AdaptPhase phase_for_epoch(const AdaptConfig& cfg, std::size_t epoch);

struct AdaptEpochMetrics {
  std::size_t epoch = 0;
  AdaptPhase phase = AdaptPhase::warmup;
  // Negative-learning loss; after the switch epoch, the pseudo-label
  // cross-entropy of the designated classifier.
  double loss_nl = 0.0;
  double loss_inter = 0.0;
  double loss_intra = 0.0;
  double loss_align = 0.0;
  double tau = 0.0;
  std::size_t confident_count = 0;
  std::optional<double> target_acc;
  double lr = 0.0;
  std::size_t degenerate_codes = 0;

  friend bool operator==(const AdaptEpochMetrics&, const AdaptEpochMetrics&) = default;
};

inline constexpr const char* kAdaptLogHeader =
    "epoch,loss_nl,loss_inter,loss_intra,loss_align,tau,|D_tau|,target_acc";
std::string format_adapt_log_row(const AdaptEpochMetrics& m);

// Index of the target classifier used for predictions after adaptation.
inline constexpr std::size_t kDesignatedClassifier = 0;

struct AdaptHooks {
  // Target accuracy of (encoder, designated classifier); supplied by the
  // evaluator, which is the only code that can read hidden labels.
  std::function<double(const Encoder&, const Matrix&)> evaluator;
  std::function<void(const AdaptEpochMetrics&)> on_epoch;
  // Called after the per-epoch refresh of pseudo-labels, D_tau and the
  // complementary sets (sets are empty outside the negative-learning phase).
  std::function<void(std::size_t, const PseudoLabelTable&, const ConfidentSubset&,
                     const std::vector<ComplementSets>&)>
      on_refresh;
};

struct AdaptResult {
  EnsembleState ensemble;
  std::vector<AdaptEpochMetrics> log;
};

// Adapts the encoder and the target ensemble to the unlabeled target set.
// The prototypes must be frozen and are never modified.
AdaptResult adapt(Encoder& encoder, const PrototypeMatrix& prototypes, const Dataset& target,
                  const AdaptConfig& cfg, const AdaptHooks& hooks = {});

}  // namespace pda
