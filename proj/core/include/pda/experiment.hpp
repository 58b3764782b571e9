#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pda/adaptation.hpp"
#include "pda/checkpoint.hpp"
#include "pda/datasets.hpp"
#include "pda/evaluation.hpp"
#include "pda/model.hpp"
#include "pda/source_trainer.hpp"

namespace pda {

// Either a synthetic task (generated from the experiment seed unless the
// synthetic settings pin their own) or a pair of feature files.
struct DataSource {
  std::optional<SyntheticSpec> synthetic;
  std::filesystem::path source_path;
  std::filesystem::path target_path;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "pda-out";
  DataSource data;
  // input_dim is taken from the data.
  EncoderArchitecture model;
  SourcePhaseConfig source;
  AdaptConfig adapt;

  // Copies the experiment seed into every phase config.
  void propagate_seed();
  void validate(std::size_t num_classes) const;
};

// Strict JSON: unknown keys and mistyped values raise ConfigError.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& cfg);

SyntheticSpec parse_synthetic_spec(const std::string& json_text);
SyntheticSpec load_synthetic_spec(const std::filesystem::path& path);

// Applies PDA_SEED when set in `env_value`; throws ConfigError if malformed.
void apply_seed_override(ExperimentConfig& cfg, const char* env_value);

enum class AblationMode { full, no_EL, no_TSCS, no_CLS, no_DO };

AblationMode ablation_from_string(const std::string& name);
std::string to_string(AblationMode mode);

// full: unchanged. no_EL: n_e = 1. no_TSCS: D_tau = D_t. no_CLS: n_cl = 1 with
// one set shared across members. no_DO: alpha = beta = 0.
ExperimentConfig apply_ablation(ExperimentConfig cfg, AblationMode mode);

// Loads the data named by the config. With `need_source == false` no source
// file is touched, so adaptation can run where only the checkpoint exists.
struct LoadedData {
  std::optional<Dataset> source;
  std::optional<Dataset> target;
};
LoadedData load_data(const ExperimentConfig& cfg, bool need_source, bool need_target);

struct SourcePhaseOutput {
  Checkpoint checkpoint;
  std::vector<SourceEpochMetrics> log;
};
// Initializes the model from the seed and trains it on the source set. When
// `metrics_csv` is non-empty the per-epoch log is written there.
SourcePhaseOutput run_source_phase(const ExperimentConfig& cfg, const Dataset& source,
                                   const std::filesystem::path& metrics_csv = {});

struct AdaptPhaseOutput {
  Checkpoint checkpoint;
  std::vector<AdaptEpochMetrics> log;
};
// Adapts a source checkpoint to the target set. Target accuracy is logged
// only when the target carries hidden labels.
AdaptPhaseOutput run_adapt_phase(const ExperimentConfig& cfg, const Checkpoint& source_ckpt,
                                 const Dataset& target,
                                 const std::filesystem::path& metrics_csv = {});

struct ExperimentSummary {
  std::uint64_t seed = 0;
  AblationMode ablation = AblationMode::full;
  AccuracyReport baseline;  // source-only model on the target
  AccuracyReport adapted;
};

std::string summary_to_json(const ExperimentSummary& s);

// generate/load -> train_source -> adapt -> evaluate. Writes source/adapt
// metric CSVs, both checkpoints, the target feature file and summary.json
// into cfg.output_dir.
ExperimentSummary run_experiment(const ExperimentConfig& cfg,
                                 AblationMode ablation = AblationMode::full);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace pda
