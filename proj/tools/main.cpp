// pda: command-line driver for the partial domain adaptation pipeline.

#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "pda/checkpoint.hpp"
#include "pda/datasets.hpp"
#include "pda/errors.hpp"
#include "pda/evaluation.hpp"
#include "pda/experiment.hpp"
#include "pda/gradcheck.hpp"

namespace {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfig = 2,
  kNumeric = 3,
  kIo = 4,
};

namespace fs = std::filesystem;

pda::ExperimentConfig load_experiment(const std::string& path) {
  pda::ExperimentConfig cfg = pda::load_config(path);
  pda::apply_seed_override(cfg, std::getenv("PDA_SEED"));
  return cfg;
}

fs::path metrics_path(const pda::ExperimentConfig& cfg, const std::string& flag, const char* name) {
  if (!flag.empty()) return flag;
  fs::create_directories(cfg.output_dir);
  return cfg.output_dir / name;
}

void print_report(const char* label, const pda::AccuracyReport& r) {
  std::printf("%s accuracy=%.6f negative_transfer=%.6f samples=%zu\n", label, r.accuracy,
              r.negative_transfer, r.samples);
  for (std::size_t c = 0; c < r.per_class_accuracy.size(); ++c) {
    if (r.per_class_accuracy[c] == r.per_class_accuracy[c]) {
      std::printf("  class %zu: %.6f\n", c, r.per_class_accuracy[c]);
    }
  }
}

int run_gradcheck(std::uint64_t seed) {
  const auto results = pda::run_gradient_suite(seed);
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-6s max_rel_err=%.3e entries=%zu %s\n", r.loss.c_str(), r.max_relative_error,
                r.entries_checked, r.passed() ? "ok" : "FAIL");
    ok = ok && r.passed();
  }
  return ok ? kOk : kNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Partial domain adaptation with complementary-label ensembles"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen", "Generate a synthetic source/target feature pair");
  std::string spec_file, out_source, out_target;
  gen->add_option("--spec", spec_file, "Synthetic task JSON")->required();
  gen->add_option("--out-source", out_source)->required();
  gen->add_option("--out-target", out_target)->required();

  auto* train = app.add_subcommand("train-source", "Train encoder and prototypes on the source set");
  std::string config_file, out_ckpt, metrics_csv;
  train->add_option("--config", config_file)->required();
  train->add_option("--out", out_ckpt)->required();
  train->add_option("--metrics", metrics_csv, "Per-epoch CSV (default: <output_dir>/source_metrics.csv)");

  auto* adapt = app.add_subcommand("adapt", "Adapt a source checkpoint using only target features");
  std::string source_ckpt;
  adapt->add_option("--config", config_file)->required();
  adapt->add_option("--source-ckpt", source_ckpt)->required();
  adapt->add_option("--out", out_ckpt)->required();
  adapt->add_option("--metrics", metrics_csv, "Per-epoch CSV (default: <output_dir>/adapt_metrics.csv)");

  auto* eval = app.add_subcommand("eval", "Accuracy of a checkpoint on a labelled feature file");
  std::string data_file;
  eval->add_option("--ckpt", out_ckpt)->required();
  eval->add_option("--data", data_file)->required();

  auto* ablate = app.add_subcommand("ablate", "Full experiment under one ablation mode");
  std::string mode = "full";
  ablate->add_option("--config", config_file)->required();
  ablate->add_option("--mode", mode)
      ->required()
      ->check(CLI::IsMember({"full", "no_EL", "no_TSCS", "no_CLS", "no_DO"}));

  auto* run = app.add_subcommand("run", "Full experiment: generate/load, train, adapt, evaluate");
  run->add_option("--config", config_file)->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every loss gradient");
  std::uint64_t gc_seed = 0;
  gradcheck->add_option("--seed", gc_seed, "First instance seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (gen->parsed()) {
      const pda::SyntheticSpec spec = pda::load_synthetic_spec(spec_file);
      const pda::DomainPair pair = pda::generate_synthetic(spec);
      pda::write_feature_file(pair.source, out_source);
      pda::write_feature_file(pair.target, out_target);
      return kOk;
    }
    if (train->parsed()) {
      const auto cfg = load_experiment(config_file);
      const auto data = pda::load_data(cfg, true, false);
      const auto out = pda::run_source_phase(cfg, *data.source,
                                             metrics_path(cfg, metrics_csv, "source_metrics.csv"));
      pda::save_checkpoint(out.checkpoint, out_ckpt);
      if (!out.log.empty()) std::printf("source_acc=%.6f\n", out.log.back().source_acc);
      return kOk;
    }
    if (adapt->parsed()) {
      const auto cfg = load_experiment(config_file);
      const pda::Checkpoint ckpt = pda::load_checkpoint(source_ckpt);
      const auto data = pda::load_data(cfg, false, true);
      const auto out = pda::run_adapt_phase(cfg, ckpt, *data.target,
                                            metrics_path(cfg, metrics_csv, "adapt_metrics.csv"));
      pda::save_checkpoint(out.checkpoint, out_ckpt);
      return kOk;
    }
    if (eval->parsed()) {
      const pda::Checkpoint ckpt = pda::load_checkpoint(out_ckpt);
      const pda::Dataset data = pda::read_feature_file(data_file);
      print_report("eval", pda::evaluate(ckpt.encoder, ckpt.prediction_weights(), data));
      return kOk;
    }
    if (ablate->parsed() || run->parsed()) {
      auto cfg = load_experiment(config_file);
      const auto ablation = pda::ablation_from_string(mode);
      if (ablate->parsed()) cfg.output_dir /= mode;
      const auto summary = pda::run_experiment(cfg, ablation);
      print_report("baseline", summary.baseline);
      print_report("adapted", summary.adapted);
      return kOk;
    }
    if (gradcheck->parsed()) return run_gradcheck(gc_seed);
  } catch (const pda::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const pda::EvaluationUnavailable& e) {
    std::cerr << "evaluation unavailable: " << e.what() << "\n";
    return kConfig;
  } catch (const pda::InvalidInput& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kConfig;
  } catch (const pda::NumericFailure& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const pda::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
