#include "pda/experiment.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include "json.hpp"

#include "pda/errors.hpp"

namespace pda {

using nlohmann::json;

namespace {

// Reads known keys from one JSON object and rejects everything else.
class Section {
 public:
  Section(const json& obj, std::string name) : obj_(obj), name_(std::move(name)) {
    if (!obj_.is_object()) throw ConfigError(name_ + ": expected a JSON object");
  }

  bool has(const std::string& key) const { return obj_.contains(key); }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return obj_.at(key);
  }

  template <typename T>
    requires(std::is_integral_v<T> && std::is_unsigned_v<T> && !std::is_same_v<T, bool>)
  void read(const std::string& key, T& dst) {
    read_unsigned(key, dst);
  }

  void read(const std::string& key, double& dst) {
    if (!take(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_number()) throw ConfigError(path(key) + ": expected a number");
    dst = v.get<double>();
    if (!std::isfinite(dst)) throw ConfigError(path(key) + ": must be finite");
  }

  void read(const std::string& key, bool& dst) {
    if (!take(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_boolean()) throw ConfigError(path(key) + ": expected true or false");
    dst = v.get<bool>();
  }

  void read(const std::string& key, std::string& dst) {
    if (!take(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_string()) throw ConfigError(path(key) + ": expected a string");
    dst = v.get<std::string>();
  }

  void read(const std::string& key, std::vector<double>& dst) {
    if (!take(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_array()) throw ConfigError(path(key) + ": expected an array of numbers");
    dst.clear();
    for (const auto& e : v) {
      if (!e.is_number()) throw ConfigError(path(key) + ": expected an array of numbers");
      dst.push_back(e.get<double>());
    }
  }

  void read(const std::string& key, std::vector<std::size_t>& dst) {
    if (!take(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_array()) throw ConfigError(path(key) + ": expected an array of integers");
    dst.clear();
    for (const auto& e : v) {
      if (!e.is_number_integer() || e.get<long long>() < 0) {
        throw ConfigError(path(key) + ": expected an array of non-negative integers");
      }
      dst.push_back(e.get<std::size_t>());
    }
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + path(it.key()) + "'");
    }
  }

  std::string path(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

 private:
  bool take(const std::string& key) {
    if (!obj_.contains(key)) return false;
    seen_.insert(key);
    return true;
  }

  template <typename T>
  void read_unsigned(const std::string& key, T& dst) {
    if (!take(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
      throw ConfigError(path(key) + ": expected a non-negative integer");
    }
    dst = v.get<T>();
  }

  const json& obj_;
  std::string name_;
  std::set<std::string> seen_;
};

json parse_json(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
}

SyntheticSpec read_synthetic(Section& s, bool* has_seed) {
  SyntheticSpec spec;
  s.read("K_s", spec.source_classes);
  s.read("K_t", spec.target_classes);
  s.read("d_x", spec.dim);
  s.read("source_per_class", spec.source_per_class);
  s.read("target_per_class", spec.target_per_class);
  s.read("cluster_std", spec.cluster_std);
  s.read("rotation_angle", spec.shift.rotation_angle);
  s.read("translation", spec.shift.translation);
  if (has_seed) *has_seed = s.has("seed");
  s.read("seed", spec.seed);
  s.finish();
  return spec;
}

json synthetic_json(const SyntheticSpec& spec) {
  return json{{"K_s", spec.source_classes},
              {"K_t", spec.target_classes},
              {"d_x", spec.dim},
              {"source_per_class", spec.source_per_class},
              {"target_per_class", spec.target_per_class},
              {"cluster_std", spec.cluster_std},
              {"rotation_angle", spec.shift.rotation_angle},
              {"translation", spec.shift.translation},
              {"seed", spec.seed}};
}

json report_json(const AccuracyReport& r) {
  json per_class = json::array();
  for (double v : r.per_class_accuracy) {
    per_class.push_back(std::isnan(v) ? json(nullptr) : json(v));
  }
  return json{{"accuracy", r.accuracy},
              {"negative_transfer", r.negative_transfer},
              {"per_class_accuracy", per_class},
              {"samples", r.samples}};
}

// Re-throws `e` as its own type with a phase prefix.
template <typename Fn>
auto in_phase(const std::string& phase, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ParseError& e) {
    throw ParseError(phase + ": " + e.what(), 0);
  } catch (const IoError& e) {
    throw IoError(phase + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(phase + ": " + e.what());
  } catch (const DegenerateVector& e) {
    throw DegenerateVector(phase + ": " + e.what());
  } catch (const NumericFailure& e) {
    throw NumericFailure(phase + ": " + e.what());
  } catch (const EvaluationUnavailable& e) {
    throw EvaluationUnavailable(phase + ": " + e.what());
  } catch (const InvalidInput& e) {
    throw InvalidInput(phase + ": " + e.what());
  }
}

void write_csv(const std::filesystem::path& path, const std::string& header,
               const std::vector<std::string>& rows) {
  std::string text = header + "\n";
  for (const auto& r : rows) text += r + "\n";
  write_text_file(path, text);
}

}  // namespace

void ExperimentConfig::propagate_seed() {
  source.seed = seed;
  adapt.seed = seed;
}

void ExperimentConfig::validate(std::size_t num_classes) const {
  source.validate();
  adapt.validate(num_classes);
  if (model.code_dim == 0) throw ConfigError("model.d_z must be positive");
  for (std::size_t h : model.hidden) {
    if (h == 0) throw ConfigError("model.hidden widths must be positive");
  }
  if (data.synthetic) data.synthetic->validate();
}

ExperimentConfig parse_config(const std::string& json_text) {
  const json doc = parse_json(json_text);
  Section root(doc, "");
  ExperimentConfig cfg;
  root.read("seed", cfg.seed);
  std::string out_dir = cfg.output_dir.string();
  root.read("output_dir", out_dir);
  cfg.output_dir = out_dir;

  if (!root.has("data")) throw ConfigError("config needs a 'data' section");
  Section data(root.raw("data"), "data");
  if (data.has("synthetic")) {
    if (data.has("source") || data.has("target")) {
      throw ConfigError("data: use either 'synthetic' or 'source'/'target' files");
    }
    Section syn(data.raw("synthetic"), "data.synthetic");
    bool has_seed = false;
    cfg.data.synthetic = read_synthetic(syn, &has_seed);
    if (!has_seed) cfg.data.synthetic->seed = cfg.seed;
  } else {
    std::string src, tgt;
    data.read("source", src);
    data.read("target", tgt);
    if (tgt.empty()) throw ConfigError("data: 'target' file is required");
    cfg.data.source_path = src;
    cfg.data.target_path = tgt;
  }
  data.finish();

  if (root.has("model")) {
    Section model(root.raw("model"), "model");
    model.read("hidden", cfg.model.hidden);
    model.read("d_z", cfg.model.code_dim);
    std::string act = to_string(cfg.model.activation);
    model.read("activation", act);
    cfg.model.activation = activation_from_string(act);
    model.finish();
  }
  if (root.has("source")) {
    Section s(root.raw("source"), "source");
    s.read("eta", cfg.source.eta);
    s.read("epochs", cfg.source.epochs);
    s.read("lr0", cfg.source.lr0);
    s.read("batch_size", cfg.source.batch_size);
    s.read("use_complement", cfg.source.use_complement);
    s.finish();
  }
  if (root.has("adapt")) {
    Section a(root.raw("adapt"), "adapt");
    a.read("n_a", cfg.adapt.history);
    a.read("n_e", cfg.adapt.ensemble_size);
    a.read("n_cl", cfg.adapt.complement_size);
    a.read("alpha", cfg.adapt.alpha);
    a.read("beta", cfg.adapt.beta);
    a.read("epochs", cfg.adapt.epochs);
    a.read("warmup_epochs", cfg.adapt.warmup_epochs);
    a.read("switch_epoch", cfg.adapt.switch_epoch);
    a.read("lr0", cfg.adapt.lr0);
    a.read("batch_size", cfg.adapt.batch_size);
    a.read("use_confident_subset", cfg.adapt.use_confident_subset);
    a.read("share_complement_set", cfg.adapt.share_complement_set);
    a.finish();
  }
  root.finish();
  cfg.propagate_seed();
  if (cfg.source.eta < 0 || cfg.adapt.alpha < 0 || cfg.adapt.beta < 0 || cfg.source.lr0 < 0 ||
      cfg.adapt.lr0 < 0) {
    throw ConfigError("hyperparameters must be non-negative");
  }
  if (cfg.data.synthetic) cfg.data.synthetic->validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_text_file(path));
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json data;
  if (cfg.data.synthetic) {
    data["synthetic"] = synthetic_json(*cfg.data.synthetic);
  } else {
    if (!cfg.data.source_path.empty()) data["source"] = cfg.data.source_path.string();
    data["target"] = cfg.data.target_path.string();
  }
  json doc{
      {"seed", cfg.seed},
      {"output_dir", cfg.output_dir.string()},
      {"data", data},
      {"model",
       {{"hidden", cfg.model.hidden}, {"d_z", cfg.model.code_dim}, {"activation", to_string(cfg.model.activation)}}},
      {"source",
       {{"eta", cfg.source.eta},
        {"epochs", cfg.source.epochs},
        {"lr0", cfg.source.lr0},
        {"batch_size", cfg.source.batch_size},
        {"use_complement", cfg.source.use_complement}}},
      {"adapt",
       {{"n_a", cfg.adapt.history},
        {"n_e", cfg.adapt.ensemble_size},
        {"n_cl", cfg.adapt.complement_size},
        {"alpha", cfg.adapt.alpha},
        {"beta", cfg.adapt.beta},
        {"epochs", cfg.adapt.epochs},
        {"warmup_epochs", cfg.adapt.warmup_epochs},
        {"switch_epoch", cfg.adapt.switch_epoch},
        {"lr0", cfg.adapt.lr0},
        {"batch_size", cfg.adapt.batch_size},
        {"use_confident_subset", cfg.adapt.use_confident_subset},
        {"share_complement_set", cfg.adapt.share_complement_set}}}};
  return doc.dump(2) + "\n";
}

SyntheticSpec parse_synthetic_spec(const std::string& json_text) {
  const json doc = parse_json(json_text);
  Section s(doc, "");
  SyntheticSpec spec = read_synthetic(s, nullptr);
  spec.validate();
  return spec;
}

SyntheticSpec load_synthetic_spec(const std::filesystem::path& path) {
  return parse_synthetic_spec(read_text_file(path));
}

void apply_seed_override(ExperimentConfig& cfg, const char* env_value) {
  if (!env_value || !*env_value) return;
  const std::string_view text(env_value);
  std::uint64_t seed = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), seed);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError("PDA_SEED must be a non-negative integer");
  }
  const bool synthetic_followed_seed = cfg.data.synthetic && cfg.data.synthetic->seed == cfg.seed;
  cfg.seed = seed;
  if (synthetic_followed_seed) cfg.data.synthetic->seed = seed;
  cfg.propagate_seed();
}

AblationMode ablation_from_string(const std::string& name) {
  if (name == "full") return AblationMode::full;
  if (name == "no_EL") return AblationMode::no_EL;
  if (name == "no_TSCS") return AblationMode::no_TSCS;
  if (name == "no_CLS") return AblationMode::no_CLS;
  if (name == "no_DO") return AblationMode::no_DO;
  throw ConfigError("unknown ablation mode '" + name + "'");
}

std::string to_string(AblationMode mode) {
  switch (mode) {
    case AblationMode::full: return "full";
    case AblationMode::no_EL: return "no_EL";
    case AblationMode::no_TSCS: return "no_TSCS";
    case AblationMode::no_CLS: return "no_CLS";
    case AblationMode::no_DO: return "no_DO";
  }
  return "full";
}

ExperimentConfig apply_ablation(ExperimentConfig cfg, AblationMode mode) {
  switch (mode) {
    case AblationMode::full:
      break;
    case AblationMode::no_EL:
      cfg.adapt.ensemble_size = 1;
      break;
    case AblationMode::no_TSCS:
      cfg.adapt.use_confident_subset = false;
      break;
    case AblationMode::no_CLS:
      cfg.adapt.complement_size = 1;
      cfg.adapt.share_complement_set = true;
      break;
    case AblationMode::no_DO:
      cfg.adapt.alpha = 0.0;
      cfg.adapt.beta = 0.0;
      break;
  }
  return cfg;
}

LoadedData load_data(const ExperimentConfig& cfg, bool need_source, bool need_target) {
  LoadedData out;
  if (cfg.data.synthetic) {
    DomainPair pair = generate_synthetic(*cfg.data.synthetic);
    if (need_source) out.source = std::move(pair.source);
    if (need_target) out.target = std::move(pair.target);
    return out;
  }
  if (need_source) {
    if (cfg.data.source_path.empty()) throw ConfigError("config names no source feature file");
    out.source = read_feature_file(cfg.data.source_path);
    if (out.source->role() != DomainRole::source) {
      throw ConfigError(cfg.data.source_path.string() + " is not a source feature file");
    }
  }
  if (need_target) {
    out.target = read_feature_file(cfg.data.target_path);
    if (out.target->role() != DomainRole::target) {
      throw ConfigError(cfg.data.target_path.string() + " is not a target feature file");
    }
  }
  return out;
}

SourcePhaseOutput run_source_phase(const ExperimentConfig& cfg, const Dataset& source,
                                   const std::filesystem::path& metrics_csv) {
  return in_phase("source phase", [&] {
    cfg.validate(source.num_classes());
    EncoderArchitecture arch = cfg.model;
    arch.input_dim = source.dim();
    SourcePhaseOutput out{Checkpoint{Encoder(arch, cfg.seed),
                                     PrototypeMatrix(arch.code_dim, source.num_classes(), cfg.seed),
                                     {}},
                          {}};
    auto result = train_source(out.checkpoint.encoder, out.checkpoint.prototypes, source, cfg.source);
    out.log = std::move(result.log);
    if (!metrics_csv.empty()) {
      std::vector<std::string> rows;
      for (const auto& m : out.log) rows.push_back(format_source_log_row(m));
      write_csv(metrics_csv, kSourceLogHeader, rows);
    }
    return out;
  });
}

AdaptPhaseOutput run_adapt_phase(const ExperimentConfig& cfg, const Checkpoint& source_ckpt,
                                 const Dataset& target, const std::filesystem::path& metrics_csv) {
  return in_phase("adapt phase", [&] {
    cfg.validate(target.num_classes());
    if (!source_ckpt.target_classifiers.empty()) {
      throw ConfigError("checkpoint is already adapted; pass a source checkpoint");
    }
    AdaptPhaseOutput out{source_ckpt, {}};
    AdaptHooks hooks;
    if (target.has_hidden_labels()) {
      hooks.evaluator = [&target](const Encoder& enc, const Matrix& w) {
        return evaluate(enc, w, target).accuracy;
      };
    }
    AdaptResult result =
        adapt(out.checkpoint.encoder, out.checkpoint.prototypes, target, cfg.adapt, hooks);
    out.checkpoint.target_classifiers = std::move(result.ensemble.weights);
    out.log = std::move(result.log);
    if (!metrics_csv.empty()) {
      std::vector<std::string> rows;
      for (const auto& m : out.log) rows.push_back(format_adapt_log_row(m));
      write_csv(metrics_csv, kAdaptLogHeader, rows);
    }
    return out;
  });
}

std::string summary_to_json(const ExperimentSummary& s) {
  json doc{{"seed", s.seed},
           {"ablation", to_string(s.ablation)},
           {"baseline", report_json(s.baseline)},
           {"adapted", report_json(s.adapted)}};
  return doc.dump(2) + "\n";
}

ExperimentSummary run_experiment(const ExperimentConfig& base_cfg, AblationMode ablation) {
  const ExperimentConfig cfg = apply_ablation(base_cfg, ablation);
  const auto& dir = cfg.output_dir;
  in_phase("setup", [&] {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    return 0;
  });

  LoadedData data = in_phase("load", [&] { return load_data(cfg, true, true); });
  const Dataset& source = *data.source;
  const Dataset& target = *data.target;
  in_phase("load", [&] {
    write_feature_file(target, dir / "target.features");
    return 0;
  });

  SourcePhaseOutput src = run_source_phase(cfg, source, dir / "source_metrics.csv");
  in_phase("source phase", [&] {
    save_checkpoint(src.checkpoint, dir / "source.ckpt");
    return 0;
  });

  AdaptPhaseOutput adapted = run_adapt_phase(cfg, src.checkpoint, target, dir / "adapt_metrics.csv");
  in_phase("adapt phase", [&] {
    save_checkpoint(adapted.checkpoint, dir / "adapted.ckpt");
    return 0;
  });

  ExperimentSummary summary = in_phase("evaluate", [&] {
    ExperimentSummary s;
    s.seed = cfg.seed;
    s.ablation = ablation;
    s.baseline = evaluate(src.checkpoint.encoder, src.checkpoint.prediction_weights(), target);
    s.adapted = evaluate(adapted.checkpoint.encoder, adapted.checkpoint.prediction_weights(), target);
    return s;
  });
  in_phase("evaluate", [&] {
    write_text_file(dir / "summary.json", summary_to_json(summary));
    return 0;
  });
  return summary;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace pda
