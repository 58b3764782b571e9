#include "pda/datasets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "pda/errors.hpp"
#include "pda/numerics.hpp"

namespace pda {

std::string to_string(DomainRole role) { return role == DomainRole::source ? "source" : "target"; }

Dataset::Dataset(DomainRole role, std::size_t dim, std::size_t num_classes,
                 std::vector<Sample> samples, std::optional<std::vector<int>> hidden_labels)
    : role_(role),
      dim_(dim),
      num_classes_(num_classes),
      samples_(std::move(samples)),
      hidden_labels_(std::move(hidden_labels)) {
  if (dim_ == 0) throw InvalidInput("dataset dimension must be positive");
  if (num_classes_ == 0) throw InvalidInput("dataset needs at least one class");
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const Sample& s = samples_[i];
    if (s.features.size() != dim_) {
      throw InvalidInput("sample " + std::to_string(i) + " has wrong dimension");
    }
    for (float f : s.features) {
      if (!std::isfinite(f)) throw InvalidInput("sample " + std::to_string(i) + " is not finite");
    }
    if (role_ == DomainRole::source) {
      if (!s.label) throw InvalidInput("source sample " + std::to_string(i) + " is unlabeled");
      if (*s.label < 0 || static_cast<std::size_t>(*s.label) >= num_classes_) {
        throw InvalidInput("source sample " + std::to_string(i) + " label out of range");
      }
    } else if (s.label) {
      throw InvalidInput("target sample " + std::to_string(i) + " carries a training label");
    }
  }
  if (hidden_labels_) {
    if (role_ != DomainRole::target) throw InvalidInput("hidden labels are target-only");
    if (hidden_labels_->size() != samples_.size()) {
      throw InvalidInput("hidden label count does not match sample count");
    }
    for (int y : *hidden_labels_) {
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes_) {
        throw InvalidInput("hidden label out of range");
      }
    }
  }
}

Matrix Dataset::features(std::span<const std::size_t> indices) const {
  Matrix out(indices.size(), dim_);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& f = samples_.at(indices[r]).features;
    auto dst = out.row(r);
    for (std::size_t c = 0; c < dim_; ++c) dst[c] = static_cast<double>(f[c]);
  }
  return out;
}

Matrix Dataset::all_features() const {
  std::vector<std::size_t> idx(samples_.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return features(idx);
}

std::vector<int> Dataset::labels(std::span<const std::size_t> indices) const {
  if (role_ != DomainRole::source) throw InvalidInput("target datasets expose no labels");
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(*samples_.at(i).label);
  return out;
}

void SyntheticSpec::validate() const {
  if (source_classes == 0) throw ConfigError("K_s must be at least 1");
  if (target_classes < 1 || target_classes > source_classes) {
    throw ConfigError("K_t must satisfy 1 <= K_t <= K_s");
  }
  if (dim == 0) throw ConfigError("d_x must be positive");
  if (!(cluster_std > 0.0) || !std::isfinite(cluster_std)) {
    throw ConfigError("cluster_std must be positive");
  }
  if (!(shift.rotation_angle >= 0.0 && shift.rotation_angle < 2.0 * std::numbers::pi)) {
    throw ConfigError("rotation_angle must lie in [0, 2pi)");
  }
  if (shift.rotation_angle != 0.0 && dim < 2) {
    throw ConfigError("rotation needs d_x >= 2");
  }
  if (!shift.translation.empty() && shift.translation.size() != dim) {
    throw ConfigError("translation must be empty or have length d_x");
  }
}

Matrix synthetic_class_means(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng = make_rng(spec.seed, RngStream::dataset, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix means(spec.source_classes, spec.dim);
  for (std::size_t c = 0; c < spec.source_classes; ++c) {
    auto row = means.row(c);
    double n = 0.0;
    while (n < 1e-6) {
      for (double& v : row) v = normal(rng);
      n = norm2(row);
    }
    for (double& v : row) v *= kClassMeanRadius / n;
  }
  return means;
}

namespace {

std::vector<float> draw_point(std::span<const double> mean, double std_dev, Rng& rng,
                              std::normal_distribution<double>& normal) {
  std::vector<float> out(mean.size());
  for (std::size_t i = 0; i < mean.size(); ++i) {
    out[i] = static_cast<float>(mean[i] + std_dev * normal(rng));
  }
  return out;
}

void apply_shift(std::vector<float>& x, const DomainShift& shift) {
  if (shift.rotation_angle != 0.0) {
    const double c = std::cos(shift.rotation_angle);
    const double s = std::sin(shift.rotation_angle);
    const double x0 = x[0];
    const double x1 = x[1];
    x[0] = static_cast<float>(c * x0 - s * x1);
    x[1] = static_cast<float>(s * x0 + c * x1);
  }
  for (std::size_t i = 0; i < shift.translation.size(); ++i) {
    x[i] = static_cast<float>(x[i] + shift.translation[i]);
  }
}

}  // namespace

DomainPair generate_synthetic(const SyntheticSpec& spec) {
  const Matrix means = synthetic_class_means(spec);
  std::normal_distribution<double> normal(0.0, 1.0);

  Rng src_rng = make_rng(spec.seed, RngStream::dataset, 1);
  std::vector<Sample> source;
  source.reserve(spec.source_classes * spec.source_per_class);
  for (std::size_t c = 0; c < spec.source_classes; ++c) {
    for (std::size_t i = 0; i < spec.source_per_class; ++i) {
      source.push_back({draw_point(means.row(c), spec.cluster_std, src_rng, normal),
                        static_cast<int>(c)});
    }
  }

  Rng tgt_rng = make_rng(spec.seed, RngStream::dataset, 2);
  normal.reset();
  std::vector<Sample> target;
  std::vector<int> hidden;
  target.reserve(spec.target_classes * spec.target_per_class);
  for (std::size_t c = 0; c < spec.target_classes; ++c) {
    for (std::size_t i = 0; i < spec.target_per_class; ++i) {
      auto x = draw_point(means.row(c), spec.cluster_std, tgt_rng, normal);
      apply_shift(x, spec.shift);
      target.push_back({std::move(x), std::nullopt});
      hidden.push_back(static_cast<int>(c));
    }
  }

  return {Dataset(DomainRole::source, spec.dim, spec.source_classes, std::move(source)),
          Dataset(DomainRole::target, spec.dim, spec.source_classes, std::move(target),
                  std::move(hidden))};
}

// ---- feature files ------------------------------------------------------

namespace {

void append_float(std::string& out, float v) {
  char buf[48];
  auto res = std::to_chars(buf, buf + sizeof(buf), static_cast<double>(v),
                           std::chars_format::general, 9);
  out.append(buf, res.ptr);
}

template <typename T>
bool parse_number(std::string_view text, T& value) {
  if (text.empty()) return false;
  if (text.front() == '+') text.remove_prefix(1);
  auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  return res.ec == std::errc() && res.ptr == text.data() + text.size();
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

struct Header {
  std::size_t dim = 0;
  std::size_t classes = 0;
  DomainRole role = DomainRole::source;
};

Header parse_header(std::string_view line) {
  const auto fields = split(line, ' ');
  if (fields.size() != 5 || fields[0] != "#pda-features" || fields[1] != "v1") {
    throw ParseError("malformed header, expected '#pda-features v1 d=<n> k=<n> role=<r>'", 1);
  }
  Header h;
  auto value_of = [&](std::string_view field, std::string_view key) {
    if (field.substr(0, key.size()) != key) throw ParseError("header missing " + std::string(key), 1);
    return field.substr(key.size());
  };
  if (!parse_number(value_of(fields[2], "d="), h.dim) || h.dim == 0) {
    throw ParseError("header has invalid d", 1);
  }
  if (!parse_number(value_of(fields[3], "k="), h.classes) || h.classes == 0) {
    throw ParseError("header has invalid k", 1);
  }
  const auto role = value_of(fields[4], "role=");
  if (role == "source") {
    h.role = DomainRole::source;
  } else if (role == "target") {
    h.role = DomainRole::target;
  } else {
    throw ParseError("header role must be source or target", 1);
  }
  return h;
}

}  // namespace

std::string format_feature_text(const Dataset& dataset) {
  std::string out = "#pda-features v1 d=" + std::to_string(dataset.dim()) +
                    " k=" + std::to_string(dataset.num_classes()) +
                    " role=" + to_string(dataset.role()) + "\n";
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Sample& s = dataset[i];
    if (s.label) {
      out += std::to_string(*s.label);
    } else {
      out += '?';
    }
    for (float f : s.features) {
      out += ',';
      append_float(out, f);
    }
    if (dataset.hidden_labels_) {
      out += '#';
      out += std::to_string((*dataset.hidden_labels_)[i]);
    }
    out += '\n';
  }
  return out;
}

Dataset parse_feature_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty feature file", 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const Header header = parse_header(line);

  std::vector<Sample> samples;
  std::vector<int> hidden;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    std::string_view body = line;
    std::optional<int> hidden_label;
    if (const auto hash = body.find('#'); hash != std::string_view::npos) {
      int h = 0;
      if (!parse_number(body.substr(hash + 1), h)) throw ParseError("invalid hidden label", lineno);
      if (h < 0 || static_cast<std::size_t>(h) >= header.classes) {
        throw ParseError("hidden label out of range", lineno);
      }
      if (header.role != DomainRole::target) {
        throw ParseError("hidden labels are only allowed in target files", lineno);
      }
      hidden_label = h;
      body = body.substr(0, hash);
    }
    if (!samples.empty() && hidden_label.has_value() != !hidden.empty()) {
      throw ParseError("hidden labels must be present on every line or on none", lineno);
    }

    const auto fields = split(body, ',');
    if (fields.size() != header.dim + 1) {
      throw ParseError("expected " + std::to_string(header.dim) + " features, found " +
                           std::to_string(fields.size() - 1),
                       lineno);
    }
    Sample s;
    if (fields[0] == "?") {
      if (header.role == DomainRole::source) throw ParseError("unlabeled source sample", lineno);
    } else {
      int y = 0;
      if (!parse_number(fields[0], y)) throw ParseError("invalid label", lineno);
      if (y < 0 || static_cast<std::size_t>(y) >= header.classes) {
        throw ParseError("label " + std::to_string(y) + " >= k", lineno);
      }
      if (header.role == DomainRole::target) {
        throw ParseError("target samples must be unlabeled ('?')", lineno);
      }
      s.label = y;
    }
    s.features.reserve(header.dim);
    for (std::size_t c = 1; c < fields.size(); ++c) {
      double v = 0.0;
      if (!parse_number(fields[c], v) || !std::isfinite(v)) {
        throw ParseError("invalid feature value '" + std::string(fields[c]) + "'", lineno);
      }
      s.features.push_back(static_cast<float>(v));
    }
    samples.push_back(std::move(s));
    if (hidden_label) hidden.push_back(*hidden_label);
  }

  std::optional<std::vector<int>> hidden_opt;
  if (!hidden.empty()) hidden_opt = std::move(hidden);
  return Dataset(header.role, header.dim, header.classes, std::move(samples), std::move(hidden_opt));
}

Dataset read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_feature_text(buf.str());
}

void write_feature_file(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write feature file " + path.string());
  out << format_feature_text(dataset);
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                    Rng& rng) {
  if (n == 0) throw InvalidInput("cannot batch an empty dataset");
  if (batch_size == 0) throw InvalidInput("batch size must be at least 1");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                         perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::vector<std::vector<std::size_t>> epoch_batches(const Dataset& dataset, std::size_t batch_size,
                                                    Rng& rng) {
  return epoch_batches(dataset.size(), batch_size, rng);
}

}  // namespace pda
