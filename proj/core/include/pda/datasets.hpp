#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pda/matrix.hpp"
#include "pda/rng.hpp"

namespace pda {

enum class DomainRole { source, target };

std::string to_string(DomainRole role);

// Features are single precision so that the 9-significant-digit text format
// round-trips them exactly.
struct Sample {
  std::vector<float> features;
  std::optional<int> label;

  friend bool operator==(const Sample&, const Sample&) = default;
};

class Dataset;
struct AccuracyReport;
class Encoder;
AccuracyReport evaluate(const Encoder&, const Matrix&, const Dataset&);
std::string format_feature_text(const Dataset&);

// Labeled source set or unlabeled target set. Target ground truth lives in a
// separate hidden-label table that only the evaluator and the file writer can
// read; trainers have no accessor for it.
class Dataset {
 public:
  Dataset(DomainRole role, std::size_t dim, std::size_t num_classes, std::vector<Sample> samples,
          std::optional<std::vector<int>> hidden_labels = std::nullopt);

  DomainRole role() const noexcept { return role_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }
  const std::vector<Sample>& samples() const noexcept { return samples_; }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }
  bool has_hidden_labels() const noexcept { return hidden_labels_.has_value(); }

  // Rows of a batch as a double matrix (one sample per row).
  Matrix features(std::span<const std::size_t> indices) const;
  Matrix all_features() const;
  // Training labels; only valid for source datasets.
  std::vector<int> labels(std::span<const std::size_t> indices) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  friend AccuracyReport evaluate(const Encoder&, const Matrix&, const Dataset&);
  friend std::string format_feature_text(const Dataset&);

  DomainRole role_;
  std::size_t dim_;
  std::size_t num_classes_;
  std::vector<Sample> samples_;
  std::optional<std::vector<int>> hidden_labels_;
};

struct DomainShift {
  double rotation_angle = 0.0;      // radians, applied in coordinates (0, 1)
  std::vector<double> translation;  // empty or length d_x
};

struct SyntheticSpec {
  std::size_t source_classes = 8;  // K_s
  std::size_t target_classes = 4;  // K_t, the first K_t source classes
  std::size_t dim = 10;            // d_x
  std::size_t source_per_class = 200;
  std::size_t target_per_class = 100;
  double cluster_std = 1.0;
  DomainShift shift;
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr double kClassMeanRadius = 5.0;

struct DomainPair {
  Dataset source;
  Dataset target;
};

DomainPair generate_synthetic(const SyntheticSpec& spec);

// Class means used by generate_synthetic, one row per class.
Matrix synthetic_class_means(const SyntheticSpec& spec);

// Feature file: `#pda-features v1 d=<d_x> k=<K_s> role=<source|target>` header,
// then one `<label|?>,<f1>,...,<f_dx>[#<hidden_label>]` line per sample.
Dataset read_feature_file(const std::filesystem::path& path);
void write_feature_file(const Dataset& dataset, const std::filesystem::path& path);
Dataset parse_feature_text(const std::string& text);

// Seeded permutation of [0, n) cut into consecutive chunks of batch_size.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, Rng& rng);
std::vector<std::vector<std::size_t>> epoch_batches(const Dataset& dataset, std::size_t batch_size,
                                                    Rng& rng);

}  // namespace pda
