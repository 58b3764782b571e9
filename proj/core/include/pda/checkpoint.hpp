#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pda/model.hpp"

namespace pda {

// Everything a later phase needs: the encoder, the (frozen) source prototypes
// and, after adaptation, the target classifier ensemble. Source data is never
// stored.
struct Checkpoint {
  Encoder encoder;
  PrototypeMatrix prototypes;
  std::vector<Matrix> target_classifiers;

  // Weights used for prediction: the first target classifier when present,
  // otherwise the source prototypes.
  const Matrix& prediction_weights() const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

// Text format, parameters written with 17 significant digits so that loading
// reproduces every double bit-exactly.
std::string format_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& text);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pda
