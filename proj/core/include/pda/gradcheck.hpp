#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pda {

inline constexpr double kGradCheckTolerance = 1e-4;
// Gradient entries smaller than this are compared in absolute terms.
inline constexpr double kGradCheckFloor = 1e-6;

// |a - n| / max(|a|, |n|, kGradCheckFloor)
double gradient_relative_error(double analytic, double numeric);

struct GradCheckInstance {
  std::size_t input_dim = 6;
  std::size_t hidden = 8;
  std::size_t code_dim = 4;
  std::size_t num_classes = 5;
  std::size_t batch = 8;
};

struct GradCheckResult {
  std::string loss;  // ce, comp, align, nl, inter, intra
  double max_relative_error = 0.0;
  std::size_t entries_checked = 0;
  bool passed() const { return max_relative_error < kGradCheckTolerance; }
};

// Compares the analytic gradients of every loss (encoder and classifier
// parameters) against central finite differences of an independent per-sample
// forward evaluation, over `seeds` random instances starting at `first_seed`.
std::vector<GradCheckResult> run_gradient_suite(std::uint64_t first_seed = 0, std::size_t seeds = 20,
                                                const GradCheckInstance& shape = {});

}  // namespace pda
