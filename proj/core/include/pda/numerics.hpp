#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "pda/matrix.hpp"

namespace pda {

// Lower clamp applied to every probability before taking its log.
inline constexpr double kLogClamp = 1e-12;
inline constexpr double kNormEps = 1e-12;

// Probability vector over the source classes: entries in [0, 1] summing to 1.
class ProbVector {
 public:
  ProbVector() = default;
  // Validates the invariants; throws InvalidInput on violation.
  explicit ProbVector(std::vector<double> values);

  std::span<const double> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }

  // Index of the largest entry, lowest index on ties.
  std::size_t argmax() const;
  double max() const;

  friend bool operator==(const ProbVector&, const ProbVector&) = default;

 private:
  struct Unchecked {};
  ProbVector(std::vector<double> values, Unchecked) : values_(std::move(values)) {}
  friend ProbVector softmax(std::span<const double> logits);

  std::vector<double> values_;
};

// l2-normalized vector. `degenerate()` is set when the input norm fell below
// eps, in which case the values are v / eps and the norm is not 1.
class UnitVector {
 public:
  std::span<const double> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  bool degenerate() const noexcept { return degenerate_; }

 private:
  UnitVector(std::vector<double> values, bool degenerate)
      : values_(std::move(values)), degenerate_(degenerate) {}
  friend UnitVector l2_normalize(std::span<const double> v, double eps);

  std::vector<double> values_;
  bool degenerate_ = false;
};

enum class LogBase { natural, two };

// Subtract-max softmax. Throws InvalidInput on empty or non-finite logits.
ProbVector softmax(std::span<const double> logits);

// In-place softmax of one row; no validation, used on hot paths.
void softmax_inplace(std::span<double> row);
Matrix softmax_rows(const Matrix& logits);

UnitVector l2_normalize(std::span<const double> v, double eps = kNormEps);

inline double clamped_log(double p) { return p < kLogClamp ? std::log(kLogClamp) : std::log(p); }

// Shannon entropy with 0 log 0 := 0.
double entropy(const ProbVector& p, LogBase base = LogBase::natural);
double entropy(std::span<const double> p, LogBase base = LogBase::natural);

// 1 - cos(a, b), in [0, 2]. Throws DegenerateVector when either norm < eps.
double cosine_distance(std::span<const double> a, std::span<const double> b,
                       double eps = kNormEps);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);

using ScalarFunction = std::function<double(std::span<const double>)>;

// Central differences (f(θ+h e_i) - f(θ-h e_i)) / 2h. Non-finite f values
// raise NumericFailure naming the coordinate.
std::vector<double> finite_diff_grad(const ScalarFunction& f, std::span<const double> theta,
                                     double h = 1e-5);

}  // namespace pda
