#include "pda/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "pda/errors.hpp"

namespace pda {

ProbVector::ProbVector(std::vector<double> values) : values_(std::move(values)) {
  if (values_.empty()) throw InvalidInput("probability vector is empty");
  double sum = 0.0;
  for (double v : values_) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw InvalidInput("probability entry outside [0, 1]");
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw InvalidInput("probabilities do not sum to 1");
}

std::size_t ProbVector::argmax() const {
  return static_cast<std::size_t>(std::max_element(values_.begin(), values_.end()) -
                                  values_.begin());
}

double ProbVector::max() const { return *std::max_element(values_.begin(), values_.end()); }

void softmax_inplace(std::span<double> row) {
  const double m = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  for (double& v : row) {
    v = std::exp(v - m);
    sum += v;
  }
  for (double& v : row) v /= sum;
}

ProbVector softmax(std::span<const double> logits) {
  if (logits.empty()) throw InvalidInput("softmax of empty vector");
  for (double v : logits) {
    if (!std::isfinite(v)) throw InvalidInput("softmax input is not finite");
  }
  std::vector<double> out(logits.begin(), logits.end());
  softmax_inplace(out);
  return ProbVector(std::move(out), ProbVector::Unchecked{});
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out = logits;
  for (std::size_t r = 0; r < out.rows(); ++r) softmax_inplace(out.row(r));
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidInput("dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

UnitVector l2_normalize(std::span<const double> v, double eps) {
  if (v.empty()) throw InvalidInput("l2_normalize of empty vector");
  const double n = norm2(v);
  const bool degenerate = n < eps;
  const double denom = degenerate ? eps : n;
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / denom;
  return UnitVector(std::move(out), degenerate);
}

double entropy(std::span<const double> p, LogBase base) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(std::max(v, kLogClamp));
  }
  return base == LogBase::two ? h / std::numbers::ln2 : h;
}

double entropy(const ProbVector& p, LogBase base) { return entropy(p.values(), base); }

double cosine_distance(std::span<const double> a, std::span<const double> b, double eps) {
  if (a.size() != b.size()) throw InvalidInput("cosine_distance: length mismatch");
  const double na = norm2(a);
  const double nb = norm2(b);
  if (na < eps || nb < eps) throw DegenerateVector("cosine_distance: near-zero norm");
  const double cos = std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
  return 1.0 - cos;
}

std::vector<double> finite_diff_grad(const ScalarFunction& f, std::span<const double> theta,
                                     double h) {
  std::vector<double> point(theta.begin(), theta.end());
  std::vector<double> grad(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double orig = point[i];
    point[i] = orig + h;
    const double up = f(point);
    point[i] = orig - h;
    const double down = f(point);
    point[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericFailure("finite_diff_grad: non-finite value at coordinate " +
                           std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace pda
