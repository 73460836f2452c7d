#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace calma {

using Point = std::vector<double>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// invalid arguments or malformed inputs
class ValidationError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class BudgetExceededError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
};

class InsufficientSamplesError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void check_dims(const std::vector<Point>& pts, const char* what) {
  if (pts.empty()) return;
  std::size_t d = pts.front().size();
  for (const auto& p : pts) {
    if (p.size() != d) throw ValidationError(std::string(what) + ": mixed point dimensionality");
    for (double v : p)
      if (!std::isfinite(v)) throw ValidationError(std::string(what) + ": non-finite coordinate");
  }
}

}  // namespace detail

struct FiniteDistribution {
  std::vector<Point> points;
  std::vector<double> mass;
  std::vector<double> bayes;

  FiniteDistribution() = default;
  FiniteDistribution(std::vector<Point> pts, std::vector<double> m, std::vector<double> b)
      : points(std::move(pts)), mass(std::move(m)), bayes(std::move(b)) {
    validate();
  }

  static FiniteDistribution uniform(std::vector<Point> pts, std::vector<double> b) {
    std::vector<double> m(pts.size(), pts.empty() ? 0.0 : 1.0 / static_cast<double>(pts.size()));
    return FiniteDistribution(std::move(pts), std::move(m), std::move(b));
  }

  std::size_t size() const { return points.size(); }
  std::size_t dim() const { return points.empty() ? 0 : points.front().size(); }

  void validate() const {
    if (points.empty()) throw ValidationError("distribution: empty domain");
    if (mass.size() != points.size() || bayes.size() != points.size())
      throw ValidationError("distribution: points, mass and bayes must have equal length");
    detail::check_dims(points, "distribution");
    double total = 0.0;
    for (double m : mass) {
      if (!(m >= 0.0) || !std::isfinite(m)) throw ValidationError("distribution: negative or non-finite mass");
      total += m;
    }
    if (std::abs(total - 1.0) > 1e-12) throw ValidationError("distribution: masses must sum to 1");
    for (double b : bayes)
      if (!(b >= 0.0 && b <= 1.0)) throw ValidationError("distribution: bayes entries must lie in [0,1]");
  }
};

struct Dataset {
  std::vector<Point> x;
  std::vector<int> y;
  std::optional<std::uint64_t> seed;

  Dataset() = default;
  Dataset(std::vector<Point> xs, std::vector<int> ys, std::optional<std::uint64_t> s = std::nullopt)
      : x(std::move(xs)), y(std::move(ys)), seed(s) {
    validate();
  }

  std::size_t size() const { return x.size(); }
  std::size_t dim() const { return x.empty() ? 0 : x.front().size(); }

  void append(Point p, int label) {
    x.push_back(std::move(p));
    y.push_back(label);
  }

  void validate() const {
    if (x.empty()) throw ValidationError("dataset: no rows");
    if (x.size() != y.size()) throw ValidationError("dataset: feature and label counts differ");
    detail::check_dims(x, "dataset");
    for (int v : y)
      if (v != 0 && v != 1) throw ValidationError("dataset: labels must be 0 or 1");
  }
};

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

}  // namespace calma
