#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "calma/core/hypothesis.hpp"
#include "calma/core/predictor.hpp"
#include "calma/core/types.hpp"

namespace calma {

// Weighted points with a per-point target: p*(x) in exact mode, the observed label in empirical mode.
// Sums run left to right in point order so results are reproducible bit for bit.
class ExpectationEngine {
 public:
  enum class Mode { exact, empirical };

  static ExpectationEngine exact(const FiniteDistribution& dist) {
    dist.validate();
    ExpectationEngine e;
    e.mode_ = Mode::exact;
    e.points_ = std::make_shared<const std::vector<Point>>(dist.points);
    e.weights_ = dist.mass;
    e.targets_ = dist.bayes;
    return e;
  }

  static ExpectationEngine empirical(const Dataset& data) {
    data.validate();
    ExpectationEngine e;
    e.mode_ = Mode::empirical;
    e.points_ = std::make_shared<const std::vector<Point>>(data.x);
    const double w = 1.0 / static_cast<double>(data.size());
    e.weights_.assign(data.size(), w);
    e.targets_.reserve(data.size());
    for (int y : data.y) e.targets_.push_back(static_cast<double>(y));
    return e;
  }

  Mode mode() const { return mode_; }
  bool is_exact() const { return mode_ == Mode::exact; }
  std::size_t size() const { return weights_.size(); }
  const std::vector<Point>& points() const { return *points_; }
  const std::shared_ptr<const std::vector<Point>>& points_ptr() const { return points_; }
  const Point& point(std::size_t i) const { return (*points_)[i]; }
  std::span<const double> weights() const { return weights_; }
  std::span<const double> targets() const { return targets_; }
  double weight(std::size_t i) const { return weights_[i]; }
  double target(std::size_t i) const { return targets_[i]; }

  template <class F>
  std::vector<double> evaluate(const F& f) const {
    std::vector<double> out;
    out.reserve(size());
    for (const auto& x : *points_) out.push_back(f(x));
    return out;
  }

  // Σ_i w_i f(i)
  template <class F>
  double expect(F&& f) const {
    double s = 0.0;
    for (std::size_t i = 0; i < size(); ++i) s += weights_[i] * f(i);
    return s;
  }

  // E over Nature's labels: Σ_i w_i [t_i f(i,1) + (1 - t_i) f(i,0)]
  template <class F>
  double expect_nature(F&& f) const {
    double s = 0.0;
    for (std::size_t i = 0; i < size(); ++i) {
      double t = targets_[i];
      s += weights_[i] * (t * f(i, 1) + (1.0 - t) * f(i, 0));
    }
    return s;
  }

  // E over simulated labels ỹ ~ Ber(p_i), computed analytically
  template <class F>
  double expect_simulated(std::span<const double> p, F&& f) const {
    double s = 0.0;
    for (std::size_t i = 0; i < size(); ++i) s += weights_[i] * (p[i] * f(i, 1) + (1.0 - p[i]) * f(i, 0));
    return s;
  }

  // E[c(x) (y - p(x))], the residual correlation
  double correlation(std::span<const double> c, std::span<const double> p) const {
    double s = 0.0;
    for (std::size_t i = 0; i < size(); ++i) s += weights_[i] * c[i] * (targets_[i] - p[i]);
    return s;
  }

 private:
  ExpectationEngine() = default;
  Mode mode_ = Mode::exact;
  std::shared_ptr<const std::vector<Point>> points_;
  std::vector<double> weights_;
  std::vector<double> targets_;
};

enum class Norm { l1, l2, linf };

inline double distance_values(std::span<const double> a, std::span<const double> b, const ExpectationEngine& e,
                              Norm norm) {
  double s = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    double d = std::abs(a[i] - b[i]);
    switch (norm) {
      case Norm::l1: s += e.weight(i) * d; break;
      case Norm::l2: s += e.weight(i) * d * d; break;
      case Norm::linf:
        if (e.weight(i) > 0.0) s = std::max(s, d);
        break;
    }
  }
  return norm == Norm::l2 ? std::sqrt(s) : s;
}

inline double distance(const Predictor& p1, const Predictor& p2, const ExpectationEngine& e, Norm norm) {
  auto a = e.evaluate(p1), b = e.evaluate(p2);
  return distance_values(a, b, e, norm);
}

// l2(target, p)^2: squared distance of p to p* (exact) or to the labels (empirical)
inline double l2_to_target_sq(std::span<const double> p, const ExpectationEngine& e) {
  double s = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    double d = e.target(i) - p[i];
    s += e.weight(i) * d * d;
  }
  return s;
}

inline double l2_to_target_sq(const Predictor& p, const ExpectationEngine& e) {
  return l2_to_target_sq(e.evaluate(p), e);
}

}  // namespace calma
