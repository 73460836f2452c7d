#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "calma/core/hypothesis.hpp"
#include "calma/core/types.hpp"

namespace calma {

// Buckets I_j = [2jδ, 2(j+1)δ) for j = 0..m-1 (zero-based), last bucket closed at 1.
struct BucketGrid {
  double delta = 0.1;

  BucketGrid() = default;
  explicit BucketGrid(double d) : delta(d) {
    if (!(d > 0.0 && d <= 0.5)) throw DomainError("bucket width parameter delta must lie in (0, 1/2]");
  }

  std::size_t count() const { return static_cast<std::size_t>(std::ceil(1.0 / (2.0 * delta) - 1e-9)); }
  double lo(std::size_t j) const { return 2.0 * delta * static_cast<double>(j); }
  double hi(std::size_t j) const { return std::min(1.0, 2.0 * delta * static_cast<double>(j + 1)); }
  double midpoint(std::size_t j) const { return std::min(1.0, delta * static_cast<double>(2 * j + 1)); }

  std::size_t index(double v) const {
    const std::size_t m = count();
    v = clamp01(v);
    auto j = static_cast<std::size_t>(std::floor(v / (2.0 * delta)));
    if (j >= m) return m - 1;
    // floor of a rounded quotient can land one bucket off near a boundary
    if (j > 0 && v < lo(j)) --j;
    if (j + 1 < m && v >= lo(j + 1)) ++j;
    return j;
  }
};

namespace detail {

struct PredNode {
  virtual ~PredNode() = default;
  virtual double eval(const Point& x) const = 0;
  virtual std::string kind() const = 0;
  virtual json to_json() const = 0;
};

}  // namespace detail

class Predictor {
 public:
  explicit Predictor(std::shared_ptr<const detail::PredNode> n) : node_(std::move(n)) {}

  double operator()(const Point& x) const { return node_->eval(x); }
  std::string kind() const { return node_->kind(); }
  json to_json() const { return node_->to_json(); }

  template <class N>
  const N* as() const {
    return dynamic_cast<const N*>(node_.get());
  }

  static Predictor constant(double v);
  static Predictor table(std::vector<Point> points, std::vector<double> values);
  static Predictor clipped(Hypothesis score);
  // base followed by p <- clip(p + step*h) for each update in order
  static Predictor boosted(Predictor base, std::vector<std::pair<double, Hypothesis>> updates);
  static Predictor bucketed(Predictor base, double delta, std::vector<double> values);
  static Predictor isotonic(Predictor base, std::vector<double> knots, std::vector<double> values);
  static Predictor glm(std::string transfer, std::function<double(double)> gprime, Hypothesis score);
  static Predictor function(std::string tag, std::function<double(const Point&)> f);

 private:
  std::shared_ptr<const detail::PredNode> node_;
};

namespace detail {

struct ConstantPred : PredNode {
  double v;
  explicit ConstantPred(double value) : v(value) {}
  double eval(const Point&) const override { return v; }
  std::string kind() const override { return "constant"; }
  json to_json() const override { return {{"kind", kind()}, {"value", v}}; }
};

struct TablePred : PredNode {
  std::map<Point, double> table;
  explicit TablePred(std::map<Point, double> t) : table(std::move(t)) {}
  double eval(const Point& x) const override {
    auto it = table.find(x);
    if (it == table.end()) throw DomainError("table predictor: point outside the domain");
    return it->second;
  }
  std::string kind() const override { return "table"; }
  json to_json() const override {
    json pts = json::array(), vals = json::array();
    for (const auto& [p, v] : table) {
      pts.push_back(p);
      vals.push_back(v);
    }
    return {{"kind", kind()}, {"points", pts}, {"values", vals}};
  }
};

struct ClipPred : PredNode {
  Hypothesis score;
  explicit ClipPred(Hypothesis h) : score(std::move(h)) {}
  double eval(const Point& x) const override { return clamp01(score(x)); }
  std::string kind() const override { return "clipped"; }
  json to_json() const override { return {{"kind", kind()}, {"score", score.to_json()}}; }
};

struct BoostedPred : PredNode {
  Predictor base;
  std::vector<std::pair<double, Hypothesis>> updates;
  BoostedPred(Predictor b, std::vector<std::pair<double, Hypothesis>> u) : base(std::move(b)), updates(std::move(u)) {}
  double eval(const Point& x) const override {
    double v = base(x);
    for (const auto& [step, h] : updates) v = clamp01(v + step * h(x));
    return v;
  }
  std::string kind() const override { return "boosted"; }
  json to_json() const override {
    json us = json::array();
    for (const auto& [step, h] : updates) us.push_back({{"step", step}, {"h", h.to_json()}});
    return {{"kind", kind()}, {"base", base.to_json()}, {"updates", us}};
  }
};

struct BucketedPred : PredNode {
  Predictor base;
  BucketGrid grid;
  std::vector<double> values;
  BucketedPred(Predictor b, BucketGrid g, std::vector<double> v) : base(std::move(b)), grid(g), values(std::move(v)) {}
  double eval(const Point& x) const override { return values[grid.index(base(x))]; }
  std::string kind() const override { return "bucketed"; }
  json to_json() const override {
    return {{"kind", kind()}, {"base", base.to_json()}, {"delta", grid.delta}, {"values", values}};
  }
  // every bucket value is an odd multiple of delta
  bool delta_discrete() const {
    for (double v : values) {
      double k = v / grid.delta;
      double r = std::round(k);
      if (std::abs(k - r) > 1e-9 || static_cast<long long>(r) % 2 == 0) return false;
    }
    return true;
  }
};

struct IsotonicPred : PredNode {
  Predictor base;
  std::vector<double> knots, values;
  IsotonicPred(Predictor b, std::vector<double> k, std::vector<double> v)
      : base(std::move(b)), knots(std::move(k)), values(std::move(v)) {}
  double eval(const Point& x) const override {
    double s = base(x);
    auto it = std::upper_bound(knots.begin(), knots.end(), s);
    if (it == knots.begin()) return values.front();
    return values[static_cast<std::size_t>(it - knots.begin()) - 1];
  }
  std::string kind() const override { return "isotonic"; }
  json to_json() const override {
    return {{"kind", kind()}, {"base", base.to_json()}, {"knots", knots}, {"values", values}};
  }
};

struct GlmPred : PredNode {
  std::string transfer;
  std::function<double(double)> gprime;
  Hypothesis score;
  GlmPred(std::string t, std::function<double(double)> g, Hypothesis h)
      : transfer(std::move(t)), gprime(std::move(g)), score(std::move(h)) {}
  double eval(const Point& x) const override { return clamp01(gprime(score(x))); }
  std::string kind() const override { return "glm"; }
  json to_json() const override { return {{"kind", kind()}, {"transfer", transfer}, {"score", score.to_json()}}; }
};

struct FunctionPred : PredNode {
  std::string tag;
  std::function<double(const Point&)> f;
  FunctionPred(std::string t, std::function<double(const Point&)> fn) : tag(std::move(t)), f(std::move(fn)) {}
  double eval(const Point& x) const override { return clamp01(f(x)); }
  std::string kind() const override { return "function"; }
  json to_json() const override { throw ValidationError("function predictor '" + tag + "' is not serializable"); }
};

}  // namespace detail

inline Predictor Predictor::constant(double v) {
  if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("constant predictor must lie in [0,1]");
  return Predictor(std::make_shared<const detail::ConstantPred>(v));
}

inline Predictor Predictor::table(std::vector<Point> points, std::vector<double> values) {
  if (points.size() != values.size()) throw ValidationError("table predictor: size mismatch");
  std::map<Point, double> t;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!(values[i] >= 0.0 && values[i] <= 1.0)) throw ValidationError("table predictor: values must lie in [0,1]");
    t[points[i]] = values[i];
  }
  return Predictor(std::make_shared<const detail::TablePred>(std::move(t)));
}

inline Predictor Predictor::clipped(Hypothesis score) {
  return Predictor(std::make_shared<const detail::ClipPred>(std::move(score)));
}

inline Predictor Predictor::boosted(Predictor base, std::vector<std::pair<double, Hypothesis>> updates) {
  if (auto b = base.as<detail::BoostedPred>()) {
    auto all = b->updates;
    all.insert(all.end(), updates.begin(), updates.end());
    return Predictor(std::make_shared<const detail::BoostedPred>(b->base, std::move(all)));
  }
  return Predictor(std::make_shared<const detail::BoostedPred>(std::move(base), std::move(updates)));
}

inline Predictor Predictor::bucketed(Predictor base, double delta, std::vector<double> values) {
  BucketGrid g(delta);
  if (values.size() != g.count()) throw ValidationError("bucketed predictor: wrong number of bucket values");
  for (double v : values)
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("bucketed predictor: values must lie in [0,1]");
  return Predictor(std::make_shared<const detail::BucketedPred>(std::move(base), g, std::move(values)));
}

inline Predictor Predictor::isotonic(Predictor base, std::vector<double> knots, std::vector<double> values) {
  if (knots.empty() || knots.size() != values.size()) throw ValidationError("isotonic predictor: bad step function");
  if (!std::is_sorted(knots.begin(), knots.end())) throw ValidationError("isotonic predictor: knots must be sorted");
  return Predictor(std::make_shared<const detail::IsotonicPred>(std::move(base), std::move(knots), std::move(values)));
}

inline Predictor Predictor::glm(std::string transfer, std::function<double(double)> gprime, Hypothesis score) {
  return Predictor(std::make_shared<const detail::GlmPred>(std::move(transfer), std::move(gprime), std::move(score)));
}

inline Predictor Predictor::function(std::string tag, std::function<double(const Point&)> f) {
  return Predictor(std::make_shared<const detail::FunctionPred>(std::move(tag), std::move(f)));
}

inline Predictor clip(Hypothesis score) { return Predictor::clipped(std::move(score)); }

inline Predictor clip(std::function<double(const Point&)> score) {
  return Predictor::function("clip", [f = std::move(score)](const Point& x) { return clamp01(f(x)); });
}

}  // namespace calma
