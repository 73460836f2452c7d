#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "calma/core/types.hpp"

namespace calma {

using json = nlohmann::json;

namespace detail {

struct HypNode {
  virtual ~HypNode() = default;
  virtual double eval(const Point& x) const = 0;
  virtual json to_json() const = 0;
};

inline std::string fmt_real(double v) {
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}

}  // namespace detail

// Real-valued feature function with a declared range bound and a stable tag.
class Hypothesis {
 public:
  // the zero function
  Hypothesis();

  double operator()(const Point& x) const { return node_->eval(x); }
  double bound() const { return bound_; }
  const std::string& tag() const { return tag_; }

  static Hypothesis constant(double v);
  static Hypothesis coordinate(std::size_t index, double scale = 1.0, std::optional<double> bound = std::nullopt);
  static Hypothesis affine(std::vector<double> weights, double bias, double bound);
  static Hypothesis table(std::vector<Point> points, std::vector<double> values);
  static Hypothesis linear(std::vector<std::pair<double, Hypothesis>> terms);
  static Hypothesis function(std::string tag, double bound, std::function<double(const Point&)> f);

  Hypothesis negated() const;
  Hypothesis power(int j) const;
  Hypothesis indicator(double lo, double hi, bool closed_hi) const;
  Hypothesis equals(double v) const;
  // post-composition with a scalar map; not serializable
  Hypothesis composed(std::string tag, double bound, std::function<double(double)> f) const;

  Hypothesis with_bound(double b) const {
    Hypothesis h = *this;
    h.bound_ = b;
    return h;
  }

  json to_json() const;
  static Hypothesis from_json(const json& j);

 private:
  Hypothesis(std::shared_ptr<const detail::HypNode> n, double b, std::string t)
      : node_(std::move(n)), bound_(b), tag_(std::move(t)) {}

  std::shared_ptr<const detail::HypNode> node_;
  double bound_ = 0.0;
  std::string tag_;

  template <class N, class... A>
  friend Hypothesis make_hypothesis(double bound, std::string tag, A&&... args);
  friend const detail::HypNode* node_of(const Hypothesis& h);
};

template <class N, class... A>
Hypothesis make_hypothesis(double bound, std::string tag, A&&... args) {
  return Hypothesis(std::make_shared<const N>(std::forward<A>(args)...), bound, std::move(tag));
}

inline const detail::HypNode* node_of(const Hypothesis& h) { return h.node_.get(); }

namespace detail {

struct ConstNode : HypNode {
  double v;
  explicit ConstNode(double value) : v(value) {}
  double eval(const Point&) const override { return v; }
  json to_json() const override { return {{"kind", "const"}, {"value", v}}; }
};

struct CoordNode : HypNode {
  std::size_t index;
  double scale;
  CoordNode(std::size_t i, double s) : index(i), scale(s) {}
  double eval(const Point& x) const override {
    if (index >= x.size()) throw DomainError("coordinate index out of range");
    return scale * x[index];
  }
  json to_json() const override { return {{"kind", "coord"}, {"index", index}, {"scale", scale}}; }
};

struct AffineNode : HypNode {
  std::vector<double> w;
  double b;
  AffineNode(std::vector<double> weights, double bias) : w(std::move(weights)), b(bias) {}
  double eval(const Point& x) const override {
    if (x.size() != w.size()) throw DomainError("affine hypothesis: dimension mismatch");
    double s = b;
    for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * x[i];
    return s;
  }
  json to_json() const override { return {{"kind", "affine"}, {"weights", w}, {"bias", b}}; }
};

struct TableNode : HypNode {
  std::map<Point, double> table;
  explicit TableNode(std::map<Point, double> t) : table(std::move(t)) {}
  double eval(const Point& x) const override {
    auto it = table.find(x);
    if (it == table.end()) throw DomainError("table hypothesis: point outside the domain");
    return it->second;
  }
  json to_json() const override {
    json pts = json::array(), vals = json::array();
    for (const auto& [p, v] : table) {
      pts.push_back(p);
      vals.push_back(v);
    }
    return {{"kind", "table"}, {"points", pts}, {"values", vals}};
  }
};

struct LinearNode : HypNode {
  std::vector<std::pair<double, Hypothesis>> terms;
  explicit LinearNode(std::vector<std::pair<double, Hypothesis>> t) : terms(std::move(t)) {}
  double eval(const Point& x) const override {
    double s = 0.0;
    for (const auto& [w, h] : terms) s += w * h(x);
    return s;
  }
  json to_json() const override {
    json ts = json::array();
    for (const auto& [w, h] : terms) ts.push_back({{"weight", w}, {"h", h.to_json()}});
    return {{"kind", "linear"}, {"terms", ts}};
  }
};

struct NegNode : HypNode {
  Hypothesis inner;
  explicit NegNode(Hypothesis h) : inner(std::move(h)) {}
  double eval(const Point& x) const override { return -inner(x); }
  json to_json() const override { return {{"kind", "neg"}, {"of", inner.to_json()}}; }
};

struct IntervalNode : HypNode {
  Hypothesis inner;
  double lo, hi;
  bool closed_hi;
  IntervalNode(Hypothesis h, double l, double u, bool c) : inner(std::move(h)), lo(l), hi(u), closed_hi(c) {}
  double eval(const Point& x) const override {
    double v = inner(x);
    return (v >= lo && (v < hi || (closed_hi && v <= hi))) ? 1.0 : 0.0;
  }
  json to_json() const override {
    return {{"kind", "interval"}, {"of", inner.to_json()}, {"lo", lo}, {"hi", hi}, {"closed_hi", closed_hi}};
  }
};

struct EqualsNode : HypNode {
  Hypothesis inner;
  double v;
  EqualsNode(Hypothesis h, double value) : inner(std::move(h)), v(value) {}
  double eval(const Point& x) const override { return inner(x) == v ? 1.0 : 0.0; }
  json to_json() const override { return {{"kind", "equals"}, {"of", inner.to_json()}, {"value", v}}; }
};

struct PowerNode : HypNode {
  Hypothesis inner;
  int j;
  PowerNode(Hypothesis h, int e) : inner(std::move(h)), j(e) {}
  double eval(const Point& x) const override {
    double v = inner(x), r = 1.0;
    for (int k = 0; k < j; ++k) r *= v;
    return r;
  }
  json to_json() const override { return {{"kind", "power"}, {"of", inner.to_json()}, {"exponent", j}}; }
};

struct FunctionNode : HypNode {
  std::function<double(const Point&)> f;
  explicit FunctionNode(std::function<double(const Point&)> fn) : f(std::move(fn)) {}
  double eval(const Point& x) const override { return f(x); }
  json to_json() const override { throw ValidationError("function hypotheses are not serializable"); }
};

struct ComposeNode : HypNode {
  Hypothesis inner;
  std::function<double(double)> f;
  ComposeNode(Hypothesis h, std::function<double(double)> fn) : inner(std::move(h)), f(std::move(fn)) {}
  double eval(const Point& x) const override { return f(inner(x)); }
  json to_json() const override { throw ValidationError("composed hypotheses are not serializable"); }
};

}  // namespace detail

inline Hypothesis Hypothesis::constant(double v) {
  std::string tag = v == 1.0 ? "1" : "const:" + detail::fmt_real(v);
  return make_hypothesis<detail::ConstNode>(std::abs(v), tag, v);
}

inline Hypothesis::Hypothesis() : Hypothesis(constant(0.0)) {}

inline Hypothesis Hypothesis::coordinate(std::size_t index, double scale, std::optional<double> bound) {
  std::string tag = "x" + std::to_string(index);
  if (scale != 1.0) tag += "*" + detail::fmt_real(scale);
  return make_hypothesis<detail::CoordNode>(bound.value_or(std::abs(scale)), tag, index, scale);
}

inline Hypothesis Hypothesis::affine(std::vector<double> weights, double bias, double bound) {
  std::string tag = "affine[";
  for (std::size_t i = 0; i < weights.size(); ++i) tag += detail::fmt_real(weights[i]) + ",";
  tag += detail::fmt_real(bias) + "]";
  return make_hypothesis<detail::AffineNode>(bound, tag, std::move(weights), bias);
}

inline Hypothesis Hypothesis::table(std::vector<Point> points, std::vector<double> values) {
  if (points.size() != values.size()) throw ValidationError("table hypothesis: size mismatch");
  std::map<Point, double> t;
  double b = 0.0;
  std::ostringstream tag;
  tag << "table[";
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!std::isfinite(values[i])) throw ValidationError("table hypothesis: non-finite value");
    t[points[i]] = values[i];
    b = std::max(b, std::abs(values[i]));
    tag << detail::fmt_real(values[i]) << (i + 1 < points.size() ? "," : "");
  }
  tag << "]";
  return make_hypothesis<detail::TableNode>(b, tag.str(), std::move(t));
}

inline Hypothesis Hypothesis::linear(std::vector<std::pair<double, Hypothesis>> terms) {
  double b = 0.0;
  std::string tag = "lin(";
  for (std::size_t i = 0; i < terms.size(); ++i) {
    b += std::abs(terms[i].first) * terms[i].second.bound();
    tag += detail::fmt_real(terms[i].first) + "*" + terms[i].second.tag() + (i + 1 < terms.size() ? "+" : "");
  }
  tag += ")";
  return make_hypothesis<detail::LinearNode>(b, tag, std::move(terms));
}

inline Hypothesis Hypothesis::function(std::string tag, double bound, std::function<double(const Point&)> f) {
  return make_hypothesis<detail::FunctionNode>(bound, std::move(tag), std::move(f));
}

inline Hypothesis Hypothesis::negated() const {
  if (auto n = dynamic_cast<const detail::NegNode*>(node_.get())) return n->inner;
  return make_hypothesis<detail::NegNode>(bound_, "-(" + tag_ + ")", *this);
}

inline Hypothesis Hypothesis::power(int j) const {
  if (j < 1) throw ValidationError("power: exponent must be >= 1");
  if (j == 1) return *this;
  return make_hypothesis<detail::PowerNode>(std::pow(bound_, j), "(" + tag_ + ")^" + std::to_string(j), *this, j);
}

inline Hypothesis Hypothesis::indicator(double lo, double hi, bool closed_hi) const {
  std::string tag = "1{" + tag_ + " in [" + detail::fmt_real(lo) + "," + detail::fmt_real(hi) + (closed_hi ? "]}" : ")}");
  return make_hypothesis<detail::IntervalNode>(1.0, tag, *this, lo, hi, closed_hi);
}

inline Hypothesis Hypothesis::equals(double v) const {
  return make_hypothesis<detail::EqualsNode>(1.0, "1{" + tag_ + "=" + detail::fmt_real(v) + "}", *this, v);
}

inline Hypothesis Hypothesis::composed(std::string tag, double bound, std::function<double(double)> f) const {
  return make_hypothesis<detail::ComposeNode>(bound, tag + "(" + tag_ + ")", *this, std::move(f));
}

inline json Hypothesis::to_json() const {
  json j = node_->to_json();
  j["tag"] = tag_;
  j["bound"] = bound_;
  return j;
}

inline Hypothesis Hypothesis::from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  Hypothesis h = [&]() -> Hypothesis {
    if (kind == "const") return constant(j.at("value").get<double>());
    if (kind == "coord") return coordinate(j.at("index").get<std::size_t>(), j.at("scale").get<double>());
    if (kind == "affine")
      return affine(j.at("weights").get<std::vector<double>>(), j.at("bias").get<double>(), j.at("bound").get<double>());
    if (kind == "table")
      return table(j.at("points").get<std::vector<Point>>(), j.at("values").get<std::vector<double>>());
    if (kind == "linear") {
      std::vector<std::pair<double, Hypothesis>> terms;
      for (const auto& t : j.at("terms")) terms.emplace_back(t.at("weight").get<double>(), from_json(t.at("h")));
      return linear(std::move(terms));
    }
    if (kind == "neg") return from_json(j.at("of")).negated();
    if (kind == "interval")
      return from_json(j.at("of")).indicator(j.at("lo").get<double>(), j.at("hi").get<double>(),
                                             j.at("closed_hi").get<bool>());
    if (kind == "equals") return from_json(j.at("of")).equals(j.at("value").get<double>());
    if (kind == "power") return from_json(j.at("of")).power(j.at("exponent").get<int>());
    throw ValidationError("unknown hypothesis kind: " + kind);
  }();
  if (j.contains("tag")) h.tag_ = j.at("tag").get<std::string>();
  if (j.contains("bound")) h.bound_ = j.at("bound").get<double>();
  return h;
}

inline std::string negation_tag(const std::string& tag) {
  if (tag.size() > 3 && tag.rfind("-(", 0) == 0 && tag.back() == ')') {
    // only strip when the parentheses enclose the whole tag
    int depth = 0;
    bool whole = true;
    for (std::size_t i = 1; i + 1 < tag.size(); ++i) {
      if (tag[i] == '(') ++depth;
      if (tag[i] == ')' && --depth == 0) {
        whole = false;
        break;
      }
    }
    if (whole) return tag.substr(2, tag.size() - 3);
  }
  return "-(" + tag + ")";
}

class HypothesisClass {
 public:
  HypothesisClass() = default;
  explicit HypothesisClass(std::vector<Hypothesis> members) : members_(std::move(members)) { refresh_flags(); }

  // adds the constant 1 and -c for every member lacking its negation
  HypothesisClass with_negations() const {
    std::vector<Hypothesis> out = members_;
    std::set<std::string> tags;
    for (const auto& h : out) tags.insert(h.tag());
    if (!tags.count("1")) {
      out.push_back(Hypothesis::constant(1.0));
      tags.insert("1");
    }
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i) {
      std::string nt = negation_tag(out[i].tag());
      if (!tags.count(nt)) {
        out.push_back(out[i].negated());
        tags.insert(nt);
      }
    }
    return HypothesisClass(std::move(out));
  }

  static HypothesisClass closed(std::vector<Hypothesis> members) {
    return HypothesisClass(std::move(members)).with_negations();
  }

  const std::vector<Hypothesis>& members() const { return members_; }
  std::size_t size() const { return members_.size(); }
  bool empty() const { return members_.empty(); }
  const Hypothesis& operator[](std::size_t i) const { return members_[i]; }
  auto begin() const { return members_.begin(); }
  auto end() const { return members_.end(); }

  bool contains_one() const { return contains_one_; }
  bool negation_closed() const { return negation_closed_; }

  std::optional<std::size_t> find(const std::string& tag) const {
    for (std::size_t i = 0; i < members_.size(); ++i)
      if (members_[i].tag() == tag) return i;
    return std::nullopt;
  }

  double max_bound() const {
    double b = 0.0;
    for (const auto& h : members_) b = std::max(b, h.bound());
    return b;
  }

 private:
  void refresh_flags() {
    std::set<std::string> tags;
    for (const auto& h : members_) tags.insert(h.tag());
    contains_one_ = tags.count("1") > 0;
    negation_closed_ = std::all_of(members_.begin(), members_.end(),
                                   [&](const Hypothesis& h) { return tags.count(negation_tag(h.tag())) > 0; });
  }

  std::vector<Hypothesis> members_;
  bool contains_one_ = false;
  bool negation_closed_ = false;
};

inline Hypothesis lin_combination(const HypothesisClass& cls, const std::map<std::string, double>& weights, double B) {
  double l1 = 0.0;
  for (const auto& [t, w] : weights) l1 += std::abs(w);
  if (l1 > B * (1.0 + 1e-12) + 1e-15)
    throw BudgetExceededError("lin_combination: L1 norm " + detail::fmt_real(l1) + " exceeds budget " +
                              detail::fmt_real(B));
  std::vector<std::pair<double, Hypothesis>> terms;
  for (const auto& [t, w] : weights) {
    auto idx = cls.find(t);
    if (!idx) throw ValidationError("lin_combination: unknown member tag " + t);
    terms.emplace_back(w, cls[*idx]);
  }
  return Hypothesis::linear(std::move(terms)).with_bound(B * cls.max_bound());
}

// Indicator basis {1{c=v}} over the observed values of each member on `domain`, negation closed.
inline HypothesisClass level_class(const HypothesisClass& cls, std::span<const Point> domain, std::size_t cap = 64) {
  std::vector<Hypothesis> out;
  std::set<std::vector<double>> seen;
  for (const auto& c : cls) {
    std::set<double> values;
    for (const auto& x : domain) {
      values.insert(c(x));
      if (values.size() > cap)
        throw ValidationError("level_class: member " + c.tag() + " takes more than " + std::to_string(cap) +
                              " distinct values");
    }
    for (double v : values) {
      Hypothesis ind = c.equals(v);
      std::vector<double> sig;
      sig.reserve(domain.size());
      for (const auto& x : domain) sig.push_back(ind(x));
      if (seen.insert(sig).second) out.push_back(ind);
    }
  }
  return HypothesisClass::closed(std::move(out));
}

// Raw interval indicators 1{c(x) in I_j} for the partition of [-1,1] into ceil(2/delta) pieces.
inline std::vector<Hypothesis> interval_indicators(const HypothesisClass& cls, double delta) {
  if (!(delta > 0.0 && delta <= 2.0)) throw ValidationError("interval_class: delta must lie in (0,2]");
  const auto m = static_cast<std::size_t>(std::ceil(2.0 / delta - 1e-12));
  std::vector<Hypothesis> out;
  for (const auto& c : cls) {
    for (std::size_t j = 0; j < m; ++j) {
      double lo = -1.0 + static_cast<double>(j) * delta;
      bool last = j + 1 == m;
      double hi = last ? 1.0 : -1.0 + static_cast<double>(j + 1) * delta;
      out.push_back(c.indicator(lo, hi, last));
    }
  }
  return out;
}

inline HypothesisClass interval_class(const HypothesisClass& cls, double delta) {
  return HypothesisClass::closed(interval_indicators(cls, delta));
}

inline HypothesisClass power_class(const HypothesisClass& cls, int d) {
  if (d < 1) throw ValidationError("power_class: d must be >= 1");
  std::vector<Hypothesis> out;
  for (int j = 1; j <= d; ++j)
    for (const auto& c : cls) out.push_back(c.power(j));
  return HypothesisClass::closed(std::move(out));
}

// Coordinates 0..d-1 scaled into [-1,1] by the largest magnitude seen on `domain`; negation closed.
inline HypothesisClass coordinate_class(std::span<const Point> domain) {
  if (domain.empty()) throw ValidationError("coordinate_class: empty domain");
  const std::size_t d = domain.front().size();
  std::vector<Hypothesis> out;
  for (std::size_t i = 0; i < d; ++i) {
    double mx = 0.0;
    for (const auto& x : domain) mx = std::max(mx, std::abs(x[i]));
    double scale = mx > 0.0 ? 1.0 / mx : 1.0;
    out.push_back(Hypothesis::coordinate(i, scale, 1.0));
  }
  return HypothesisClass::closed(std::move(out));
}

// Indicators 1{x_i = v} for every coordinate and observed value (subcubes of a Boolean cube).
inline HypothesisClass subcube_class(std::span<const Point> domain) {
  if (domain.empty()) throw ValidationError("subcube_class: empty domain");
  std::vector<Hypothesis> out;
  for (std::size_t i = 0; i < domain.front().size(); ++i) {
    std::set<double> vals;
    for (const auto& x : domain) vals.insert(x[i]);
    for (double v : vals) out.push_back(Hypothesis::coordinate(i).equals(v));
  }
  return HypothesisClass::closed(std::move(out));
}

// Class spec grammar: coords | subcubes | level(<spec>) | int(<spec>,<delta>) | pow(<spec>,<d>)
inline HypothesisClass parse_class_spec(const std::string& spec, std::span<const Point> domain) {
  auto trim = [](std::string s) {
    s.erase(0, s.find_first_not_of(" \t"));
    s.erase(s.find_last_not_of(" \t") + 1);
    return s;
  };
  std::string s = trim(spec);
  if (s == "coords") return coordinate_class(domain);
  if (s == "subcubes") return subcube_class(domain);
  auto open = s.find('(');
  if (open == std::string::npos || s.back() != ')') throw ValidationError("unknown class spec: " + spec);
  std::string head = s.substr(0, open), body = s.substr(open + 1, s.size() - open - 2);
  if (head == "level") return level_class(parse_class_spec(body, domain), domain);
  int depth = 0;
  std::size_t comma = std::string::npos;
  for (std::size_t i = 0; i < body.size(); ++i) {
    if (body[i] == '(') ++depth;
    if (body[i] == ')') --depth;
    if (body[i] == ',' && depth == 0) comma = i;
  }
  if (comma == std::string::npos) throw ValidationError("class spec needs an argument: " + spec);
  HypothesisClass inner = parse_class_spec(body.substr(0, comma), domain);
  std::string arg = trim(body.substr(comma + 1));
  try {
    if (head == "int") return interval_class(inner, std::stod(arg));
    if (head == "pow") return power_class(inner, std::stoi(arg));
  } catch (const std::invalid_argument&) {
    throw ValidationError("bad numeric argument in class spec: " + spec);
  }
  throw ValidationError("unknown class spec: " + spec);
}

}  // namespace calma
