#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "calma/core/types.hpp"

namespace calma {

struct ActionInterval {
  double lo = -1.0;
  double hi = 1.0;
  bool contains(double t) const { return t >= lo && t <= hi; }
  bool finite() const { return std::isfinite(lo) && std::isfinite(hi); }
};

inline constexpr double kInf = std::numeric_limits<double>::infinity();

class GlmLoss;

// A loss on binary labels, given by its two label slices t -> ℓ(0,t) and t -> ℓ(1,t).
class Loss {
 public:
  using Fn = std::function<double(double)>;

  Loss(std::string name, Fn at0, Fn at1, ActionInterval domain = {}, std::optional<double> lipschitz = std::nullopt,
       Fn decision = {})
      : name_(std::move(name)),
        at0_(std::move(at0)),
        at1_(std::move(at1)),
        domain_(domain),
        lipschitz_(lipschitz),
        decision_(std::move(decision)) {}

  double operator()(int y, double t) const { return y == 1 ? at1_(t) : at0_(t); }
  double at0(double t) const { return at0_(t); }
  double at1(double t) const { return at1_(t); }
  // ℓ(p,t) = p ℓ(1,t) + (1-p) ℓ(0,t)
  double expected(double p, double t) const { return p * at1_(t) + (1.0 - p) * at0_(t); }
  // ∂ℓ(t) = ℓ(1,t) - ℓ(0,t)
  double derivative(double t) const { return at1_(t) - at0_(t); }

  const std::string& name() const { return name_; }
  ActionInterval action_domain() const { return domain_; }
  std::optional<double> lipschitz_bound() const { return lipschitz_; }
  bool has_closed_form_decision() const { return static_cast<bool>(decision_); }
  double closed_form_decision(double p) const { return decision_(p); }

  const GlmLoss* glm() const { return glm_.get(); }
  Loss with_glm(std::shared_ptr<const GlmLoss> g) const {
    Loss l = *this;
    l.glm_ = std::move(g);
    return l;
  }

 private:
  std::string name_;
  Fn at0_, at1_;
  ActionInterval domain_;
  std::optional<double> lipschitz_;
  Fn decision_;
  std::shared_ptr<const GlmLoss> glm_;
};

namespace detail {

inline double golden_min(const std::function<double(double)>& f, double a, double b, double tol) {
  const double r = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < 300 && b - a > tol; ++it) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  return fc <= fd ? c : d;
}

// prefer smaller |t|, then the positive one
inline bool better_action(double t, double best) {
  if (std::abs(t) != std::abs(best)) return std::abs(t) < std::abs(best);
  return t > best;
}

}  // namespace detail

// k_ℓ(p): a global minimizer of ℓ(p,·), the smallest in absolute value, ties toward positive.
inline double optimal_decision(const Loss& loss, double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("optimal_decision: p must lie in [0,1]");
  if (loss.has_closed_form_decision()) return loss.closed_form_decision(p);
  const ActionInterval dom = loss.action_domain();
  if (!dom.finite()) throw ValidationError("optimal_decision: numeric minimization needs a bounded action domain");
  auto f = [&](double t) { return loss.expected(p, t); };
  constexpr int N = 2000;
  std::vector<double> ts(N + 1), fs(N + 1);
  for (int i = 0; i <= N; ++i) {
    ts[i] = i == N ? dom.hi : dom.lo + (dom.hi - dom.lo) * static_cast<double>(i) / N;
    fs[i] = f(ts[i]);
    if (!std::isfinite(fs[i])) throw ConvergenceError("optimal_decision: loss '" + loss.name() + "' is not finite");
  }
  std::vector<std::pair<double, double>> cands;
  for (int i = 0; i <= N; ++i) {
    bool left = i == 0 || fs[i] <= fs[i - 1];
    bool right = i == N || fs[i] <= fs[i + 1];
    if (!(left && right)) continue;
    cands.emplace_back(ts[i], fs[i]);
    bool strict = (i > 0 && fs[i] < fs[i - 1]) || (i < N && fs[i] < fs[i + 1]);
    if (strict) {
      double a = ts[std::max(0, i - 1)], b = ts[std::min(N, i + 1)];
      double t = detail::golden_min(f, a, b, 1e-10);
      cands.emplace_back(t, f(t));
    }
  }
  double best = kInf;
  for (const auto& [t, v] : cands) best = std::min(best, v);
  const double tol = 1e-12 * (1.0 + std::abs(best));
  double pick = kInf;
  for (const auto& [t, v] : cands)
    if (v <= best + tol && (std::isinf(pick) || detail::better_action(t, pick))) pick = t;
  return pick;
}

inline Loss lp_loss(double q) {
  if (!(q >= 1.0)) throw DomainError("lp_loss: p must be >= 1");
  std::string name = q == 1.0 ? "l1" : q == 2.0 ? "l2" : q == 4.0 ? "l4" : "lp:" + std::to_string(q);
  auto at0 = [q](double t) { return std::pow(std::abs(t), q) / q; };
  auto at1 = [q](double t) { return std::pow(std::abs(1.0 - t), q) / q; };
  Loss::Fn k;
  if (q == 1.0) {
    k = [](double p) { return p >= 0.5 ? 1.0 : 0.0; };
  } else {
    k = [q](double p) {
      if (p <= 0.0) return 0.0;
      if (p >= 1.0) return 1.0;
      return 1.0 / (1.0 + std::pow((1.0 - p) / p, 1.0 / (q - 1.0)));
    };
  }
  return Loss(name, at0, at1, {-1.0, 1.0}, 1.0, k);
}

// ℓ(y,t) = (y-t)^2 without the 1/2 normalization
inline Loss squared_error_loss() {
  return Loss(
      "sq", [](double t) { return t * t; }, [](double t) { return (1.0 - t) * (1.0 - t); }, {-1.0, 1.0}, 2.0,
      [](double p) { return p; });
}

// ℓ(y,t) = exp(-(2y-1)t)
inline Loss exp_loss() {
  return Loss(
      "exp", [](double t) { return std::exp(t); }, [](double t) { return std::exp(-t); }, {-kInf, kInf}, std::nullopt,
      [](double p) {
        if (p <= 0.0 || p >= 1.0) throw DomainError("exp loss: optimal decision is unbounded at p in {0,1}");
        return 0.5 * std::log(p / (1.0 - p));
      });
}

// ℓ(y,t) = exp(|y-t|)
inline Loss exp_abs_loss() {
  return Loss(
      "expabs", [](double t) { return std::exp(std::abs(t)); }, [](double t) { return std::exp(std::abs(1.0 - t)); },
      {-1.0, 1.0}, std::nullopt, [](double p) {
        if (p <= 0.0) return 0.0;
        if (p >= 1.0) return 1.0;
        return std::clamp(0.5 + 0.5 * std::log(p / (1.0 - p)), 0.0, 1.0);
      });
}

// Matching loss ℓ_g(y,t) = g(t) - y t of a monotone transfer g'.
class GlmLoss {
 public:
  using Fn = std::function<double(double)>;

  GlmLoss(std::string name, Fn gprime, Fn g, Fn inverse, Fn dual, ActionInterval working, ActionInterval image,
          bool image_open, bool strict)
      : name_(std::move(name)),
        gprime_(std::move(gprime)),
        g_(std::move(g)),
        inverse_(std::move(inverse)),
        dual_(std::move(dual)),
        working_(working),
        image_(image),
        image_open_(image_open),
        strict_(strict) {}

  const std::string& name() const { return name_; }
  double transfer(double t) const { return gprime_(t); }
  double integral(double t) const { return g_(t); }
  // f(v) = v t* - g(t*) with t* = g'^{-1}(v)
  double dual(double v) const {
    check_image(v, "dual");
    return dual_(v);
  }
  // f'(v) = t*, infinite at an open image boundary
  double dual_derivative(double v) const {
    check_image(v, "dual_derivative");
    if (image_open_ && (v == image_.lo || v == image_.hi)) return v == image_.lo ? -kInf : kInf;
    return inverse_(v);
  }
  double inverse(double p) const {
    if (!in_image(p) || (image_open_ && (p == image_.lo || p == image_.hi)))
      throw DomainError("transfer_inverse: " + std::to_string(p) + " is outside the image of " + name_);
    return inverse_(p);
  }
  ActionInterval working_interval() const { return working_; }
  ActionInterval image() const { return image_; }
  bool image_open() const { return image_open_; }
  bool strictly_increasing() const { return strict_; }
  bool in_image(double v) const { return v >= image_.lo && v <= image_.hi; }
  const Fn& transfer_fn() const { return gprime_; }

  Loss loss() const {
    auto g = g_;
    Loss::Fn at0 = [g](double t) { return g(t); };
    Loss::Fn at1 = [g](double t) { return g(t) - t; };
    auto self = std::make_shared<const GlmLoss>(*this);
    Loss::Fn k = [self](double p) { return self->inverse(p); };
    return Loss("glm:" + name_, at0, at1, working_, std::nullopt, k).with_glm(self);
  }

 private:
  void check_image(double v, const char* what) const {
    if (!in_image(v)) throw DomainError(std::string(what) + ": argument outside the image of " + name_);
  }

  std::string name_;
  Fn gprime_, g_, inverse_, dual_;
  ActionInterval working_, image_;
  bool image_open_, strict_;
};

inline GlmLoss glm_identity() {
  return GlmLoss(
      "identity", [](double t) { return t; }, [](double t) { return 0.5 * t * t; }, [](double p) { return p; },
      [](double v) { return 0.5 * v * v; }, {-kInf, kInf}, {-kInf, kInf}, false, true);
}

inline GlmLoss glm_sigmoid() {
  auto sig = [](double t) { return t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t)); };
  auto softplus = [](double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); };
  auto xlogx = [](double v) { return v <= 0.0 ? 0.0 : v * std::log(v); };
  return GlmLoss(
      "sigmoid", sig, softplus, [](double p) { return std::log(p / (1.0 - p)); },
      [xlogx](double v) { return xlogx(v) + xlogx(1.0 - v); }, {-kInf, kInf}, {0.0, 1.0}, true, true);
}

inline GlmLoss glm_crelu() {
  return GlmLoss(
      "crelu", [](double t) { return std::clamp(t, 0.0, 1.0); },
      [](double t) { return t <= 0.0 ? 0.0 : (t < 1.0 ? 0.5 * t * t : t - 0.5); }, [](double p) { return p; },
      [](double v) { return 0.5 * v * v; }, {-kInf, kInf}, {0.0, 1.0}, false, false);
}

namespace detail {

inline double simpson_step(const std::function<double(double)>& f, double a, double b, double fa, double fm,
                           double fb, double whole, double tol, int depth) {
  double m = 0.5 * (a + b), lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  double flm = f(lm), frm = f(rm);
  double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm), right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  double diff = left + right - whole;
  if (depth <= 0 || std::abs(diff) <= 15.0 * tol) return left + right + diff / 15.0;
  return simpson_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) +
         simpson_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1);
}

inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol) {
  if (a == b) return 0.0;
  double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson_step(f, a, b, fa, fm, fb, whole, tol, 50);
}

}  // namespace detail

// Builds the matching loss of an arbitrary transfer on a bounded working interval.
inline GlmLoss glm_from_transfer(std::function<double(double)> gprime, std::string name, ActionInterval working) {
  if (!working.finite() || !(working.lo < 0.0 && working.hi > 0.0))
    throw ValidationError("glm_from_transfer: working interval must be bounded and contain 0");
  constexpr int N = 1000;
  bool strict = true;
  double prev = gprime(working.lo);
  for (int i = 1; i <= N; ++i) {
    double t = working.lo + (working.hi - working.lo) * i / N;
    double v = gprime(t);
    if (!std::isfinite(v)) throw ValidationError("glm_from_transfer: transfer is not finite");
    if (v < prev) throw ValidationError("glm_from_transfer: monotonicity violation in transfer " + name);
    if (v == prev) strict = false;
    prev = v;
  }
  const double img_lo = gprime(working.lo), img_hi = gprime(working.hi);
  if (img_lo > 0.0 || img_hi < 1.0) throw ValidationError("glm_from_transfer: image of the transfer must cover [0,1]");
  auto g = [gprime](double t) { return detail::adaptive_simpson(gprime, 0.0, t, 1e-10); };
  auto inverse = [gprime, working](double p) {
    double g0 = gprime(0.0);
    if (g0 == p) return 0.0;
    // smallest |t| with g'(t) = p: leftmost root on the positive side, rightmost on the negative side
    double a, b;
    bool positive = g0 < p;
    if (positive) {
      a = 0.0;
      b = working.hi;
    } else {
      a = working.lo;
      b = 0.0;
    }
    for (int it = 0; it < 400 && b - a > 1e-12 * std::max(1.0, std::abs(a)); ++it) {
      double m = 0.5 * (a + b);
      bool go_left = positive ? gprime(m) >= p : gprime(m) > p;
      if (go_left)
        b = m;
      else
        a = m;
    }
    return positive ? b : a;
  };
  auto dual = [g, inverse](double v) {
    double t = inverse(v);
    return v * t - g(t);
  };
  return GlmLoss(std::move(name), std::move(gprime), g, inverse, dual, working, {img_lo, img_hi}, false, strict);
}

inline GlmLoss glm_by_name(const std::string& name) {
  if (name == "identity") return glm_identity();
  if (name == "sigmoid") return glm_sigmoid();
  if (name == "crelu") return glm_crelu();
  throw ValidationError("unknown transfer: " + name);
}

inline double transfer_inverse(const GlmLoss& glm, double p) { return glm.inverse(p); }

// D_f(v*, v) = f(v*) - f(v) - (v* - v) f'(v)
inline double bregman(const GlmLoss& glm, double vstar, double v) {
  if (!glm.in_image(vstar) || !glm.in_image(v)) throw DomainError("bregman: arguments outside the image of the transfer");
  if (vstar == v) return 0.0;
  if (glm.name() == "sigmoid") {
    if (v <= 0.0 || v >= 1.0) return kInf;
    auto term = [](double a, double b) { return a <= 0.0 ? 0.0 : a * std::log(a / b); };
    return term(vstar, v) + term(1.0 - vstar, 1.0 - v);
  }
  double fp = glm.dual_derivative(v);
  if (std::isinf(fp)) return kInf;
  return glm.dual(vstar) - glm.dual(v) - (vstar - v) * fp;
}

struct TruncatedDecision {
  std::function<double(double)> kfn;
  double bound = 1.0;
  double suboptimality = 0.0;
  double delta = 0.0;
  double operator()(double p) const { return kfn(p); }
};

// kfn(p) = clamp(g'^{-1}(p), -D, D) with D doubled from 1 until the grid suboptimality is at most delta
inline TruncatedDecision truncated_decision(const GlmLoss& glm, double delta, double cap = 1024.0) {
  if (!(delta > 0.0)) throw ValidationError("truncated_decision: delta must be positive");
  auto self = std::make_shared<const GlmLoss>(glm);
  for (double D = 1.0; D <= cap; D *= 2.0) {
    auto kfn = [self, D](double p) {
      double t = self->image_open() && (p <= self->image().lo || p >= self->image().hi)
                     ? (p <= self->image().lo ? -kInf : kInf)
                     : self->inverse(p);
      return std::clamp(t, -D, D);
    };
    double worst = 0.0;
    for (int i = 0; i <= 1000; ++i) {
      double p = i / 1000.0;
      worst = std::max(worst, bregman(*self, p, self->transfer(kfn(p))));
    }
    if (worst <= delta) return TruncatedDecision{kfn, D, worst, delta};
  }
  throw ConvergenceError("truncated_decision: bound exceeded the cap before reaching the target suboptimality");
}

// registry: l1, l2, l4, lp:<p>, glm:identity, glm:sigmoid, glm:crelu, exp, expabs, sq
inline Loss make_loss(const std::string& name) {
  if (name == "l1") return lp_loss(1.0);
  if (name == "l2") return lp_loss(2.0);
  if (name == "l4") return lp_loss(4.0);
  if (name.rfind("lp:", 0) == 0) {
    try {
      return lp_loss(std::stod(name.substr(3)));
    } catch (const std::invalid_argument&) {
      throw ValidationError("bad lp exponent in " + name);
    }
  }
  if (name.rfind("glm:", 0) == 0) return glm_by_name(name.substr(4)).loss();
  if (name == "exp") return exp_loss();
  if (name == "expabs") return exp_abs_loss();
  if (name == "sq") return squared_error_loss();
  throw ValidationError("unknown loss: " + name);
}

inline std::vector<std::string> registry_names() {
  return {"l1", "l2", "l4", "glm:identity", "glm:sigmoid", "glm:crelu", "exp", "expabs", "sq"};
}

// sup |∂ℓ| over the finite part of the action domain, sampled on a grid
inline double derivative_sup(const Loss& loss, double clamp_range = 10.0) {
  ActionInterval d = loss.action_domain();
  double lo = std::max(d.lo, -clamp_range), hi = std::min(d.hi, clamp_range);
  double s = 0.0;
  for (int i = 0; i <= 2000; ++i) s = std::max(s, std::abs(loss.derivative(lo + (hi - lo) * i / 2000.0)));
  return s;
}

}  // namespace calma
