#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "calma/core/engine.hpp"
#include "calma/core/hypothesis.hpp"
#include "calma/core/predictor.hpp"
#include "calma/core/sampling.hpp"
#include "calma/losses.hpp"

namespace calma {

// max_c |E[c(x)(y - p(x))]|
inline double mae_values(std::span<const double> p, const HypothesisClass& cls, const ExpectationEngine& e) {
  double best = 0.0;
  std::vector<double> c(e.size());
  for (const auto& h : cls) {
    for (std::size_t i = 0; i < e.size(); ++i) c[i] = h(e.point(i));
    best = std::max(best, std::abs(e.correlation(c, p)));
  }
  return best;
}

inline double mae(const Predictor& pred, const HypothesisClass& cls, const ExpectationEngine& e) {
  return mae_values(e.evaluate(pred), cls, e);
}

// What the weak learner sees: weighted points and a residual, p* - p (exact) or y - p (empirical).
struct ResidualAccess {
  std::shared_ptr<const std::vector<Point>> points;
  std::vector<double> weights;
  std::vector<double> residual;
  bool exact = false;

  std::size_t size() const { return weights.size(); }

  static ResidualAccess from_engine(const ExpectationEngine& e, std::span<const double> p) {
    ResidualAccess r{e.points_ptr(), std::vector<double>(e.weights().begin(), e.weights().end()), {}, e.is_exact()};
    r.residual.resize(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) r.residual[i] = e.target(i) - p[i];
    return r;
  }

  double correlation(std::span<const double> c) const {
    double s = 0.0;
    for (std::size_t i = 0; i < size(); ++i) s += weights[i] * c[i] * residual[i];
    return s;
  }
};

struct WeakUpdate {
  Hypothesis direction;
  double step;
  double correlation;
};

class WeakLearner {
 public:
  virtual ~WeakLearner() = default;
  virtual std::optional<WeakUpdate> query(const ResidualAccess& access) const = 0;
  virtual double rho() const = 0;
  virtual double sigma() const = 0;
  virtual std::string name() const = 0;
};

// slack on comparisons against sigma, absorbing rounding accumulated over many additive updates
inline constexpr double kSigmaSlack = 1e-12;

class ExhaustiveWeakLearner : public WeakLearner {
 public:
  ExhaustiveWeakLearner(HypothesisClass cls, double rho, double sigma) : cls_(std::move(cls)), rho_(rho), sigma_(sigma) {
    if (!(sigma > 0.0 && sigma <= rho)) throw ValidationError("weak learner: need 0 < sigma <= rho");
    if (cls_.empty()) throw ValidationError("weak learner: empty class");
  }

  std::optional<WeakUpdate> query(const ResidualAccess& a) const override {
    const auto& vals = member_values(a.points);
    std::size_t best = 0;
    double best_corr = -kInf;
    for (std::size_t k = 0; k < cls_.size(); ++k) {
      double c = a.correlation(vals[k]);
      if (c > best_corr) {
        best_corr = c;
        best = k;
      }
    }
    if (best_corr < sigma_ - kSigmaSlack) return std::nullopt;
    return WeakUpdate{cls_[best], sigma_, best_corr};
  }

  double rho() const override { return rho_; }
  double sigma() const override { return sigma_; }
  std::string name() const override { return "exhaustive"; }
  const HypothesisClass& hypothesis_class() const { return cls_; }

 private:
  const std::vector<std::vector<double>>& member_values(const std::shared_ptr<const std::vector<Point>>& pts) const {
    std::lock_guard<std::mutex> lock(cache_->mu);
    if (cache_->points != pts) {
      cache_->points = pts;
      cache_->values.assign(cls_.size(), std::vector<double>(pts->size()));
      for (std::size_t k = 0; k < cls_.size(); ++k)
        for (std::size_t i = 0; i < pts->size(); ++i) cache_->values[k][i] = cls_[k]((*pts)[i]);
    }
    return cache_->values;
  }

  struct Cache {
    std::mutex mu;
    std::shared_ptr<const std::vector<Point>> points;
    std::vector<std::vector<double>> values;
  };

  HypothesisClass cls_;
  double rho_, sigma_;
  std::shared_ptr<Cache> cache_ = std::make_shared<Cache>();
};

// Fits the residual by weighted least squares on an affine function of the raw coordinates and
// proposes the fit itself as a unit-step update; returns ⊥ once the explained correlation drops below tol.
class LeastSquaresWeakLearner : public WeakLearner {
 public:
  explicit LeastSquaresWeakLearner(double tol = 1e-4, double ridge = 1e-10) : tol_(tol), ridge_(ridge) {
    if (!(tol > 0.0)) throw ValidationError("least-squares weak learner: tol must be positive");
  }

  std::optional<WeakUpdate> query(const ResidualAccess& a) const override {
    const auto& pts = *a.points;
    if (pts.empty()) return std::nullopt;
    const std::size_t d = pts.front().size(), n = pts.size();
    Eigen::MatrixXd X(n, d + 1);
    Eigen::VectorXd z(n), w(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) X(i, j) = pts[i][j];
      X(i, d) = 1.0;
      z(i) = a.residual[i];
      w(i) = a.weights[i];
    }
    Eigen::MatrixXd A = X.transpose() * w.asDiagonal() * X;
    A.diagonal().array() += ridge_;
    Eigen::VectorXd beta = A.ldlt().solve(X.transpose() * w.asDiagonal() * z);
    Eigen::VectorXd h = X * beta;
    double gain = (w.array() * h.array() * z.array()).sum();
    if (!(gain >= tol_)) return std::nullopt;
    std::vector<double> weights(beta.data(), beta.data() + d);
    Hypothesis dir = Hypothesis::affine(weights, beta(d), h.cwiseAbs().maxCoeff());
    return WeakUpdate{dir, 1.0, gain};
  }

  double rho() const override { return tol_; }
  double sigma() const override { return tol_; }
  std::string name() const override { return "least-squares"; }

 private:
  double tol_, ridge_;
};

inline ExhaustiveWeakLearner weak_learner_exhaustive(HypothesisClass cls, double rho, double sigma) {
  return ExhaustiveWeakLearner(std::move(cls), rho, sigma);
}

struct MaConfig {
  std::optional<std::size_t> max_updates;
  // rows per fresh batch in sampled mode
  std::size_t batch_size = 1000;
};

struct MaResult {
  Predictor predictor;
  std::size_t updates = 0;
  std::size_t wl_calls = 0;
  // l2(target, p_t)^2 after each update, starting at p0 (engine mode)
  std::vector<double> potential;
  std::vector<double> correlations;
};

namespace detail {

inline std::size_t ma_cap(const WeakLearner& wl, const MaConfig& cfg) {
  if (cfg.max_updates) return *cfg.max_updates;
  double s = wl.sigma();
  return static_cast<std::size_t>(std::ceil(4.0 / (s * s)));
}

}  // namespace detail

// MA against a fixed engine: the exact residual in exact mode, one fixed sample in empirical mode.
inline MaResult ma_algorithm(const Predictor& p0, double alpha, const WeakLearner& wl, const ExpectationEngine& e,
                             MaConfig cfg = {}) {
  if (alpha < wl.rho()) throw ValidationError("ma_algorithm: alpha must be at least the weak learner's rho");
  const std::size_t cap = detail::ma_cap(wl, cfg);
  std::vector<double> p = e.evaluate(p0);
  std::vector<std::pair<double, Hypothesis>> updates;
  MaResult res{p0};
  res.potential.push_back(l2_to_target_sq(p, e));
  for (;;) {
    auto upd = wl.query(ResidualAccess::from_engine(e, p));
    ++res.wl_calls;
    if (!upd) break;
    if (updates.size() >= cap)
      throw ConvergenceError("ma_algorithm: exceeded " + std::to_string(cap) + " updates; weak learner contract broken");
    for (std::size_t i = 0; i < e.size(); ++i) p[i] = clamp01(p[i] + upd->step * upd->direction(e.point(i)));
    updates.emplace_back(upd->step, upd->direction);
    res.correlations.push_back(upd->correlation);
    res.potential.push_back(l2_to_target_sq(p, e));
  }
  res.updates = updates.size();
  if (!updates.empty()) res.predictor = Predictor::boosted(p0, std::move(updates));
  return res;
}

// MA with a fresh batch from the sampler for every weak-learner call.
inline MaResult ma_algorithm(const Predictor& p0, double alpha, const WeakLearner& wl, Sampler& sampler,
                             MaConfig cfg = {}) {
  if (alpha < wl.rho()) throw ValidationError("ma_algorithm: alpha must be at least the weak learner's rho");
  const std::size_t cap = detail::ma_cap(wl, cfg);
  Predictor cur = p0;
  MaResult res{p0};
  for (;;) {
    auto e = ExpectationEngine::empirical(sampler.draw(cfg.batch_size));
    auto p = e.evaluate(cur);
    auto upd = wl.query(ResidualAccess::from_engine(e, p));
    ++res.wl_calls;
    if (!upd) break;
    if (res.updates >= cap)
      throw ConvergenceError("ma_algorithm: exceeded " + std::to_string(cap) + " updates; weak learner contract broken");
    cur = Predictor::boosted(cur, {{upd->step, upd->direction}});
    res.correlations.push_back(upd->correlation);
    ++res.updates;
  }
  res.predictor = cur;
  return res;
}

struct GlmFitConfig {
  double tol = 1e-6;
  std::size_t max_iter = 100000;
};

struct GlmFit {
  std::vector<double> weights;
  Predictor predictor;
  std::size_t iterations = 0;
  double kkt_residual = 0.0;
  std::vector<double> objective;
  Hypothesis score;
};

// min_w E[ℓ_g(y, Σ w_c c(x))] + α Σ|w_c| by proximal gradient; the step constant L only grows under backtracking
inline GlmFit l1_glm_fit(const HypothesisClass& cls, const GlmLoss& glm, double alpha, const ExpectationEngine& e,
                         GlmFitConfig cfg = {}) {
  if (glm.image().lo != 0.0 || glm.image().hi != 1.0)
    throw ValidationError("l1_glm_fit: the transfer's image must be exactly [0,1]");
  if (!(alpha > 0.0)) throw ValidationError("l1_glm_fit: alpha must be positive");
  const std::size_t K = cls.size(), n = e.size();
  std::vector<std::vector<double>> C(K, std::vector<double>(n));
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t i = 0; i < n; ++i) C[k][i] = cls[k](e.point(i));

  auto scores = [&](const std::vector<double>& w) {
    std::vector<double> h(n, 0.0);
    for (std::size_t k = 0; k < K; ++k)
      if (w[k] != 0.0)
        for (std::size_t i = 0; i < n; ++i) h[i] += w[k] * C[k][i];
    return h;
  };
  auto smooth = [&](const std::vector<double>& h) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += e.weight(i) * (glm.integral(h[i]) - e.target(i) * h[i]);
    return s;
  };
  auto gradient = [&](const std::vector<double>& h) {
    std::vector<double> r(n), g(K, 0.0);
    for (std::size_t i = 0; i < n; ++i) r[i] = e.weight(i) * (glm.transfer(h[i]) - e.target(i));
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t i = 0; i < n; ++i) g[k] += r[i] * C[k][i];
    return g;
  };
  auto l1 = [](const std::vector<double>& w) {
    double s = 0.0;
    for (double v : w) s += std::abs(v);
    return s;
  };
  auto kkt = [&](const std::vector<double>& w, const std::vector<double>& g) {
    double r = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      double v = w[k] != 0.0 ? std::abs(g[k] + alpha * (w[k] > 0 ? 1.0 : -1.0)) : std::max(0.0, std::abs(g[k]) - alpha);
      r = std::max(r, v);
    }
    return r;
  };

  std::vector<double> w(K, 0.0), h = scores(w), g = gradient(h);
  double fs = smooth(h), L = 1.0;
  GlmFit fit{w, Predictor::constant(0.5)};
  fit.objective.push_back(fs + alpha * l1(w));
  std::size_t it = 0;
  double res = kkt(w, g);
  while (res > cfg.tol) {
    if (it >= cfg.max_iter)
      throw ConvergenceError("l1_glm_fit: no convergence after " + std::to_string(it) +
                             " iterations, KKT residual " + std::to_string(res));
    ++it;
    std::vector<double> wn(K), hn;
    double fn = 0.0;
    for (int bt = 0; bt < 200; ++bt) {
      for (std::size_t k = 0; k < K; ++k) {
        double u = w[k] - g[k] / L, thr = alpha / L;
        wn[k] = u > thr ? u - thr : (u < -thr ? u + thr : 0.0);
      }
      hn = scores(wn);
      fn = smooth(hn);
      double quad = fs;
      for (std::size_t k = 0; k < K; ++k) quad += g[k] * (wn[k] - w[k]) + 0.5 * L * (wn[k] - w[k]) * (wn[k] - w[k]);
      if (fn <= quad + 1e-15 * std::abs(quad)) break;
      L *= 2.0;
    }
    w = std::move(wn);
    h = std::move(hn);
    fs = fn;
    g = gradient(h);
    fit.objective.push_back(fs + alpha * l1(w));
    res = kkt(w, g);
  }
  std::vector<std::pair<double, Hypothesis>> terms;
  for (std::size_t k = 0; k < K; ++k)
    if (w[k] != 0.0) terms.emplace_back(w[k], cls[k]);
  Hypothesis score = terms.empty() ? Hypothesis::constant(0.0) : Hypothesis::linear(std::move(terms));
  fit.weights = w;
  fit.iterations = it;
  fit.kkt_residual = res;
  fit.score = score;
  fit.predictor = Predictor::glm(glm.name(), glm.transfer_fn(), score);
  return fit;
}

inline GlmFit l1_glm_fit(const HypothesisClass& cls, const GlmLoss& glm, double alpha, const Dataset& data,
                         GlmFitConfig cfg = {}) {
  return l1_glm_fit(cls, glm, alpha, ExpectationEngine::empirical(data), cfg);
}

}  // namespace calma
