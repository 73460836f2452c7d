#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "calma/core/engine.hpp"
#include "calma/core/predictor.hpp"
#include "calma/core/sampling.hpp"
#include "calma/core/types.hpp"

namespace calma {

struct Bucket {
  double lo = 0.0, hi = 0.0, midpoint = 0.0;
  std::size_t count = 0;
  double mass = 0.0;
  double label_mean = 0.0;
};

struct BucketStats {
  double delta = 0.0;
  std::vector<Bucket> buckets;

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& b : buckets) n += b.count;
    return n;
  }

  json to_json() const {
    json arr = json::array();
    for (const auto& b : buckets)
      arr.push_back({{"lo", b.lo}, {"hi", b.hi}, {"midpoint", b.midpoint}, {"count", b.count}, {"mass", b.mass},
                     {"label_mean", b.label_mean}});
    return {{"delta", delta}, {"buckets", arr}};
  }
};

// Buckets of the values `p` over the engine's points; label_mean is the weighted target mean.
inline BucketStats bucket_stats(std::span<const double> p, const ExpectationEngine& e, double delta) {
  BucketGrid g(delta);
  BucketStats st;
  st.delta = delta;
  st.buckets.resize(g.count());
  std::vector<double> tsum(g.count(), 0.0);
  for (std::size_t j = 0; j < g.count(); ++j) st.buckets[j] = Bucket{g.lo(j), g.hi(j), g.midpoint(j), 0, 0.0, 0.0};
  for (std::size_t i = 0; i < e.size(); ++i) {
    auto j = g.index(p[i]);
    st.buckets[j].count += 1;
    st.buckets[j].mass += e.weight(i);
    tsum[j] += e.weight(i) * e.target(i);
  }
  for (std::size_t j = 0; j < g.count(); ++j)
    st.buckets[j].label_mean = st.buckets[j].mass > 0.0 ? tsum[j] / st.buckets[j].mass : 0.0;
  return st;
}

inline BucketStats bucket_stats(const Predictor& pred, const ExpectationEngine& e, double delta) {
  return bucket_stats(e.evaluate(pred), e, delta);
}

namespace detail {

// groups of indices sharing the same predicted value, in increasing value order
inline std::vector<std::vector<std::size_t>> level_sets(std::span<const double> p) {
  std::vector<std::size_t> idx(p.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (k == 0 || p[idx[k]] != p[idx[k - 1]]) out.emplace_back();
    out.back().push_back(idx[k]);
  }
  return out;
}

}  // namespace detail

// Σ_v |E[(y - v) 1{p = v}]|
inline double ece_values(std::span<const double> p, const ExpectationEngine& e) {
  double total = 0.0;
  for (const auto& set : detail::level_sets(p)) {
    double s = 0.0;
    for (std::size_t i : set) s += e.weight(i) * (e.target(i) - p[i]);
    total += std::abs(s);
  }
  return total;
}

inline double ece(const Predictor& pred, const ExpectationEngine& e) { return ece_values(e.evaluate(pred), e); }

struct WeightFunction {
  std::function<double(double)> w;
  double sup_bound = 1.0;
  std::string name;

  double operator()(double v) const { return w(v); }

  static WeightFunction constant(double c) {
    return {[c](double) { return c; }, std::abs(c), "const:" + detail::fmt_real(c)};
  }
  static WeightFunction from(std::string name, double sup, std::function<double(double)> f) {
    return {std::move(f), sup, std::move(name)};
  }
};

// 1-Lipschitz tent functions centered on a uniform grid of [0,1], with their negations
inline std::vector<WeightFunction> smooth_weight_family(std::size_t n) {
  std::vector<WeightFunction> out;
  for (std::size_t j = 0; j < n; ++j) {
    double c = n == 1 ? 0.5 : static_cast<double>(j) / static_cast<double>(n - 1);
    auto tent = [c](double v) { return std::max(0.0, 1.0 - std::abs(v - c)); };
    out.push_back(WeightFunction::from("tent:" + detail::fmt_real(c), 1.0, tent));
    out.push_back(WeightFunction::from("-tent:" + detail::fmt_real(c), 1.0, [tent](double v) { return -tent(v); }));
  }
  return out;
}

inline double weighted_ce_values(std::span<const double> p, const std::vector<WeightFunction>& ws,
                                 const ExpectationEngine& e) {
  double best = 0.0;
  for (const auto& w : ws) {
    double s = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) s += e.weight(i) * w(p[i]) * (e.target(i) - p[i]);
    best = std::max(best, std::abs(s));
  }
  return best;
}

inline double weighted_ce(const Predictor& pred, const std::vector<WeightFunction>& ws, const ExpectationEngine& e) {
  return weighted_ce_values(e.evaluate(pred), ws, e);
}

// w*(v) = sign E[y - v | p = v], the weight attaining ECE
inline WeightFunction sign_weight(std::span<const double> p, const ExpectationEngine& e) {
  std::vector<std::pair<double, double>> signs;
  for (const auto& set : detail::level_sets(p)) {
    double s = 0.0;
    for (std::size_t i : set) s += e.weight(i) * (e.target(i) - p[i]);
    signs.emplace_back(p[set.front()], s > 0.0 ? 1.0 : (s < 0.0 ? -1.0 : 0.0));
  }
  return WeightFunction::from("sign", 1.0, [signs](double v) {
    for (const auto& [val, sg] : signs)
      if (val == v) return sg;
    return 0.0;
  });
}

// p^δ: each value replaced by the midpoint of its bucket
inline Predictor discretize(const Predictor& pred, double delta) {
  BucketGrid g(delta);
  std::vector<double> mids;
  for (std::size_t j = 0; j < g.count(); ++j) mids.push_back(g.midpoint(j));
  return Predictor::bucketed(pred, delta, std::move(mids));
}

// bucket means of the engine's targets over the buckets of `pred`; empty buckets keep their midpoint
inline Predictor recalibrate(const Predictor& pred, double delta, const ExpectationEngine& e) {
  BucketStats st = bucket_stats(pred, e, delta);
  std::vector<double> vals;
  for (const auto& b : st.buckets) vals.push_back(b.mass > 0.0 ? clamp01(b.label_mean) : b.midpoint);
  return Predictor::bucketed(pred, delta, std::move(vals));
}

inline Predictor recalibrate_exact(const Predictor& pred, double delta, const FiniteDistribution& dist) {
  return recalibrate(pred, delta, ExpectationEngine::exact(dist));
}

struct EstimatorConfig {
  double constant = 8.0;
  // 0 selects the theoretical sample size
  std::size_t sample_size = 0;
};

// theoretical draws above this are rejected rather than materialized
inline constexpr double kMaxTheoreticalRows = 2e7;

inline std::size_t est_ece_sample_size(double delta, double mu, double constant) {
  double l = std::log(1.0 / delta);
  double m = constant * std::max(1.0, l * l) / (delta * mu * mu * mu);
  if (m > kMaxTheoreticalRows) throw InsufficientSamplesError("est_ece: theoretical sample size is not practical; set sample_size");
  return static_cast<std::size_t>(std::ceil(m));
}

// Σ_j (m_j/m) |ȳ_j - midpoint_j| over the buckets of `pred` on a labeled batch
inline double est_ece_on(const Predictor& pred, double delta, const Dataset& batch) {
  auto e = ExpectationEngine::empirical(batch);
  BucketStats st = bucket_stats(pred, e, delta);
  double s = 0.0;
  for (const auto& b : st.buckets)
    if (b.count > 0) s += b.mass * std::abs(b.label_mean - b.midpoint);
  return s;
}

inline double est_ece(const Predictor& pred, double delta, double mu, Sampler& sampler, EstimatorConfig cfg = {}) {
  if (!(mu > 0.0 && mu <= 1.0) || !(delta > 0.0 && delta <= 1.0))
    throw ValidationError("est_ece: mu and delta must lie in (0,1]");
  std::size_t m = cfg.sample_size ? cfg.sample_size : est_ece_sample_size(delta, mu, cfg.constant);
  if (m > sampler.available())
    throw InsufficientSamplesError("est_ece: needs " + std::to_string(m) + " rows, sampler has " +
                                   std::to_string(sampler.available()));
  return est_ece_on(pred, delta, sampler.draw(m));
}

struct RecalConfig {
  double constant = 1.0;
  std::size_t sample_size = 0;
};

inline std::size_t recal_sample_size(double delta, double constant) {
  double m = constant * std::max(1.0, std::log(1.0 / delta)) / std::pow(delta, 4);
  if (m > kMaxTheoreticalRows) throw InsufficientSamplesError("recal: theoretical sample size is not practical; set sample_size");
  return static_cast<std::size_t>(std::ceil(m));
}

inline Predictor recal(const Predictor& pred, double delta, Sampler& sampler, RecalConfig cfg = {}) {
  if (!(delta > 0.0 && delta <= 1.0)) throw ValidationError("recal: delta must lie in (0,1]");
  std::size_t m = cfg.sample_size ? cfg.sample_size : recal_sample_size(delta, cfg.constant);
  if (m > sampler.available())
    throw InsufficientSamplesError("recal: needs " + std::to_string(m) + " rows, sampler has " +
                                   std::to_string(sampler.available()));
  return recalibrate(pred, delta, ExpectationEngine::empirical(sampler.draw(m)));
}

inline Predictor recal(const Predictor& pred, double delta, const FiniteDistribution& dist) {
  return recalibrate_exact(pred, delta, dist);
}

// Nondecreasing right-continuous step function; s below the first knot maps to the first value.
struct IsotonicFit {
  std::vector<double> knots, values;
  std::vector<double> fitted;

  double operator()(double s) const {
    auto it = std::upper_bound(knots.begin(), knots.end(), s);
    if (it == knots.begin()) return values.front();
    return values[static_cast<std::size_t>(it - knots.begin()) - 1];
  }
};

// pool adjacent violators; tied scores are pooled before the monotone pass
inline IsotonicFit isotonic_fit(std::span<const double> scores, std::span<const double> labels,
                                std::span<const double> weights = {}) {
  const std::size_t n = scores.size();
  if (n == 0 || labels.size() != n || (!weights.empty() && weights.size() != n))
    throw ValidationError("isotonic_fit: inputs must be nonempty and of equal length");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  struct Block {
    double start, wsum, ysum;
    std::size_t first, last;  // positions in idx
  };
  std::vector<Block> st;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t i = idx[k];
    double w = weights.empty() ? 1.0 : weights[i];
    if (!st.empty() && scores[idx[st.back().last]] == scores[i]) {
      st.back().wsum += w;
      st.back().ysum += w * labels[i];
      st.back().last = k;
      continue;
    }
    st.push_back({scores[i], w, w * labels[i], k, k});
  }
  std::vector<Block> out;
  for (const auto& b : st) {
    out.push_back(b);
    while (out.size() > 1) {
      auto& hi = out[out.size() - 1];
      auto& lo = out[out.size() - 2];
      double mhi = hi.wsum > 0 ? hi.ysum / hi.wsum : 0.0, mlo = lo.wsum > 0 ? lo.ysum / lo.wsum : 0.0;
      if (mlo <= mhi) break;
      lo.wsum += hi.wsum;
      lo.ysum += hi.ysum;
      lo.last = hi.last;
      out.pop_back();
    }
  }
  IsotonicFit fit;
  fit.fitted.assign(n, 0.0);
  for (const auto& b : out) {
    double v = clamp01(b.wsum > 0 ? b.ysum / b.wsum : 0.0);
    fit.knots.push_back(b.start);
    fit.values.push_back(v);
    for (std::size_t k = b.first; k <= b.last; ++k) fit.fitted[idx[k]] = v;
  }
  return fit;
}

// isotonic map from pred's values to the engine's targets
inline Predictor isotonic_recalibrate(const Predictor& pred, const ExpectationEngine& e) {
  auto s = e.evaluate(pred);
  IsotonicFit fit = isotonic_fit(s, e.targets(), e.weights());
  return Predictor::isotonic(pred, fit.knots, fit.values);
}

}  // namespace calma
