#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "calma/calibration.hpp"
#include "calma/core/engine.hpp"
#include "calma/core/predictor.hpp"
#include "calma/core/sampling.hpp"
#include "calma/multiaccuracy.hpp"

namespace calma {

enum class RecalBackend { bucket, isotonic };

inline RecalBackend parse_backend(const std::string& s) {
  if (s == "bucket") return RecalBackend::bucket;
  if (s == "isotonic") return RecalBackend::isotonic;
  throw ValidationError("unknown recalibration backend: " + s);
}

inline std::string to_string(RecalBackend b) { return b == RecalBackend::bucket ? "bucket" : "isotonic"; }

struct CalmaConfig {
  double alpha = 0.1;
  // defaults: delta = alpha^2/32, mu = alpha/4
  std::optional<double> delta;
  std::optional<double> mu;
  double threshold_factor = 0.75;
  std::size_t estece_repeats = 3;
  RecalBackend backend = RecalBackend::bucket;
  std::size_t ma_batch = 1000;
  EstimatorConfig estece{};
  RecalConfig recal{};
  // default cap: 2 (1 + 8/alpha^2)
  std::optional<std::size_t> max_outer;
  std::optional<std::size_t> ma_max_updates;

  double delta_value() const { return delta.value_or(alpha * alpha / 32.0); }
  double mu_value() const { return mu.value_or(alpha / 4.0); }
  std::size_t outer_cap() const {
    return max_outer.value_or(static_cast<std::size_t>(std::ceil(2.0 * (1.0 + 8.0 / (alpha * alpha)))));
  }
  double threshold() const { return threshold_factor * alpha; }
};

struct CalmaIteration {
  std::size_t wl_calls = 0;
  std::size_t updates = 0;
  double est_ece = 0.0;
  bool recalibrated = false;
  // l2(p*, .)^2 of q_{t-1}, p_t and q_t; exact mode only
  std::optional<double> potential_before, potential_after_ma, potential_after;

  json to_json() const {
    json j = {{"wl_calls", wl_calls}, {"updates", updates}, {"est_ece", est_ece}, {"recalibrated", recalibrated}};
    if (potential_before) j["potential_before"] = *potential_before;
    if (potential_after_ma) j["potential_after_ma"] = *potential_after_ma;
    if (potential_after) j["potential_after"] = *potential_after;
    return j;
  }
};

struct CalmaTrace {
  double alpha = 0.0, delta = 0.0, mu = 0.0;
  std::string backend;
  std::vector<CalmaIteration> iterations;

  std::size_t total_wl_calls() const {
    std::size_t s = 0;
    for (const auto& it : iterations) s += it.wl_calls;
    return s;
  }
  std::size_t recalibrations() const {
    return static_cast<std::size_t>(
        std::count_if(iterations.begin(), iterations.end(), [](const auto& it) { return it.recalibrated; }));
  }

  json to_json() const {
    json its = json::array();
    for (const auto& it : iterations) its.push_back(it.to_json());
    return {{"alpha", alpha},
            {"delta", delta},
            {"mu", mu},
            {"backend", backend},
            {"outer_iterations", iterations.size()},
            {"total_wl_calls", total_wl_calls()},
            {"iterations", its}};
  }
};

struct CalmaResult {
  Predictor predictor;
  CalmaTrace trace;
};

namespace detail {

inline void check_calma_pre(const WeakLearner& wl, const CalmaConfig& cfg) {
  if (!(cfg.alpha > 0.0 && cfg.alpha <= 1.0)) throw ValidationError("calma: alpha must lie in (0,1]");
  if (cfg.alpha - cfg.delta_value() < wl.rho())
    throw ValidationError("calma: need alpha - delta >= rho of the weak learner");
}

inline CalmaTrace new_trace(const CalmaConfig& cfg) {
  CalmaTrace tr;
  tr.alpha = cfg.alpha;
  tr.delta = cfg.delta_value();
  tr.mu = cfg.mu_value();
  tr.backend = to_string(cfg.backend);
  return tr;
}

}  // namespace detail

// calMA over fixed engines: MA runs on `ma_engine`; the calibration test and the
// recalibration read `cal_engine`. With exact engines this is the deterministic exact mode.
inline CalmaResult calma(const Predictor& p0, const WeakLearner& wl, const ExpectationEngine& ma_engine,
                         const ExpectationEngine& cal_engine, const CalmaConfig& cfg) {
  detail::check_calma_pre(wl, cfg);
  const double delta = cfg.delta_value();
  const bool track = ma_engine.is_exact();
  CalmaTrace trace = detail::new_trace(cfg);
  Predictor q = p0;
  for (std::size_t t = 0; t < cfg.outer_cap(); ++t) {
    CalmaIteration it;
    if (track) it.potential_before = l2_to_target_sq(q, ma_engine);
    MaResult ma = ma_algorithm(q, cfg.alpha - delta, wl, ma_engine, MaConfig{cfg.ma_max_updates});
    it.wl_calls = ma.wl_calls;
    it.updates = ma.updates;
    if (track) it.potential_after_ma = ma.potential.back();
    Predictor pd = discretize(ma.predictor, delta);
    it.est_ece = ece(pd, cal_engine);
    if (it.est_ece > cfg.threshold()) {
      q = cfg.backend == RecalBackend::bucket ? recalibrate(ma.predictor, delta, cal_engine)
                                              : isotonic_recalibrate(ma.predictor, cal_engine);
      it.recalibrated = true;
      if (track) it.potential_after = l2_to_target_sq(q, ma_engine);
      trace.iterations.push_back(it);
      continue;
    }
    if (track) it.potential_after = l2_to_target_sq(pd, ma_engine);
    trace.iterations.push_back(it);
    return {pd, trace};
  }
  throw ConvergenceError("calma: outer iteration cap " + std::to_string(cfg.outer_cap()) +
                         " reached; preconditions are violated");
}

inline CalmaResult calma(const Predictor& p0, const WeakLearner& wl, const FiniteDistribution& dist,
                         const CalmaConfig& cfg) {
  auto e = ExpectationEngine::exact(dist);
  return calma(p0, wl, e, e, cfg);
}

// Sampled mode: fresh MA batches from `ma_source`, estECE (median of repeats) and reCAL from `cal_source`.
inline CalmaResult calma(const Predictor& p0, const WeakLearner& wl, Sampler& ma_source, Sampler& cal_source,
                         const CalmaConfig& cfg) {
  detail::check_calma_pre(wl, cfg);
  const double delta = cfg.delta_value(), mu = cfg.mu_value();
  CalmaTrace trace = detail::new_trace(cfg);
  Predictor q = p0;
  const std::size_t reps = std::max<std::size_t>(1, cfg.estece_repeats);
  for (std::size_t t = 0; t < cfg.outer_cap(); ++t) {
    CalmaIteration it;
    MaResult ma = ma_algorithm(q, cfg.alpha - delta, wl, ma_source, MaConfig{cfg.ma_max_updates, cfg.ma_batch});
    it.wl_calls = ma.wl_calls;
    it.updates = ma.updates;
    std::vector<double> reads;
    for (std::size_t r = 0; r < reps; ++r) reads.push_back(est_ece(ma.predictor, delta, mu, cal_source, cfg.estece));
    std::nth_element(reads.begin(), reads.begin() + static_cast<std::ptrdiff_t>(reads.size() / 2), reads.end());
    it.est_ece = reads[reads.size() / 2];
    if (it.est_ece > cfg.threshold()) {
      if (cfg.backend == RecalBackend::bucket) {
        q = recal(ma.predictor, delta, cal_source, cfg.recal);
      } else {
        std::size_t m = cfg.recal.sample_size ? cfg.recal.sample_size : recal_sample_size(delta, cfg.recal.constant);
        q = isotonic_recalibrate(ma.predictor, ExpectationEngine::empirical(cal_source.draw(m)));
      }
      it.recalibrated = true;
      trace.iterations.push_back(it);
      continue;
    }
    trace.iterations.push_back(it);
    return {discretize(ma.predictor, delta), trace};
  }
  throw ConvergenceError("calma: outer iteration cap " + std::to_string(cfg.outer_cap()) +
                         " reached; preconditions are violated");
}

}  // namespace calma
