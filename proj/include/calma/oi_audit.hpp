#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "calma/calibration.hpp"
#include "calma/core/engine.hpp"
#include "calma/core/hypothesis.hpp"
#include "calma/core/predictor.hpp"
#include "calma/losses.hpp"
#include "calma/multiaccuracy.hpp"

namespace calma {

inline std::vector<double> decisions(const Loss& loss, std::span<const double> p) {
  std::map<double, double> memo;
  std::vector<double> k;
  k.reserve(p.size());
  for (double v : p) {
    auto it = memo.find(v);
    if (it == memo.end()) it = memo.emplace(v, optimal_decision(loss, v)).first;
    k.push_back(it->second);
  }
  return k;
}

// E_D[ℓ(y*, c)] - E_{D(p)}[ℓ(ỹ, c)]
inline double hypothesis_oi_gap_values(std::span<const double> p, const Loss& loss, std::span<const double> c,
                                       const ExpectationEngine& e) {
  auto f = [&](std::size_t i, int y) { return loss(y, c[i]); };
  return e.expect_nature(f) - e.expect_simulated(p, f);
}

// E_D[ℓ(y*, k(p))] - E_{D(p)}[ℓ(ỹ, k(p))]
inline double decision_oi_gap_values(std::span<const double> p, const Loss& loss, std::span<const double> k,
                                     const ExpectationEngine& e) {
  auto f = [&](std::size_t i, int y) { return loss(y, k[i]); };
  return e.expect_nature(f) - e.expect_simulated(p, f);
}

// gap of the distinguisher u(y, p, x) = ℓ(y, c(x)) - ℓ(y, k(p))
inline double loss_oi_gap_values(std::span<const double> p, const Loss& loss, std::span<const double> c,
                                 std::span<const double> k, const ExpectationEngine& e) {
  auto u = [&](std::size_t i, int y) { return loss(y, c[i]) - loss(y, k[i]); };
  return e.expect_nature(u) - e.expect_simulated(p, u);
}

inline double hypothesis_oi_gap(const Predictor& pred, const Loss& loss, const Hypothesis& c,
                                const ExpectationEngine& e) {
  return hypothesis_oi_gap_values(e.evaluate(pred), loss, e.evaluate(c), e);
}

inline double decision_oi_gap(const Predictor& pred, const Loss& loss, const ExpectationEngine& e) {
  auto p = e.evaluate(pred);
  return decision_oi_gap_values(p, loss, decisions(loss, p), e);
}

inline double loss_oi_gap(const Predictor& pred, const Loss& loss, const Hypothesis& c, const ExpectationEngine& e) {
  auto p = e.evaluate(pred);
  return loss_oi_gap_values(p, loss, e.evaluate(c), decisions(loss, p), e);
}

// E_D[ℓ(y*, k(p))] - min_h E_D[ℓ(y*, h)]
inline double omni_regret(const Predictor& pred, const Loss& loss, const std::vector<Hypothesis>& hypotheses,
                          const ExpectationEngine& e, const std::optional<TruncatedDecision>& decision = std::nullopt) {
  auto p = e.evaluate(pred);
  std::vector<double> k;
  if (decision) {
    for (double v : p) k.push_back((*decision)(v));
  } else {
    k = decisions(loss, p);
  }
  double own = e.expect_nature([&](std::size_t i, int y) { return loss(y, k[i]); });
  double best = kInf;
  for (const auto& h : hypotheses) {
    auto c = e.evaluate(h);
    best = std::min(best, e.expect_nature([&](std::size_t i, int y) { return loss(y, c[i]); }));
  }
  return own - best;
}

// E[D_f(p*, p)] + E[D_f(p, g'∘h)] - E[D_f(p*, g'∘h)]
inline double pythagorean_residual(const Predictor& pred, const GlmLoss& glm, const Hypothesis& h,
                                   const ExpectationEngine& e) {
  if (!glm.strictly_increasing())
    throw DomainError("pythagorean_residual: transfer " + glm.name() + " is not strictly increasing");
  auto p = e.evaluate(pred);
  double s = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    double q = glm.transfer(h(e.point(i)));
    double term = bregman(glm, e.target(i), p[i]) + bregman(glm, p[i], q) - bregman(glm, e.target(i), q);
    if (!std::isfinite(term)) throw DomainError("pythagorean_residual: dual singularity at a supported point");
    s += e.weight(i) * term;
  }
  return s;
}

struct OIGapEntry {
  std::string loss, hypothesis;
  double hypothesis_gap = 0.0, decision_gap = 0.0, loss_gap = 0.0;
};

struct OIGapReport {
  std::vector<OIGapEntry> entries;
  double max_hypothesis_gap = 0.0, max_decision_gap = 0.0, max_loss_gap = 0.0;

  json to_json() const {
    json arr = json::array();
    for (const auto& en : entries)
      arr.push_back({{"loss", en.loss},
                     {"hypothesis", en.hypothesis},
                     {"hypothesis_gap", en.hypothesis_gap},
                     {"decision_gap", en.decision_gap},
                     {"loss_gap", en.loss_gap}});
    return {{"entries", arr},
            {"max_abs_hypothesis_gap", max_hypothesis_gap},
            {"max_abs_decision_gap", max_decision_gap},
            {"max_abs_loss_gap", max_loss_gap}};
  }
};

inline OIGapReport oi_gaps(const Predictor& pred, const std::vector<Loss>& losses, const HypothesisClass& cls,
                           const ExpectationEngine& e) {
  OIGapReport rep;
  auto p = e.evaluate(pred);
  std::vector<std::vector<double>> cv;
  for (const auto& c : cls) cv.push_back(e.evaluate(c));
  for (const auto& loss : losses) {
    auto k = decisions(loss, p);
    double dg = decision_oi_gap_values(p, loss, k, e);
    for (std::size_t j = 0; j < cls.size(); ++j) {
      OIGapEntry en{loss.name(), cls[j].tag(), hypothesis_oi_gap_values(p, loss, cv[j], e), dg,
                    loss_oi_gap_values(p, loss, cv[j], k, e)};
      rep.max_hypothesis_gap = std::max(rep.max_hypothesis_gap, std::abs(en.hypothesis_gap));
      rep.max_decision_gap = std::max(rep.max_decision_gap, std::abs(en.decision_gap));
      rep.max_loss_gap = std::max(rep.max_loss_gap, std::abs(en.loss_gap));
      rep.entries.push_back(std::move(en));
    }
  }
  return rep;
}

struct AuditReport {
  OIGapReport gaps;
  double ece = 0.0, mae = 0.0;
  std::map<std::string, double> omni_regret;
  std::map<std::string, double> pythagorean_max;
  std::map<std::string, std::string> skipped;
  BucketStats buckets;

  json to_json() const {
    json j = {{"ece", ece}, {"mae", mae}, {"oi", gaps.to_json()}, {"omni_regret", omni_regret},
              {"pythagorean_max_abs", pythagorean_max}, {"buckets", buckets.to_json()}};
    if (!skipped.empty()) j["skipped"] = skipped;
    return j;
  }
};

// Full audit of `pred` against a list of losses and a hypothesis class.
inline AuditReport audit(const Predictor& pred, const std::vector<Loss>& losses, const HypothesisClass& cls,
                         const ExpectationEngine& e, double bucket_delta = 0.05) {
  AuditReport rep;
  rep.gaps = oi_gaps(pred, losses, cls, e);
  rep.ece = ece(pred, e);
  rep.mae = mae(pred, cls, e);
  rep.buckets = bucket_stats(pred, e, bucket_delta);
  for (const auto& loss : losses) {
    try {
      rep.omni_regret[loss.name()] = omni_regret(pred, loss, cls.members(), e);
      if (const GlmLoss* g = loss.glm(); g && g->strictly_increasing()) {
        double mx = 0.0;
        for (const auto& c : cls) mx = std::max(mx, std::abs(pythagorean_residual(pred, *g, c, e)));
        rep.pythagorean_max[loss.name()] = mx;
      }
    } catch (const DomainError& err) {
      rep.skipped[loss.name()] = err.what();
    }
  }
  return rep;
}

// ---- counterexamples ----

enum class Relation { equal, at_most, greater };

struct Claim {
  std::string name;
  double value = 0.0;
  double expected = 0.0;
  double tolerance = 0.0;
  Relation relation = Relation::equal;

  bool pass() const {
    switch (relation) {
      case Relation::equal: return std::abs(value - expected) <= tolerance;
      case Relation::at_most: return value <= expected + tolerance;
      case Relation::greater: return value > expected;
    }
    return false;
  }
};

struct CounterexampleReport {
  std::string name;
  std::vector<Claim> claims;
  json details = json::object();

  bool all_pass() const {
    return std::all_of(claims.begin(), claims.end(), [](const Claim& c) { return c.pass(); });
  }
  const Claim& claim(const std::string& n) const {
    for (const auto& c : claims)
      if (c.name == n) return c;
    throw ValidationError("no claim named " + n);
  }
  json to_json() const {
    json arr = json::array();
    for (const auto& c : claims) {
      const char* rel = c.relation == Relation::equal ? "==" : c.relation == Relation::at_most ? "<=" : ">";
      arr.push_back({{"name", c.name},
                     {"value", c.value},
                     {"expected", c.expected},
                     {"relation", rel},
                     {"tolerance", c.tolerance},
                     {"pass", c.pass()}});
    }
    return {{"name", name}, {"claims", arr}, {"details", details}, {"all_pass", all_pass()}};
  }
};

// Loss written in ±1 labels, exposed as a {0,1}-label loss via y01 -> 2 y01 - 1.
inline Loss plus_minus_loss(std::string name, std::function<double(double, double)> f, ActionInterval domain,
                            Loss::Fn decision01 = {}) {
  return Loss(
      std::move(name), [f](double t) { return f(-1.0, t); }, [f](double t) { return f(1.0, t); }, domain,
      std::nullopt, std::move(decision01));
}

// (y - t)^2 / 2 in ±1 labels; argmin over t is 2p - 1
inline Loss pm_l2_loss() {
  return plus_minus_loss(
      "pm:l2", [](double y, double t) { return 0.5 * (y - t) * (y - t); }, {-1.0, 1.0},
      [](double p) { return 2.0 * p - 1.0; });
}

// (y - t)^4 / 4 in ±1 labels; argmin solves p (1-t)^3 = (1-p)(1+t)^3
inline Loss pm_l4_loss() {
  return plus_minus_loss(
      "pm:l4", [](double y, double t) { return std::pow(y - t, 4) / 4.0; }, {-1.0, 1.0}, [](double p) {
        if (p <= 0.0) return -1.0;
        if (p >= 1.0) return 1.0;
        double r = std::cbrt((1.0 - p) / p);
        return (1.0 - r) / (1.0 + r);
      });
}

// uniform {±1}^3 with y* = x1 x2 x3, encoded as P(y = +1 | x) in {0,1}
inline FiniteDistribution parity_distribution() {
  std::vector<Point> pts;
  std::vector<double> bayes;
  for (int a : {-1, 1})
    for (int b : {-1, 1})
      for (int c : {-1, 1}) {
        pts.push_back({double(a), double(b), double(c)});
        bayes.push_back(a * b * c > 0 ? 1.0 : 0.0);
      }
  return FiniteDistribution::uniform(std::move(pts), std::move(bayes));
}

inline CounterexampleReport parity_counterexample(int grid = 12) {
  CounterexampleReport rep{"parity"};
  const FiniteDistribution dist = parity_distribution();
  const auto e = ExpectationEngine::exact(dist);
  const Predictor pred = Predictor::constant(0.5);
  std::vector<Hypothesis> coords = {Hypothesis::coordinate(0), Hypothesis::coordinate(1), Hypothesis::coordinate(2)};
  const HypothesisClass C({coords[0], coords[1], coords[2], coords[0].negated(), coords[1].negated(),
                           coords[2].negated()});
  auto p = e.evaluate(pred);

  // residual correlations, rescaled to ±1 labels: y± - (2p - 1) = 2 (y - p)
  double mae_pm = 2.0 * mae_values(p, C, e);
  double mc = 0.0;
  for (const auto& set : detail::level_sets(p))
    for (const auto& c : C) {
      double s = 0.0;
      for (std::size_t i : set) s += e.weight(i) * c(e.point(i)) * 2.0 * (e.target(i) - p[i]);
      mc = std::max(mc, std::abs(s));
    }

  Hypothesis c = Hypothesis::linear({{1.0 / 3, coords[0]}, {1.0 / 3, coords[1]}, {1.0 / 3, coords[2]}});
  auto cv = e.evaluate(c);
  auto chi = [&](std::size_t i) { return 2.0 * e.target(i) - 1.0; };
  double e_yc = e.expect([&](std::size_t i) { return chi(i) * cv[i]; });
  double e_yc3 = e.expect([&](std::size_t i) { return chi(i) * cv[i] * cv[i] * cv[i]; });

  const Loss l2 = pm_l2_loss(), l4 = pm_l4_loss();
  double hyp4 = hypothesis_oi_gap_values(p, l4, cv, e);
  auto k4 = decisions(l4, p);
  double dec4 = decision_oi_gap_values(p, l4, k4, e);
  double loss4 = loss_oi_gap_values(p, l4, cv, k4, e);

  // Lin(±coords, 1) on the lattice a = k / grid with Σ|k_i| <= grid
  std::vector<Hypothesis> lin;
  for (int a = -grid; a <= grid; ++a)
    for (int b = -grid + std::abs(a); b <= grid - std::abs(a); ++b)
      for (int d = -(grid - std::abs(a) - std::abs(b)); d <= grid - std::abs(a) - std::abs(b); ++d)
        lin.push_back(Hypothesis::linear({{double(a) / grid, coords[0]}, {double(b) / grid, coords[1]},
                                          {double(d) / grid, coords[2]}}));
  double reg2 = omni_regret(pred, l2, lin, e), reg4 = omni_regret(pred, l4, lin, e);

  rep.claims = {
      {"mae", mae_pm, 0.0, 1e-12, Relation::equal},
      {"multicalibration_residual", mc, 0.0, 1e-12, Relation::equal},
      {"E[y*c]", e_yc, 0.0, 1e-12, Relation::equal},
      {"E[y*c^3]", e_yc3, 2.0 / 9.0, 1e-12, Relation::equal},
      {"l4_decision_gap", dec4, 0.0, 1e-12, Relation::equal},
      {"l4_gap_matches_expansion", std::abs(hyp4), std::abs(e_yc + e_yc3), 1e-12, Relation::equal},
      {"l4_hypothesis_gap", std::abs(hyp4), 4.0 / 9.0, 1e-12, Relation::equal},
      {"l2_omni_regret", reg2, 0.0, 1e-9, Relation::at_most},
      {"l4_omni_regret", reg4, 0.0, 1e-9, Relation::at_most},
  };
  rep.details = {{"l4_hypothesis_gap_signed", hyp4},
                 {"l4_loss_gap_signed", loss4},
                 {"l4_decision_gap", dec4},
                 {"lin_grid_size", lin.size()},
                 {"label_convention", "plus_minus_one"},
                 {"l4_normalization", "(y-t)^4/4"}};
  return rep;
}

namespace detail {

// f on {0,1}^2 given as (f00, f01, f10, f11) is unate if it is monotone in each coordinate
inline bool unate2(const std::array<double, 4>& f) {
  auto mono = [](double a0, double a1, double b0, double b1) {
    return (a1 >= a0 && b1 >= b0) || (a1 <= a0 && b1 <= b0);
  };
  // coordinate 0: f(0,y) -> f(1,y);  coordinate 1: f(x,0) -> f(x,1)
  return mono(f[0], f[2], f[1], f[3]) && mono(f[0], f[1], f[2], f[3]);
}

}  // namespace detail

// Four-point XOR-like instance on which no single index model is calibrated and multiaccurate.
inline CounterexampleReport sim_counterexample(int resolution = 100) {
  if (resolution < 50) throw ValidationError("sim_counterexample: grid resolution must be at least 50");
  CounterexampleReport rep{"sim"};
  const std::vector<Point> pts = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  const std::array<double, 4> ps = {0.0, 0.5, 1.0, 0.0};
  const FiniteDistribution dist = FiniteDistribution::uniform(pts, {ps.begin(), ps.end()});
  const auto e = ExpectationEngine::exact(dist);
  std::vector<Hypothesis> cubes = {Hypothesis::coordinate(0).equals(0), Hypothesis::coordinate(0).equals(1),
                                   Hypothesis::coordinate(1).equals(0), Hypothesis::coordinate(1).equals(1)};
  const HypothesisClass C = HypothesisClass::closed(cubes);

  // E[c p] = E[c p*] for the four subcubes
  Eigen::Matrix4d A;
  for (int r = 0; r < 4; ++r)
    for (int x = 0; x < 4; ++x) A(r, x) = cubes[r](pts[x]) / 4.0;
  Eigen::Vector4d pstar(ps[0], ps[1], ps[2], ps[3]);
  Eigen::Vector4d b = A * pstar;
  Eigen::FullPivLU<Eigen::Matrix4d> lu(A);
  Eigen::MatrixXd ker = lu.kernel();
  Eigen::Vector4d dir(1, -1, -1, 1);
  double cosine = ker.cols() == 1 ? std::abs(ker.col(0).normalized().dot(dir.normalized())) : 0.0;
  double param_res = 0.0;
  for (double s : {0.0, 0.125, 0.25, 0.5}) {
    Eigen::Vector4d q(s, 0.5 - s, 1.0 - s, s);
    param_res = std::max(param_res, (A * q - b).cwiseAbs().maxCoeff());
  }

  auto pv = e.evaluate(Predictor::table(pts, {ps.begin(), ps.end()}));
  double pstar_ece = ece_values(pv, e), pstar_mae = mae_values(pv, C, e);

  // constant SIM 3/8: conditional residuals E[y - p | c = 1]
  double cond_max = 0.0;
  for (const auto& c : cubes) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      num += e.weight(i) * c(pts[i]) * (ps[i] - 0.375);
      den += e.weight(i) * c(pts[i]);
    }
    cond_max = std::max(cond_max, std::abs(num / den));
  }
  std::vector<double> const38(4, 0.375);
  double const38_mae = mae_values(const38, C, e);

  // scores s = λ·c reduce to (0, B, A, A+B) with A = λ(x0=1) - λ(x0=0), B = λ(x1=1) - λ(x1=0)
  const int R = resolution;
  std::set<std::array<int, 4>> orders;
  for (int ka = -2 * R; ka <= 2 * R; ++ka)
    for (int kb = -2 * R; kb <= 2 * R; ++kb) {
      std::array<int, 4> s = {0, kb, ka, ka + kb};
      std::array<int, 4> sorted = s;
      std::sort(sorted.begin(), sorted.end());
      auto last = std::unique(sorted.begin(), sorted.end());
      std::array<int, 4> rank{};
      for (int x = 0; x < 4; ++x) rank[x] = static_cast<int>(std::lower_bound(sorted.begin(), last, s[x]) - sorted.begin());
      orders.insert(rank);
    }

  auto violation = [&](const std::array<double, 4>& p, double& ece_out, double& mae_out, double& cmae_out) {
    double eces = 0.0;
    for (int x = 0; x < 4; ++x) {
      bool first = true;
      for (int z = 0; z < x; ++z)
        if (p[z] == p[x]) first = false;
      if (!first) continue;
      double s = 0.0;
      for (int z = x; z < 4; ++z)
        if (p[z] == p[x]) s += ps[z] - p[z];
      eces += std::abs(s) / 4.0;
    }
    double r[4] = {ps[0] - p[0], ps[1] - p[1], ps[2] - p[2], ps[3] - p[3]};
    double m = std::max({std::abs(r[0] + r[1]), std::abs(r[2] + r[3]), std::abs(r[0] + r[2]), std::abs(r[1] + r[3]),
                         std::abs(r[0] + r[1] + r[2] + r[3])}) /
               4.0;
    ece_out = eces;
    mae_out = m;
    cmae_out = std::max({std::abs(r[0] + r[1]), std::abs(r[2] + r[3]), std::abs(r[0] + r[2]), std::abs(r[1] + r[3])}) / 2.0;
  };

  double best = kInf, best_cond = kInf;
  std::array<double, 4> arg{}, arg_cond{};
  std::size_t evaluated = 0;
  for (const auto& rank : orders) {
    int L = *std::max_element(rank.begin(), rank.end()) + 1;
    std::vector<int> u(L, 0);
    // enumerate nondecreasing u_0 <= ... <= u_{L-1} on {0..R}
    std::function<void(int, int)> rec = [&](int lvl, int lo) {
      if (lvl == L) {
        std::array<double, 4> p{};
        for (int x = 0; x < 4; ++x) p[x] = static_cast<double>(u[rank[x]]) / R;
        double ev, mv, cv;
        violation(p, ev, mv, cv);
        ++evaluated;
        double v = std::max(ev, mv), vc = std::max(ev, cv);
        if (v < best) {
          best = v;
          arg = p;
        }
        if (vc < best_cond) {
          best_cond = vc;
          arg_cond = p;
        }
        return;
      }
      for (int k = lo; k <= R; ++k) {
        u[lvl] = k;
        rec(lvl + 1, k);
      }
    };
    rec(0, 0);
  }
  // re-evaluate the minimizer through the library's own error functions
  std::vector<double> argv(arg.begin(), arg.end());
  double lib_best = std::max(ece_values(argv, e), mae_values(argv, C, e));

  rep.claims = {
      {"ma_system_rank", static_cast<double>(lu.rank()), 3.0, 0.0, Relation::equal},
      {"ma_system_kernel_alignment", cosine, 1.0, 1e-12, Relation::equal},
      {"ma_system_parametrization_residual", param_res, 0.0, 1e-12, Relation::equal},
      {"pstar_ece", pstar_ece, 0.0, 1e-12, Relation::equal},
      {"pstar_mae", pstar_mae, 0.0, 1e-12, Relation::equal},
      {"pstar_unate", detail::unate2(ps) ? 1.0 : 0.0, 0.0, 0.0, Relation::equal},
      {"const_3/8_conditional_violation", cond_max, 0.125, 1e-12, Relation::equal},
      {"sim_min_violation", lib_best, 0.05, 0.0, Relation::greater},
  };
  rep.details = {{"resolution", R},
                 {"orderings", orders.size()},
                 {"sims_evaluated", evaluated},
                 {"min_violation", lib_best},
                 {"argmin_predictions", argv},
                 {"min_violation_conditional", best_cond},
                 {"argmin_conditional_predictions", std::vector<double>(arg_cond.begin(), arg_cond.end())},
                 {"const_3/8_unconditional_mae", const38_mae},
                 {"pstar", std::vector<double>(ps.begin(), ps.end())}};
  return rep;
}

}  // namespace calma
