#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "calma/bench.hpp"
#include "calma/calibration.hpp"
#include "calma/calma.hpp"
#include "calma/multiaccuracy.hpp"
#include "calma/oi_audit.hpp"

#include "support/oracles.hpp"

using namespace calma;

namespace {

struct Outcome {
  bool pass = true;
  std::string summary;
  std::vector<std::string> notes;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

Predictor table_pred(const oracle::Instance& in) { return Predictor::table(in.dist.points, in.pred); }

// loss-domain-aware range for random hypothesis values
std::pair<double, double> action_range(const Loss& loss) {
  auto d = loss.action_domain();
  return {std::max(d.lo, -1.0), std::min(d.hi, 1.0)};
}

// ---- 1 ----
Outcome c01_parity() {
  auto t0 = Clock::now();
  CounterexampleReport r = parity_counterexample();
  double dt = seconds_since(t0);
  Outcome o;
  const char* keys[] = {"mae", "E[y*c^3]", "l4_hypothesis_gap", "l2_omni_regret", "l4_omni_regret"};
  for (const char* k : keys) {
    const Claim& c = r.claim(k);
    o.pass = o.pass && c.pass();
    o.notes.push_back(std::string(k) + " = " + fmt(c.value, 12) + " (target " + fmt(c.expected, 12) + ", " +
                      (c.pass() ? "ok" : "violated") + ")");
  }
  o.pass = o.pass && dt < 1.0;
  o.summary = "ℓ4 hypothesis gap " + fmt(std::abs(r.claim("l4_hypothesis_gap").value), 12) + " vs 4/9, E[y*c^3] " +
              fmt(r.claim("E[y*c^3]").value, 12) + ", runtime " + fmt(dt, 3) + " s";
  return o;
}

// ---- 2 ----
Outcome c02_decomposition() {
  std::mt19937_64 rng(2);
  double worst = 0.0;
  int violations = 0;
  for (int t = 0; t < 500; ++t) {
    auto in = oracle::random_instance(rng);
    Loss loss = oracle::random_loss(rng);
    auto [lo, hi] = action_range(loss);
    Hypothesis c = oracle::random_table(rng, in.dist.points, lo, hi);
    auto e = ExpectationEngine::exact(in.dist);
    Predictor p = table_pred(in);
    double lg = loss_oi_gap(p, loss, c, e), hg = hypothesis_oi_gap(p, loss, c, e), dg = decision_oi_gap(p, loss, e);
    double err = std::abs(lg - (hg - dg));
    worst = std::max(worst, err);
    if (err > 1e-12) ++violations;
  }
  return {violations == 0, "500 instances, max |loss - (hyp - dec)| = " + fmt(worst) + ", violations " +
                               std::to_string(violations)};
}

// ---- 3 ----
Outcome c03_characterizations() {
  std::mt19937_64 rng(3);
  int hv = 0, dv = 0;
  double hslack = kInf, dslack = kInf;
  for (int t = 0; t < 500; ++t) {
    auto in = oracle::random_instance(rng);
    Loss loss = oracle::random_loss(rng);
    auto [lo, hi] = action_range(loss);
    auto e = ExpectationEngine::exact(in.dist);
    Predictor p = table_pred(in);
    std::vector<Hypothesis> cs, dcs;
    for (int j = 0; j < 4; ++j) {
      cs.push_back(oracle::random_table(rng, in.dist.points, lo, hi));
      dcs.push_back(cs.back().composed("dl", derivative_sup(loss), [loss](double v) { return loss.derivative(v); }));
    }
    const HypothesisClass dcls(dcs);
    double bound = mae(p, dcls, e);
    for (const auto& c : cs) {
      double g = std::abs(hypothesis_oi_gap(p, loss, c, e));
      hslack = std::min(hslack, bound - g);
      if (g > bound + 1e-12) ++hv;
    }
    auto w = WeightFunction::from("dk", 1.0, [loss](double v) { return loss.derivative(optimal_decision(loss, v)); });
    double ce = weighted_ce(p, {w}, e);
    double g = std::abs(decision_oi_gap(p, loss, e));
    dslack = std::min(dslack, ce - g);
    if (g > ce + 1e-12) ++dv;
  }
  return {hv == 0 && dv == 0, "500 instances, hypothesis violations " + std::to_string(hv) + ", decision violations " +
                                  std::to_string(dv) + " (min slack " + fmt(hslack) + ", " + fmt(dslack) + ")"};
}

// ---- 4 ----
Outcome c04_ma_potential() {
  std::mt19937_64 rng(4);
  const HypothesisClass C = oracle::signed_coordinates(3);
  const double sigmas[] = {0.01, 0.02, 0.05};
  int drop_viol = 0, ma_viol = 0;
  std::size_t total_updates = 0;
  double min_ratio = kInf;
  for (int t = 0; t < 100; ++t) {
    auto in = oracle::random_instance(rng);
    const double s = sigmas[t % 3];
    ExhaustiveWeakLearner wl(C, s, s);
    auto e = ExpectationEngine::exact(in.dist);
    MaResult r = ma_algorithm(table_pred(in), s, wl, e);
    for (std::size_t k = 0; k + 1 < r.potential.size(); ++k) {
      double drop = r.potential[k] - r.potential[k + 1];
      min_ratio = std::min(min_ratio, drop / (s * s));
      if (drop < s * s * (1.0 - 1e-9)) ++drop_viol;
    }
    total_updates += r.updates;
    if (mae(r.predictor, C, e) > s + 1e-12) ++ma_viol;
  }
  return {drop_viol == 0 && ma_viol == 0, "100 instances, " + std::to_string(total_updates) +
                                              " updates, min drop/σ² = " + fmt(min_ratio) + ", drop violations " +
                                              std::to_string(drop_viol) + ", MA violations " + std::to_string(ma_viol)};
}

// ---- 5 ----
Outcome c05_calma_exact() {
  auto t0 = Clock::now();
  std::mt19937_64 rng(5);
  const HypothesisClass C = oracle::signed_coordinates(3);
  int iter_viol = 0, wl_viol = 0, cal_viol = 0, ma_viol = 0;
  std::size_t max_T = 0;
  for (int t = 0; t < 100; ++t) {
    auto in = oracle::random_instance(rng);
    CalmaConfig cfg;
    cfg.alpha = t % 2 ? 0.05 : 0.1;
    const double sigma = cfg.alpha - cfg.delta_value();
    ExhaustiveWeakLearner wl(C, sigma, sigma);
    Predictor p0 = table_pred(in);
    auto e = ExpectationEngine::exact(in.dist);
    double pot0 = l2_to_target_sq(p0, e);
    CalmaResult r = calma::calma(p0, wl, in.dist, cfg);
    const std::size_t T = r.trace.iterations.size();
    max_T = std::max(max_T, T);
    if (static_cast<double>(T) > 1.0 + 8.0 * pot0 / (cfg.alpha * cfg.alpha)) ++iter_viol;
    if (static_cast<double>(r.trace.total_wl_calls()) > pot0 / (sigma * sigma) + static_cast<double>(T)) ++wl_viol;
    if (ece(r.predictor, e) > cfg.alpha) ++cal_viol;
    if (mae(r.predictor, C, e) > cfg.alpha) ++ma_viol;
  }
  double dt = seconds_since(t0);
  bool ok = iter_viol == 0 && wl_viol == 0 && cal_viol == 0 && ma_viol == 0 && dt < 30.0;
  return {ok, "100 instances, violations: iterations " + std::to_string(iter_viol) + ", WL calls " +
                  std::to_string(wl_viol) + ", ece " + std::to_string(cal_viol) + ", mae " + std::to_string(ma_viol) +
                  "; max T " + std::to_string(max_T) + ", runtime " + fmt(dt, 3) + " s"};
}

// ---- 6 ----
Outcome c06_recalibration() {
  std::mt19937_64 rng(6);
  const double delta = 0.1;
  int exact_viol = 0, emp_viol = 0;
  double exact_slack = kInf, emp_slack = kInf;
  for (int t = 0; t < 50; ++t) {
    auto in = oracle::random_instance(rng);
    auto e = ExpectationEngine::exact(in.dist);
    Predictor p = table_pred(in);
    Predictor pd = discretize(p, delta);
    double ece2 = std::pow(ece(pd, e), 2);
    Predictor pbar = recalibrate_exact(p, delta, in.dist);
    double drop = l2_to_target_sq(pd, e) - l2_to_target_sq(pbar, e);
    exact_slack = std::min(exact_slack, drop - ece2);
    if (drop < ece2 - 1e-12) ++exact_viol;
    DistributionSampler s(in.dist, 600 + static_cast<std::uint64_t>(t));
    Predictor phat = recal(p, delta, s);
    double edrop = l2_to_target_sq(p, e) - l2_to_target_sq(phat, e);
    emp_slack = std::min(emp_slack, edrop - (ece2 - 4.0 * delta));
    if (edrop < ece2 - 4.0 * delta) ++emp_viol;
  }
  return {exact_viol == 0 && emp_viol == 0,
          "50 instances, δ = 0.1: exact violations " + std::to_string(exact_viol) + " (min slack " +
              fmt(exact_slack) + "), reCAL violations " + std::to_string(emp_viol) + " (min slack " +
              fmt(emp_slack) + ")"};
}

// ---- 7 ----
Outcome c07_glm_fit() {
  std::mt19937_64 rng(7);
  const HypothesisClass C = oracle::signed_coordinates(3);
  int viol = 0;
  double worst = 0.0, worst_kkt = 0.0;
  for (int t = 0; t < 20; ++t) {
    Dataset data;
    std::uniform_real_distribution<double> u(-1.0, 1.0), b(0.0, 1.0);
    std::vector<double> w = {2.0 * u(rng), 2.0 * u(rng), 2.0 * u(rng)};
    for (int i = 0; i < 300; ++i) {
      Point x = {u(rng), u(rng), u(rng)};
      double z = w[0] * x[0] + w[1] * x[1] + w[2] * x[2];
      data.append(x, b(rng) < oracle::sigmoid(z) ? 1 : 0);
    }
    auto e = ExpectationEngine::empirical(data);
    for (const GlmLoss& g : {glm_sigmoid(), glm_crelu()}) {
      GlmFit fit = l1_glm_fit(C, g, 0.1, e);
      double m = mae(fit.predictor, C, e);
      worst = std::max(worst, m);
      worst_kkt = std::max(worst_kkt, fit.kkt_residual);
      if (m > 0.1 + 1e-5 || fit.kkt_residual > 1e-6) ++viol;
    }
  }
  return {viol == 0, "20 datasets × {sigmoid, crelu}: max mae " + fmt(worst, 8) + ", max KKT residual " +
                         fmt(worst_kkt) + ", violations " + std::to_string(viol)};
}

// ---- 8 ----
Outcome c08_pythagorean() {
  std::mt19937_64 rng(8);
  const HypothesisClass C = oracle::signed_coordinates(3);
  double worst_abs = 0.0, worst_signed = 0.0;
  int viol_a = 0, viol_b = 0;
  for (const GlmLoss& g : {glm_identity(), glm_sigmoid()}) {
    const bool sig = g.name() == "sigmoid";
    for (int t = 0; t < 200; ++t) {
      auto in = oracle::random_instance(rng);
      auto e = ExpectationEngine::exact(in.dist);
      Predictor p = table_pred(in);
      Hypothesis h = oracle::random_table(rng, in.dist.points, sig ? -3.0 : 0.0, sig ? 3.0 : 1.0);
      double res = pythagorean_residual(p, g, h, e), gap = loss_oi_gap(p, g.loss(), h, e);
      double d = std::abs(std::abs(res) - std::abs(gap));
      worst_abs = std::max(worst_abs, d);
      worst_signed = std::max(worst_signed, std::abs(res + gap));
      if (d > 1e-9) ++viol_a;
    }
  }
  double worst_margin = kInf;
  for (const GlmLoss& g : {glm_identity(), glm_sigmoid()}) {
    for (int t = 0; t < 15; ++t) {
      auto in = oracle::random_instance(rng);
      ExhaustiveWeakLearner wl(C, 0.1 - 0.1 * 0.1 / 32.0, 0.1 - 0.1 * 0.1 / 32.0);
      CalmaConfig cfg;
      cfg.alpha = 0.1;
      CalmaResult r = calma::calma(table_pred(in), wl, in.dist, cfg);
      auto e = ExpectationEngine::exact(in.dist);
      auto k = WeightFunction::from("k", 1.0, [g](double v) { return g.inverse(v); });
      double a1 = weighted_ce(r.predictor, {k}, e), a2 = mae(r.predictor, C, e);
      const double B = 2.0;
      for (int j = 0; j < 50; ++j) {
        Hypothesis h = lin_combination(C, oracle::random_lin_weights(rng, C, B), B);
        double res = std::abs(pythagorean_residual(r.predictor, g, h, e));
        worst_margin = std::min(worst_margin, a1 + B * a2 - res);
        if (res > a1 + B * a2 + 1e-12) ++viol_b;
      }
    }
  }
  Outcome o{viol_a == 0 && viol_b == 0,
            "400 pairs: max ||residual| - |gap|| = " + fmt(worst_abs) + "; after calma: " + std::to_string(viol_b) +
                " bound violations over 1500 h ∈ Lin(C,2) (min margin " + fmt(worst_margin) + ")"};
  o.notes.push_back("signed relation: max |residual + loss_oi_gap| = " + fmt(worst_signed));
  return o;
}

// ---- 9 ----
Outcome c09_end_to_end() {
  std::mt19937_64 rng(9);
  int bool_viol = 0, int_viol = 0;
  double bool_ratio = 0.0, int_worst = 0.0;
  // Boolean cube with C = {x_i, 1 - x_i} and the constant 1, negation closed
  std::vector<Point> cube;
  for (int a : {0, 1})
    for (int b : {0, 1})
      for (int c : {0, 1}) cube.push_back({double(a), double(b), double(c)});
  std::vector<Hypothesis> boolean = {Hypothesis::constant(1.0)};
  for (std::size_t i = 0; i < 3; ++i) {
    boolean.push_back(Hypothesis::coordinate(i));
    std::vector<double> w(3, 0.0);
    w[i] = -1.0;
    boolean.push_back(Hypothesis::affine(w, 1.0, 1.0));
  }
  const HypothesisClass Cb = HypothesisClass::closed(boolean);
  for (int t = 0; t < 10; ++t) {
    FiniteDistribution dist = oracle::random_distribution(rng, 8, 3);
    dist.points = cube;
    CalmaConfig cfg;
    cfg.alpha = 0.1;
    const double s = cfg.alpha - cfg.delta_value();
    ExhaustiveWeakLearner wl(Cb, s, s);
    CalmaResult r = calma::calma(Predictor::constant(0.5), wl, dist, cfg);
    auto e = ExpectationEngine::exact(dist);
    double a = std::max(ece(r.predictor, e), mae(r.predictor, Cb, e));
    for (int j = 0; j < 50; ++j) {
      Loss loss = oracle::random_bounded_loss(rng);
      for (const auto& c : boolean) {
        double g = std::abs(loss_oi_gap(r.predictor, loss, c, e));
        if (a > 0.0) bool_ratio = std::max(bool_ratio, g / a);
        if (g > 4.0 * a + 1e-12) ++bool_viol;
      }
    }
  }
  // Int(C, a)-multiaccuracy with a = 0.2 on [-1,1]^2
  const double a = 0.2;
  const HypothesisClass C2 = oracle::signed_coordinates(2);
  const HypothesisClass Ic = interval_class(C2, a);
  for (int t = 0; t < 10; ++t) {
    FiniteDistribution dist = oracle::random_distribution(rng, 20, 2);
    ExhaustiveWeakLearner wl(Ic, a * a, a * a);
    auto e = ExpectationEngine::exact(dist);
    MaResult r = ma_algorithm(Predictor::constant(0.5), a * a, wl, e);
    for (int j = 0; j < 50; ++j) {
      Loss loss = oracle::random_lipschitz_loss(rng);
      for (const auto& c : C2) {
        double g = std::abs(hypothesis_oi_gap(r.predictor, loss, c, e));
        int_worst = std::max(int_worst, g);
        if (g > 3.0 * a + 1e-12) ++int_viol;
      }
    }
  }
  return {bool_viol == 0 && int_viol == 0,
          "Boolean: " + std::to_string(bool_viol) + " violations of |loss gap| <= 4α (max ratio " + fmt(bool_ratio) +
              "); Int(C,0.2): " + std::to_string(int_viol) + " violations of 3α = 0.6 (max gap " + fmt(int_worst) +
              ")"};
}

// ---- 10 ----
Outcome c10_benchmark() {
  auto t0 = Clock::now();
  struct Table {
    int s, d;
    std::vector<double> optimal;
  };
  const std::vector<Table> tables = {
      {2, 2, {0.21, 0.35, 1.54, 0.61}}, {4, 4, {0.18, 0.28, 1.51, 0.57}}, {4, 10, {0.08, 0.07, 1.55, 0.57}}};
  Outcome o;
  std::vector<std::string> failed;
  for (const auto& tb : tables) {
    BenchConfig cfg;
    cfg.mixture.s = tb.s;
    cfg.mixture.d = tb.d;
    BenchResult r = run_benchmark(cfg);
    std::string tag = "s=" + std::to_string(tb.s) + ",d=" + std::to_string(tb.d);
    std::ostringstream line;
    line << tag << ":";
    bool ok = !r.partial;
    for (std::size_t j = 0; j < r.columns.size(); ++j) {
      const auto& c = r.columns[j];
      double opt = r.at("optimal", c).mean, cm = r.at("calma", c).mean;
      bool base_ok = std::abs(opt - tb.optimal[j]) <= 0.05;
      bool calma_ok = cm <= opt + 0.05;
      ok = ok && base_ok && calma_ok;
      line << " " << c << " opt " << fmt(opt, 3) << " (reference " << fmt(tb.optimal[j], 3) << (base_ok ? "" : " ✗")
           << ") calMA " << fmt(cm, 3) << (calma_ok ? "" : " ✗") << ";";
    }
    std::vector<std::size_t> iters;
    for (const auto& sm : r.metadata["per_seed"])
      iters.push_back(sm.value("calma_outer_iterations", std::size_t{0}));
    line << " outer iterations per seed [";
    for (std::size_t k = 0; k < iters.size(); ++k) line << (k ? "," : "") << iters[k];
    line << "]";
    o.notes.push_back(line.str());
    if (!ok) failed.push_back(tag);
  }
  double dt = seconds_since(t0);
  o.pass = failed.empty() && dt < 300.0;
  std::string f;
  for (const auto& s : failed) f += (f.empty() ? "" : ", ") + s;
  o.summary = "5 seeds per table, runtime " + fmt(dt, 4) + " s" + (failed.empty() ? "" : "; off-target: " + f);
  return o;
}

// ---- 11 ----
Outcome c11_sim() {
  CounterexampleReport r = sim_counterexample(100);
  bool algebra = r.claim("ma_system_rank").pass() && r.claim("ma_system_kernel_alignment").pass() &&
                 r.claim("ma_system_parametrization_residual").pass();
  const Claim& v = r.claim("sim_min_violation");
  Outcome o{algebra && v.pass(), "grid min violation " + fmt(v.value) + " (needs > 0.05), MA-system algebra " +
                                     (algebra ? "verified" : "FAILED")};
  if (r.details.contains("min_violation_conditional"))
    o.notes.push_back("conditional-MAE minimum " + r.details["min_violation_conditional"].dump());
  return o;
}

// ---- 12 ----
Outcome c12_truncated() {
  TruncatedDecision td = truncated_decision(glm_sigmoid(), 0.01);
  std::mt19937_64 rng(12);
  const HypothesisClass C = oracle::signed_coordinates(3);
  const Loss loss = glm_sigmoid().loss();
  const double B = 2.0;
  int viol = 0;
  double margin = kInf;
  for (int t = 0; t < 20; ++t) {
    auto in = oracle::random_instance(rng);
    CalmaConfig cfg;
    cfg.alpha = 0.1;
    const double s = cfg.alpha - cfg.delta_value();
    ExhaustiveWeakLearner wl(C, s, s);
    CalmaResult r = calma::calma(table_pred(in), wl, in.dist, cfg);
    auto e = ExpectationEngine::exact(in.dist);
    double a1 = ece(r.predictor, e), a2 = mae(r.predictor, C, e);
    std::vector<Hypothesis> hs(C.begin(), C.end());
    for (int j = 0; j < 100; ++j) hs.push_back(lin_combination(C, oracle::random_lin_weights(rng, C, B), B));
    double reg = omni_regret(r.predictor, loss, hs, e, td);
    double bound = td.bound * a1 + B * a2 + td.delta;
    margin = std::min(margin, bound - reg);
    if (reg > bound + 1e-12) ++viol;
  }
  bool ok = td.suboptimality <= 0.01 && td.bound <= 10.0 && viol == 0;
  return {ok, "D = " + fmt(td.bound) + ", grid suboptimality " + fmt(td.suboptimality) + ", regret violations " +
                  std::to_string(viol) + " over 20 instances (min margin " + fmt(margin) + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::vector<int> only;
  app.add_option("--only", only, "criterion numbers to run");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"parity counterexample", c01_parity},
      {"decomposition identity", c02_decomposition},
      {"hypothesis/decision OI characterizations", c03_characterizations},
      {"multiaccuracy potential drop", c04_ma_potential},
      {"calMA termination and guarantees", c05_calma_exact},
      {"recalibration error reduction", c06_recalibration},
      {"l1-regularized GLM multiaccuracy", c07_glm_fit},
      {"Pythagorean residual and GLM loss OI", c08_pythagorean},
      {"Boolean and interval end-to-end bounds", c09_end_to_end},
      {"benchmark reproduction", c10_benchmark},
      {"SIM counterexample", c11_sim},
      {"truncated logistic decision", c12_truncated},
  };
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what(), {}};
    }
    std::printf("%s %2d  %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.summary.c_str());
    for (const auto& n : o.notes) std::printf("        %s\n", n.c_str());
    std::fflush(stdout);
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
