#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include "calma/calibration.hpp"
#include "calma/calma.hpp"
#include "calma/core/engine.hpp"
#include "calma/core/types.hpp"
#include "calma/losses.hpp"
#include "calma/multiaccuracy.hpp"

namespace calma {

struct MixtureConfig {
  int s = 2;
  int d = 2;
  std::size_t n_train = 3000, n_cal = 1000, n_test = 10000;
  // empty selects e1
  std::vector<double> shift;
  std::uint64_t seed = 0;
  double min_center_distance = 4.0;
  double center_box = 4.0;
  int max_retries = 10000;

  std::vector<double> shift_vector() const {
    if (!shift.empty()) return shift;
    std::vector<double> e(static_cast<std::size_t>(d), 0.0);
    if (d > 0) e[0] = 1.0;
    return e;
  }

  void validate() const {
    if (s < 1 || d < 1) throw ValidationError("mixture: s and d must be positive");
    if (n_train == 0 || n_cal == 0 || n_test == 0) throw ValidationError("mixture: sample counts must be positive");
    auto sh = shift_vector();
    if (sh.size() != static_cast<std::size_t>(d)) throw ValidationError("mixture: shift has the wrong dimension");
    double nrm = std::sqrt(std::inner_product(sh.begin(), sh.end(), sh.begin(), 0.0));
    if (std::abs(nrm - 1.0) > 1e-9) throw ValidationError("mixture: shift must have unit norm");
  }

  json to_json() const {
    return {{"s", s}, {"d", d}, {"n_train", n_train}, {"n_cal", n_cal}, {"n_test", n_test}, {"shift", shift_vector()},
            {"seed", seed}, {"min_center_distance", min_center_distance}, {"center_box", center_box}};
  }
};

struct MixtureData {
  Dataset train, cal, test;
  std::vector<Point> centers;
};

inline MixtureData gen_gaussian_mixture(const MixtureConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> box(-cfg.center_box, cfg.center_box);
  const auto d = static_cast<std::size_t>(cfg.d);
  std::vector<Point> centers;
  int tries = 0;
  while (centers.size() < static_cast<std::size_t>(cfg.s)) {
    if (++tries > cfg.max_retries)
      throw ValidationError("mixture: could not place " + std::to_string(cfg.s) + " centers " +
                            std::to_string(cfg.min_center_distance) + " apart (seed " + std::to_string(cfg.seed) + ")");
    Point c(d);
    for (auto& v : c) v = box(rng);
    bool ok = std::all_of(centers.begin(), centers.end(), [&](const Point& o) {
      double s2 = 0.0;
      for (std::size_t i = 0; i < d; ++i) s2 += (c[i] - o[i]) * (c[i] - o[i]);
      return std::sqrt(s2) >= cfg.min_center_distance;
    });
    if (ok) centers.push_back(std::move(c));
  }
  const auto shift = cfg.shift_vector();
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_int_distribution<int> comp(0, cfg.s - 1);
  auto split = [&](std::size_t n) {
    std::vector<int> labels(n, 0);
    for (std::size_t i = n / 2 + n % 2; i < n; ++i) labels[i] = 1;
    std::shuffle(labels.begin(), labels.end(), rng);
    Dataset ds;
    ds.seed = cfg.seed;
    for (int y : labels) {
      const Point& c = centers[static_cast<std::size_t>(comp(rng))];
      Point x(d);
      for (std::size_t i = 0; i < d; ++i) x[i] = c[i] + noise(rng) + y * shift[i];
      ds.append(std::move(x), y);
    }
    return ds;
  };
  MixtureData out;
  out.train = split(cfg.n_train);
  out.cal = split(cfg.n_cal);
  out.test = split(cfg.n_test);
  out.centers = centers;
  return out;
}

// Linear score w·x + b with the loss's link: "clip" (action and probability clip(s)),
// "logit" (action s, probability σ(s)), "margin" (action s, probability σ(2s)).
struct LinearBaseline {
  std::string loss;
  std::vector<double> weights;
  double bias = 0.0;
  std::string link = "clip";
  std::size_t iterations = 0;
  double grad_norm = 0.0;
  bool converged = true;

  double score(const Point& x) const {
    double s = bias;
    for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * x[i];
    return s;
  }
  double action(const Point& x) const {
    double s = score(x);
    return link == "clip" ? clamp01(s) : s;
  }
  double probability(const Point& x) const {
    double s = score(x);
    if (link == "clip") return clamp01(s);
    double z = link == "margin" ? 2.0 * s : s;
    return 1.0 / (1.0 + std::exp(-z));
  }
  Predictor predictor() const {
    LinearBaseline self = *this;
    return Predictor::function("linear:" + loss, [self](const Point& x) { return self.probability(x); });
  }
  json to_json() const {
    return {{"loss", loss},         {"weights", weights},     {"bias", bias},          {"link", link},
            {"iterations", iterations}, {"grad_norm", grad_norm}, {"converged", converged}};
  }
};

namespace detail {

inline Eigen::MatrixXd design(const Dataset& data) {
  const std::size_t n = data.size(), d = data.dim();
  Eigen::MatrixXd A(n, d + 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) A(i, j) = data.x[i][j];
    A(i, d) = 1.0;
  }
  return A;
}

inline Eigen::VectorXd labels(const Dataset& data) {
  Eigen::VectorXd y(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) y(i) = data.y[i];
  return y;
}

inline LinearBaseline to_baseline(const std::string& loss, const Eigen::VectorXd& beta, const std::string& link) {
  LinearBaseline b;
  b.loss = loss;
  b.weights.assign(beta.data(), beta.data() + beta.size() - 1);
  b.bias = beta(beta.size() - 1);
  b.link = link;
  return b;
}

// Newton's method with backtracking for a smooth convex mean loss φ(margin-free score)
template <class Value, class Deriv>
Eigen::VectorXd newton(const Eigen::MatrixXd& A, Value value, Deriv deriv, std::size_t& iters, double& gnorm,
                       bool& converged, double tol = 1e-8, std::size_t max_iter = 200) {
  const auto n = static_cast<double>(A.rows());
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(A.cols());
  auto objective = [&](const Eigen::VectorXd& b) {
    Eigen::VectorXd s = A * b;
    double t = 0.0;
    for (Eigen::Index i = 0; i < s.size(); ++i) t += value(i, s(i));
    return t / n;
  };
  double f = objective(beta);
  converged = false;
  for (iters = 0; iters < max_iter; ++iters) {
    Eigen::VectorXd s = A * beta, g1(s.size()), g2(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) deriv(i, s(i), g1(i), g2(i));
    Eigen::VectorXd grad = A.transpose() * g1 / n;
    gnorm = grad.lpNorm<Eigen::Infinity>();
    if (gnorm <= tol) {
      converged = true;
      break;
    }
    Eigen::MatrixXd H = A.transpose() * g2.asDiagonal() * A / n;
    H.diagonal().array() += 1e-12;
    Eigen::VectorXd step = H.ldlt().solve(grad);
    double t = 1.0, fn = f;
    Eigen::VectorXd cand;
    for (int bt = 0; bt < 60; ++bt) {
      cand = beta - t * step;
      fn = objective(cand);
      if (fn <= f - 1e-4 * t * grad.dot(step)) break;
      t *= 0.5;
    }
    if (!(fn <= f)) break;
    beta = cand;
    f = fn;
  }
  return beta;
}

struct NmContext {
  const Eigen::MatrixXd* A;
  const Eigen::VectorXd* y;
  const Loss* loss;
};

inline double nm_objective(const gsl_vector* v, void* params) {
  const auto* ctx = static_cast<const NmContext*>(params);
  Eigen::Map<const Eigen::VectorXd> beta(v->data, static_cast<Eigen::Index>(v->size));
  Eigen::VectorXd s = (*ctx->A) * beta;
  double t = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) t += (*ctx->loss)(static_cast<int>((*ctx->y)(i)), clamp01(s(i)));
  return t / static_cast<double>(s.size());
}

// Nelder–Mead (GSL nmsimplex2) on a clipped linear score, restarted from the last optimum
inline Eigen::VectorXd nelder_mead(const Eigen::MatrixXd& A, const Eigen::VectorXd& y, const Loss& loss,
                                   Eigen::VectorXd start, std::size_t& iters, double& size, bool& converged) {
  gsl_set_error_handler_off();
  const std::size_t n = static_cast<std::size_t>(A.cols());
  NmContext ctx{&A, &y, &loss};
  gsl_multimin_function fn{&nm_objective, n, &ctx};
  gsl_vector* x = gsl_vector_alloc(n);
  gsl_vector* ss = gsl_vector_alloc(n);
  gsl_multimin_fminimizer* m = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n);
  iters = 0;
  converged = false;
  double last = kInf;
  for (int restart = 0; restart < 3; ++restart) {
    for (std::size_t i = 0; i < n; ++i) gsl_vector_set(x, i, start(static_cast<Eigen::Index>(i)));
    gsl_vector_set_all(ss, restart == 0 ? 0.1 : 0.02);
    gsl_multimin_fminimizer_set(m, &fn, x, ss);
    int status = GSL_CONTINUE;
    for (std::size_t it = 0; it < 20000 && status == GSL_CONTINUE; ++it, ++iters) {
      if (gsl_multimin_fminimizer_iterate(m)) break;
      size = gsl_multimin_fminimizer_size(m);
      status = gsl_multimin_test_size(size, 1e-8);
    }
    const double f = gsl_multimin_fminimizer_minimum(m);
    converged = status == GSL_SUCCESS || last - f <= 1e-10;
    last = f;
    for (std::size_t i = 0; i < n; ++i) start(static_cast<Eigen::Index>(i)) = gsl_vector_get(m->x, i);
  }
  gsl_multimin_fminimizer_free(m);
  gsl_vector_free(ss);
  gsl_vector_free(x);
  return start;
}

}  // namespace detail

// mean of ℓ(y, action(x)) over a dataset
template <class Action>
double mean_loss(const Loss& loss, const Dataset& data, Action action) {
  double s = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) s += loss(data.y[i], action(data.x[i]));
  return s / static_cast<double>(data.size());
}

// Per-loss linear baseline: sq/l2 least squares, glm:sigmoid logistic regression (Newton),
// exp exponential loss on the margin (Newton), l1 and expabs Nelder–Mead on a clipped score.
inline LinearBaseline fit_linear_baseline(const std::string& loss_name, const Dataset& data) {
  data.validate();
  const Eigen::MatrixXd A = detail::design(data);
  const Eigen::VectorXd y = detail::labels(data);
  auto least_squares = [&]() {
    Eigen::MatrixXd G = A.transpose() * A;
    G.diagonal().array() += 1e-12;
    return Eigen::VectorXd(G.ldlt().solve(A.transpose() * y));
  };
  if (loss_name == "sq" || loss_name == "l2") {
    LinearBaseline b = detail::to_baseline(loss_name, least_squares(), "clip");
    Eigen::VectorXd r = A * least_squares() - y;
    b.grad_norm = (A.transpose() * r / static_cast<double>(A.rows())).lpNorm<Eigen::Infinity>();
    b.iterations = 1;
    return b;
  }
  if (loss_name == "glm:sigmoid" || loss_name == "log") {
    std::size_t it = 0;
    double g = 0.0;
    bool ok = false;
    auto value = [&](Eigen::Index i, double s) {
      double sp = s > 0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s));
      return sp - y(i) * s;
    };
    auto deriv = [&](Eigen::Index i, double s, double& d1, double& d2) {
      double p = 1.0 / (1.0 + std::exp(-s));
      d1 = p - y(i);
      d2 = p * (1.0 - p);
    };
    Eigen::VectorXd beta = detail::newton(A, value, deriv, it, g, ok);
    LinearBaseline b = detail::to_baseline(loss_name, beta, "logit");
    b.iterations = it;
    b.grad_norm = g;
    b.converged = ok;
    return b;
  }
  if (loss_name == "exp") {
    std::size_t it = 0;
    double g = 0.0;
    bool ok = false;
    auto value = [&](Eigen::Index i, double s) { return std::exp(-(2.0 * y(i) - 1.0) * s); };
    auto deriv = [&](Eigen::Index i, double s, double& d1, double& d2) {
      double m = 2.0 * y(i) - 1.0, e = std::exp(-m * s);
      d1 = -m * e;
      d2 = e;
    };
    Eigen::VectorXd beta = detail::newton(A, value, deriv, it, g, ok);
    LinearBaseline b = detail::to_baseline(loss_name, beta, "margin");
    b.iterations = it;
    b.grad_norm = g;
    b.converged = ok;
    return b;
  }
  if (loss_name == "l1" || loss_name == "expabs") {
    // the clipped objective is non-convex and flat outside [0,1]; start from least squares and from
    // steepened copies of it (the l1 optimum approaches a threshold rule) and keep the best optimum
    Loss loss = make_loss(loss_name);
    const Eigen::VectorXd ls = least_squares();
    const Eigen::Index d = ls.size() - 1;
    std::optional<LinearBaseline> best;
    double best_f = kInf;
    for (double steep : {1.0, 4.0, 16.0}) {
      Eigen::VectorXd start = steep * ls;
      start(d) = 0.5 + steep * (ls(d) - 0.5);
      std::size_t it = 0;
      double size = 0.0;
      bool ok = false;
      Eigen::VectorXd beta = detail::nelder_mead(A, y, loss, start, it, size, ok);
      double f = mean_loss(loss, data, [&](const Point& x) {
        double sc = beta(d);
        for (Eigen::Index j = 0; j < d; ++j) sc += beta(j) * x[static_cast<std::size_t>(j)];
        return clamp01(sc);
      });
      if (f < best_f) {
        best_f = f;
        best = detail::to_baseline(loss_name, beta, "clip");
        best->iterations = it;
        best->grad_norm = size;
        best->converged = ok;
      }
    }
    return *best;
  }
  throw ValidationError("fit_linear_baseline: no baseline for loss " + loss_name);
}

// predictions are held inside [eps, 1 - eps] before k_ℓ so losses with open images stay finite
inline constexpr double kEvalProbClip = 1e-12;

// mean loss of the Bayes action k_ℓ(p(x)) for a predictor p
inline double decision_loss(const Loss& loss, const Predictor& pred, const Dataset& data) {
  std::map<double, double> memo;
  return mean_loss(loss, data, [&](const Point& x) {
    double p = std::clamp(pred(x), kEvalProbClip, 1.0 - kEvalProbClip);
    auto it = memo.find(p);
    if (it == memo.end()) it = memo.emplace(p, optimal_decision(loss, p)).first;
    return it->second;
  });
}

struct BenchColumn {
  std::string label;
  std::string loss;
};

// table columns: mean squared error, absolute error, exp(|y - t|), logistic loss
inline std::vector<BenchColumn> bench_columns() {
  return {{"l2", "sq"}, {"l1", "l1"}, {"exp", "expabs"}, {"log", "glm:sigmoid"}};
}

struct BenchConfig {
  MixtureConfig mixture;
  double alpha = 0.1;
  // default alpha / 4
  std::optional<double> delta;
  RecalBackend backend = RecalBackend::isotonic;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  double ls_tol = 1e-5;
  std::size_t max_outer = 50;

  double delta_value() const { return delta.value_or(alpha / 4.0); }
};

struct BenchCell {
  double mean = 0.0, spread = 0.0;
  std::vector<double> per_seed;
};

struct BenchResult {
  std::vector<std::string> columns;
  std::vector<std::string> rows;
  std::map<std::string, std::map<std::string, BenchCell>> cells;
  json metadata = json::object();
  bool partial = false;

  const BenchCell& at(const std::string& row, const std::string& col) const { return cells.at(row).at(col); }

  json to_json() const {
    json t = json::object();
    for (const auto& r : rows) {
      json row = json::object();
      for (const auto& c : columns) {
        const auto& cell = at(r, c);
        row[c] = {{"mean", cell.mean}, {"spread", cell.spread}, {"per_seed", cell.per_seed}};
      }
      t[r] = row;
    }
    return {{"columns", columns}, {"rows", rows}, {"table", t}, {"metadata", metadata}, {"partial", partial}};
  }

  std::string to_csv() const {
    std::ostringstream os;
    os.precision(6);
    os << "algorithm";
    for (const auto& c : columns) os << "," << c << "," << c << "_spread";
    os << "\n";
    for (const auto& r : rows) {
      os << r;
      for (const auto& c : columns) os << "," << at(r, c).mean << "," << at(r, c).spread;
      os << "\n";
    }
    return os.str();
  }

  std::string to_markdown() const {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(3);
    os << "| Algorithm |";
    for (const auto& c : columns) os << " " << c << " |";
    os << "\n|---|";
    for (std::size_t i = 0; i < columns.size(); ++i) os << "---|";
    os << "\n";
    for (const auto& r : rows) {
      os << "| " << r << " |";
      for (const auto& c : columns) os << " " << at(r, c).mean << " ± " << at(r, c).spread << " |";
      os << "\n";
    }
    return os.str();
  }
};

inline BenchCell summarize(std::vector<double> xs) {
  BenchCell c;
  c.per_seed = xs;
  if (xs.empty()) return c;
  c.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double v = 0.0;
  for (double x : xs) v += (x - c.mean) * (x - c.mean);
  c.spread = xs.size() > 1 ? std::sqrt(v / static_cast<double>(xs.size() - 1)) : 0.0;
  return c;
}

// Trains calMA (least-squares weak learner, selectable recalibration) and the per-loss linear
// baselines on each seed's mixture, and evaluates every (algorithm, loss) pair on the test split.
inline BenchResult run_benchmark(const BenchConfig& cfg) {
  const auto cols = bench_columns();
  std::map<std::string, std::map<std::string, std::vector<double>>> acc;
  json seeds_meta = json::array();
  bool partial = false;
  for (auto seed : cfg.seeds) {
    MixtureConfig mc = cfg.mixture;
    mc.seed = seed;
    MixtureData data = gen_gaussian_mixture(mc);
    json sm = {{"seed", seed}};

    const LinearBaseline lr = fit_linear_baseline("sq", data.train);
    for (const auto& col : cols) {
      Loss loss = make_loss(col.loss);
      LinearBaseline b = col.loss == "sq" ? lr : fit_linear_baseline(col.loss, data.train);
      acc["optimal"][col.label].push_back(mean_loss(loss, data.test, [&](const Point& x) { return b.action(x); }));
      sm["baseline_" + col.label] = b.to_json();
      acc["linear_regression"][col.label].push_back(decision_loss(loss, lr.predictor(), data.test));
    }

    CalmaConfig cc;
    cc.alpha = cfg.alpha;
    cc.delta = cfg.delta_value();
    cc.backend = cfg.backend;
    cc.max_outer = cfg.max_outer;
    LeastSquaresWeakLearner wl(cfg.ls_tol);
    try {
      auto tr_e = ExpectationEngine::empirical(data.train), cal_e = ExpectationEngine::empirical(data.cal);
      CalmaResult res = calma(Predictor::constant(0.5), wl, tr_e, cal_e, cc);
      for (const auto& col : cols)
        acc["calma"][col.label].push_back(decision_loss(make_loss(col.loss), res.predictor, data.test));
      sm["calma_outer_iterations"] = res.trace.iterations.size();
      sm["calma_wl_calls"] = res.trace.total_wl_calls();
      sm["calma_recalibrations"] = res.trace.recalibrations();
    } catch (const ConvergenceError& e) {
      partial = true;
      sm["calma_error"] = e.what();
    }
    seeds_meta.push_back(sm);
  }
  BenchResult r;
  for (const auto& c : cols) r.columns.push_back(c.label);
  r.rows = {"optimal", "linear_regression", "calma"};
  for (const auto& row : r.rows)
    for (const auto& c : cols) r.cells[row][c.label] = summarize(acc[row][c.label]);
  r.partial = partial;
  r.metadata = {{"mixture", cfg.mixture.to_json()},
                {"alpha", cfg.alpha},
                {"delta", cfg.delta_value()},
                {"backend", to_string(cfg.backend)},
                {"seeds", cfg.seeds},
                {"column_losses", json::object()},
                {"per_seed", seeds_meta}};
  for (const auto& c : cols) r.metadata["column_losses"][c.label] = c.loss;
  return r;
}

}  // namespace calma
