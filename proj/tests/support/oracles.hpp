#pragma once

// Independent reference computations and random instance generators shared by the tests.
// Nothing here calls into the library's algorithms; only the plain data types are reused.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "calma/core/hypothesis.hpp"
#include "calma/core/types.hpp"
#include "calma/losses.hpp"

namespace oracle {

using calma::Point;

// ---- direct formulas over weighted points ----

// E[(t - p)] per distinct value of p, absolute, weighted by mass
inline double ece(const std::vector<double>& p, const std::vector<double>& w, const std::vector<double>& t) {
  std::map<double, double> bias;
  for (std::size_t i = 0; i < p.size(); ++i) bias[p[i]] += w[i] * (t[i] - p[i]);
  double s = 0.0;
  for (const auto& [v, b] : bias) s += std::abs(b);
  return s;
}

inline double mae(const std::vector<double>& p, const std::vector<double>& w, const std::vector<double>& t,
                  const std::vector<std::vector<double>>& cvals) {
  double best = 0.0;
  for (const auto& c : cvals) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += w[i] * c[i] * (t[i] - p[i]);
    best = std::max(best, std::abs(s));
  }
  return best;
}

inline double l2sq(const std::vector<double>& a, const std::vector<double>& b, const std::vector<double>& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += w[i] * (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

// expected loss with labels drawn from q and action t
inline double expected_loss(const calma::Loss& loss, double q, double t) {
  return q * loss.at1(t) + (1.0 - q) * loss.at0(t);
}

// minimum of the expected loss over a dense grid of the action domain (clamped to [-lim, lim])
inline double grid_min_expected(const calma::Loss& loss, double p, int n = 200000, double lim = 20.0) {
  auto d = loss.action_domain();
  double lo = std::max(d.lo, -lim), hi = std::min(d.hi, lim);
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= n; ++i) best = std::min(best, expected_loss(loss, p, lo + (hi - lo) * i / n));
  return best;
}

// isotonic regression by the min-max formula f_i = max_{j<=i} min_{k>=i} avg(j..k) on sorted blocks
inline std::vector<double> isotonic_minmax(const std::vector<double>& scores, const std::vector<double>& labels,
                                           const std::vector<double>& weights) {
  std::map<double, std::pair<double, double>> blocks;  // score -> (wsum, wysum)
  for (std::size_t i = 0; i < scores.size(); ++i) {
    blocks[scores[i]].first += weights[i];
    blocks[scores[i]].second += weights[i] * labels[i];
  }
  std::vector<double> ws, ys, keys;
  for (const auto& [k, v] : blocks) {
    keys.push_back(k);
    ws.push_back(v.first);
    ys.push_back(v.second);
  }
  const std::size_t m = keys.size();
  std::vector<double> fit(m);
  for (std::size_t i = 0; i < m; ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j <= i; ++j) {
      double inner = std::numeric_limits<double>::infinity();
      for (std::size_t k = i; k < m; ++k) {
        double W = 0.0, Y = 0.0;
        for (std::size_t r = j; r <= k; ++r) {
          W += ws[r];
          Y += ys[r];
        }
        inner = std::min(inner, Y / W);
      }
      best = std::max(best, inner);
    }
    fit[i] = best;
  }
  std::vector<double> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i)
    out[i] = fit[static_cast<std::size_t>(std::lower_bound(keys.begin(), keys.end(), scores[i]) - keys.begin())];
  return out;
}

inline double softplus(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }
inline double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

inline double xlogx_ratio(double a, double b) { return a == 0.0 ? 0.0 : a * std::log(a / b); }

inline double kl_bernoulli(double a, double b) { return xlogx_ratio(a, b) + xlogx_ratio(1.0 - a, 1.0 - b); }

// composite Simpson rule on [a, b]
inline double simpson(const std::function<double(double)>& f, double a, double b, int n = 2000) {
  if (n % 2) ++n;
  double h = (b - a) / n, s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

// index of the width-2δ bucket, with 1 in the last bucket
inline std::size_t bucket_index(double v, double delta) {
  std::size_t m = static_cast<std::size_t>(std::ceil(1.0 / (2.0 * delta) - 1e-9));
  std::size_t j = static_cast<std::size_t>(std::floor(v / (2.0 * delta)));
  return std::min(j, m - 1);
}

inline double bucket_mid(std::size_t j, double delta) { return std::min(1.0, delta * (2.0 * j + 1.0)); }

// ---- random instances ----

struct Instance {
  calma::FiniteDistribution dist;
  std::vector<double> pred;  // predictor values on dist.points
};

inline calma::FiniteDistribution random_distribution(std::mt19937_64& rng, std::size_t n, std::size_t d,
                                                     double box = 1.0) {
  std::uniform_real_distribution<double> u(-box, box), m(0.05, 1.0), b(0.0, 1.0);
  calma::FiniteDistribution dist;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Point x(d);
    for (auto& v : x) v = u(rng);
    dist.points.push_back(x);
    dist.mass.push_back(m(rng));
    total += dist.mass.back();
    dist.bayes.push_back(b(rng));
  }
  for (auto& w : dist.mass) w /= total;
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) s += dist.mass[i];
  dist.mass.back() = 1.0 - s;
  return dist;
}

inline Instance random_instance(std::mt19937_64& rng, std::size_t max_points = 20, std::size_t d = 3) {
  std::uniform_int_distribution<std::size_t> np(2, max_points);
  Instance in;
  in.dist = random_distribution(rng, np(rng), d);
  std::uniform_real_distribution<double> pv(0.01, 0.99);
  for (std::size_t i = 0; i < in.dist.size(); ++i) in.pred.push_back(pv(rng));
  // some shared values so level sets have more than one point
  std::bernoulli_distribution share(0.3);
  for (std::size_t i = 1; i < in.pred.size(); ++i)
    if (share(rng)) in.pred[i] = in.pred[i - 1];
  return in;
}

// piecewise-linear interpolation of (knots, values)
inline double interp(const std::vector<double>& xs, const std::vector<double>& ys, double t) {
  if (t <= xs.front()) return ys.front();
  if (t >= xs.back()) return ys.back();
  auto it = std::upper_bound(xs.begin(), xs.end(), t);
  std::size_t j = static_cast<std::size_t>(it - xs.begin());
  double a = (t - xs[j - 1]) / (xs[j] - xs[j - 1]);
  return ys[j - 1] + a * (ys[j] - ys[j - 1]);
}

// bounded loss on actions [lo, hi] with values in [0,1]; both branches are random piecewise-linear
// functions on 11 knots
inline calma::Loss random_bounded_loss(std::mt19937_64& rng, double lo = 0.0, double hi = 1.0,
                                       const std::string& name = "random") {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> xs, a0, a1;
  for (int i = 0; i <= 10; ++i) {
    xs.push_back(lo + (hi - lo) * i / 10.0);
    a0.push_back(u(rng));
    a1.push_back(u(rng));
  }
  return calma::Loss(
      name, [xs, a0](double t) { return interp(xs, a0, t); }, [xs, a1](double t) { return interp(xs, a1, t); },
      {lo, hi});
}

// loss on [-1,1] whose discrete derivative is 1-Lipschitz and bounded by 1
inline calma::Loss random_lipschitz_loss(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0), pos(0.0, 1.0);
  std::vector<double> xs, dv, base;
  // derivative knots: slopes bounded by 1 between knots 0.2 apart
  double v = u(rng) * 0.8;
  for (int i = 0; i <= 10; ++i) {
    xs.push_back(-1.0 + 0.2 * i);
    dv.push_back(v);
    base.push_back(pos(rng));
    v = std::clamp(v + 0.2 * u(rng), -1.0, 1.0);
  }
  auto at0 = [xs, base](double t) { return interp(xs, base, t); };
  auto at1 = [xs, base, dv](double t) { return interp(xs, base, t) + interp(xs, dv, t); };
  return calma::Loss("lipschitz", at0, at1, {-1.0, 1.0});
}

// a loss from the registry or a random bounded one
inline calma::Loss random_loss(std::mt19937_64& rng) {
  static const std::vector<std::string> names = {"l1",          "l2",        "l4",  "lp:3", "glm:identity",
                                                 "glm:sigmoid", "glm:crelu", "exp", "expabs", "sq"};
  std::uniform_int_distribution<std::size_t> pick(0, names.size());
  std::size_t k = pick(rng);
  if (k == names.size()) return random_bounded_loss(rng);
  return calma::make_loss(names[k]);
}

// table hypothesis with values uniform in [lo, hi] on the given points
inline calma::Hypothesis random_table(std::mt19937_64& rng, const std::vector<Point>& pts, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v;
  for (std::size_t i = 0; i < pts.size(); ++i) v.push_back(u(rng));
  return calma::Hypothesis::table(pts, v);
}

// ±x_i and the constants ±1 on [-1,1]^d, built directly
inline calma::HypothesisClass signed_coordinates(std::size_t d) {
  std::vector<calma::Hypothesis> m;
  for (std::size_t i = 0; i < d; ++i) m.push_back(calma::Hypothesis::coordinate(i));
  return calma::HypothesisClass::closed(std::move(m));
}

// random weights on the members with l1 norm at most B
inline std::map<std::string, double> random_lin_weights(std::mt19937_64& rng, const calma::HypothesisClass& cls,
                                                        double B) {
  std::uniform_real_distribution<double> u(-1.0, 1.0), scale(0.0, 1.0);
  std::vector<double> w;
  double l1 = 0.0;
  for (std::size_t i = 0; i < cls.size(); ++i) {
    w.push_back(u(rng));
    l1 += std::abs(w.back());
  }
  double s = B * scale(rng) / l1;
  std::map<std::string, double> out;
  for (std::size_t i = 0; i < cls.size(); ++i) out[cls[i].tag()] = w[i] * s;
  return out;
}

}  // namespace oracle
