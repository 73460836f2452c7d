#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "calma/bench.hpp"
#include "calma/calma.hpp"
#include "calma/core/io.hpp"
#include "calma/oi_audit.hpp"
#include "calma/serialize.hpp"

namespace {

using namespace calma;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitThreshold = 2;
constexpr int kExitConvergence = 3;

bool has_suffix(const std::string& s, const std::string& suf) {
  return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

// data source: a CSV sample (empirical engine) or a distribution JSON (exact engine)
struct Source {
  std::optional<Dataset> data;
  std::optional<FiniteDistribution> dist;

  std::vector<Point> domain() const { return data ? data->x : dist->points; }
  ExpectationEngine engine() const {
    return data ? ExpectationEngine::empirical(*data) : ExpectationEngine::exact(*dist);
  }
};

Source load_source(const std::string& path) {
  Source s;
  if (has_suffix(path, ".json"))
    s.dist = distribution_from_json(read_json_file(path));
  else
    s.data = read_csv_file(path);
  return s;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out << text;
}

// ---- gen ----

struct GenOpts {
  MixtureConfig mix;
  std::string prefix = "mixture";
};

int run_gen(const GenOpts& o) {
  MixtureData d = gen_gaussian_mixture(o.mix);
  write_csv_file(o.prefix + "_train.csv", d.train);
  write_csv_file(o.prefix + "_cal.csv", d.cal);
  write_csv_file(o.prefix + "_test.csv", d.test);
  std::cout << "wrote " << o.prefix << "_{train,cal,test}.csv (" << d.train.size() << "/" << d.cal.size() << "/"
            << d.test.size() << " rows, d=" << o.mix.d << ")\n";
  return kExitOk;
}

// ---- train ----

struct TrainOpts {
  std::string data, cal, class_spec = "coords", out = "model.json", trace = "trace.json";
  std::string recal = "bucket", learner = "exhaustive", mode = "fixed";
  double alpha = 0.1;
  std::optional<double> delta, mu, sigma;
  std::uint64_t seed = 0;
  std::optional<std::size_t> max_outer;
  std::size_t batch = 1000;
  std::optional<std::size_t> samples;
};

int run_train(const TrainOpts& o) {
  Source src = load_source(o.data);
  CalmaConfig cfg;
  cfg.alpha = o.alpha;
  cfg.delta = o.delta;
  cfg.mu = o.mu;
  cfg.backend = parse_backend(o.recal);
  cfg.max_outer = o.max_outer;
  cfg.ma_batch = o.batch;
  if (o.samples) cfg.estece.sample_size = cfg.recal.sample_size = *o.samples;

  std::unique_ptr<WeakLearner> wl;
  if (o.learner == "ls") {
    wl = std::make_unique<LeastSquaresWeakLearner>(o.sigma.value_or(1e-4));
  } else if (o.learner == "exhaustive") {
    double s = o.sigma.value_or((cfg.alpha - cfg.delta_value()) / 2.0);
    wl = std::make_unique<ExhaustiveWeakLearner>(parse_class_spec(o.class_spec, src.domain()), s, s);
  } else {
    throw ValidationError("unknown weak learner: " + o.learner);
  }

  const Predictor p0 = Predictor::constant(0.5);
  auto run = [&]() -> CalmaResult {
    if (o.mode == "fixed") {
      auto ma_e = src.engine();
      if (o.cal.empty()) return calma::calma(p0, *wl, ma_e, ma_e, cfg);
      Source cal = load_source(o.cal);
      return calma::calma(p0, *wl, ma_e, cal.engine(), cfg);
    }
    if (o.mode != "bootstrap") throw ValidationError("unknown training mode: " + o.mode);
    auto make = [&](const Source& s, std::uint64_t seed) -> std::unique_ptr<Sampler> {
      if (s.data) return std::make_unique<DatasetSampler>(*s.data, DatasetSampler::Mode::bootstrap, seed);
      return std::make_unique<DistributionSampler>(*s.dist, seed);
    };
    auto ma_s = make(src, o.seed);
    auto cal_s = o.cal.empty() ? make(src, o.seed + 1) : make(load_source(o.cal), o.seed + 1);
    return calma::calma(p0, *wl, *ma_s, *cal_s, cfg);
  };
  const CalmaResult res = run();

  json meta = {{"alpha", cfg.alpha},       {"delta", cfg.delta_value()}, {"class", o.class_spec},
               {"learner", wl->name()},    {"backend", o.recal},         {"mode", o.mode},
               {"seed", o.seed},           {"data", o.data}};
  write_json_file(o.out, model_to_json(res.predictor, meta));
  write_json_file(o.trace, res.trace.to_json());
  std::cout << "calma: " << res.trace.iterations.size() << " outer iterations, " << res.trace.total_wl_calls()
            << " weak-learner calls; wrote " << o.out << " and " << o.trace << "\n";
  return kExitOk;
}

// ---- baseline ----

struct BaselineOpts {
  std::string loss = "sq", data, test, out;
};

int run_baseline(const BaselineOpts& o) {
  Dataset train = read_csv_file(o.data);
  LinearBaseline b = fit_linear_baseline(o.loss, train);
  json j = b.to_json();
  Loss loss = make_loss(o.loss == "log" ? "glm:sigmoid" : o.loss == "l2" ? "sq" : o.loss);
  j["train_loss"] = mean_loss(loss, train, [&](const Point& x) { return b.action(x); });
  if (!o.test.empty()) {
    Dataset test = read_csv_file(o.test);
    j["test_loss"] = mean_loss(loss, test, [&](const Point& x) { return b.action(x); });
  }
  if (o.out.empty())
    std::cout << j.dump(2) << "\n";
  else
    write_json_file(o.out, j);
  if (!b.converged) {
    std::cerr << "baseline " << o.loss << " did not converge (final gradient/simplex size " << b.grad_norm << ")\n";
    return kExitConvergence;
  }
  return kExitOk;
}

// ---- bench ----

struct BenchOpts {
  BenchConfig cfg;
  std::size_t seeds = 5;
  std::string recal = "isotonic";
  std::vector<std::string> out;
  double tolerance = 0.05;
};

int run_bench(BenchOpts o) {
  o.cfg.backend = parse_backend(o.recal);
  o.cfg.seeds.clear();
  for (std::size_t s = 0; s < o.seeds; ++s) o.cfg.seeds.push_back(s);
  BenchResult r = run_benchmark(o.cfg);
  std::cout << r.to_markdown();
  for (const auto& path : o.out) {
    if (has_suffix(path, ".json"))
      write_json_file(path, r.to_json());
    else if (has_suffix(path, ".csv"))
      write_text(path, r.to_csv());
    else if (has_suffix(path, ".md"))
      write_text(path, r.to_markdown());
    else
      throw ValidationError("bench output must end in .json, .csv or .md: " + path);
  }
  if (r.partial) {
    std::cerr << "bench: calMA failed to converge on some seeds\n";
    return kExitConvergence;
  }
  int code = kExitOk;
  for (const auto& c : r.columns) {
    double gap = r.at("calma", c).mean - r.at("optimal", c).mean;
    if (gap > o.tolerance) {
      std::cerr << "bench: calMA " << c << " exceeds the linear optimum by " << gap << "\n";
      code = kExitThreshold;
    }
  }
  return code;
}

// ---- counterexamples ----

struct CounterOpts {
  std::string which = "all", out;
  int resolution = 100;
};

int run_counterexamples(const CounterOpts& o) {
  std::vector<CounterexampleReport> reps;
  if (o.which == "parity" || o.which == "all") reps.push_back(parity_counterexample());
  if (o.which == "sim" || o.which == "all") reps.push_back(sim_counterexample(o.resolution));
  if (reps.empty()) throw ValidationError("unknown counterexample: " + o.which);
  json j = json::array();
  bool ok = true;
  for (const auto& r : reps) {
    for (const auto& c : r.claims)
      std::cout << r.name << "." << c.name << " = " << c.value << (c.pass() ? "  ok" : "  VIOLATED") << "\n";
    ok = ok && r.all_pass();
    j.push_back(r.to_json());
  }
  if (!o.out.empty()) write_json_file(o.out, j);
  return ok ? kExitOk : kExitThreshold;
}

// ---- audit ----

struct AuditOpts {
  std::string model, data, losses = "l1,l2,l4,glm:sigmoid", class_spec = "coords", out;
  double bucket_delta = 0.05;
  std::optional<double> max_gap;
};

int run_audit(const AuditOpts& o) {
  Predictor pred = model_from_json(read_json_file(o.model));
  Source src = load_source(o.data);
  std::vector<Loss> losses;
  for (const auto& name : split_list(o.losses)) losses.push_back(make_loss(name));
  HypothesisClass cls = parse_class_spec(o.class_spec, src.domain());
  AuditReport rep = audit(pred, losses, cls, src.engine(), o.bucket_delta);
  json j = rep.to_json();
  j["model"] = o.model;
  j["data"] = o.data;
  j["class"] = o.class_spec;
  if (o.out.empty())
    std::cout << j.dump(2) << "\n";
  else
    write_json_file(o.out, j);
  std::cout << "ece " << rep.ece << "  mae " << rep.mae << "  max |loss OI gap| " << rep.gaps.max_loss_gap << "\n";
  if (o.max_gap && rep.gaps.max_loss_gap > *o.max_gap) return kExitThreshold;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"calibrated multiaccuracy toolkit"};
  app.require_subcommand(1);

  GenOpts gen;
  auto* g = app.add_subcommand("gen", "emit train/cal/test CSV splits of a Gaussian mixture");
  g->add_option("--s", gen.mix.s, "clusters per class");
  g->add_option("--d", gen.mix.d, "dimension");
  g->add_option("--n-train", gen.mix.n_train);
  g->add_option("--n-cal", gen.mix.n_cal);
  g->add_option("--n-test", gen.mix.n_test);
  g->add_option("--shift", gen.mix.shift, "unit shift vector (default e1)")->delimiter(',');
  g->add_option("--seed", gen.mix.seed);
  g->add_option("--out-prefix", gen.prefix);

  TrainOpts tr;
  auto* t = app.add_subcommand("train", "train a calibrated multiaccurate predictor");
  t->add_option("--data", tr.data, "CSV sample or distribution JSON")->required();
  t->add_option("--cal", tr.cal, "separate calibration CSV");
  t->add_option("--class", tr.class_spec, "hypothesis class spec");
  t->add_option("--alpha", tr.alpha);
  t->add_option("--delta", tr.delta);
  t->add_option("--mu", tr.mu);
  t->add_option("--sigma", tr.sigma, "weak-learner correlation threshold");
  t->add_option("--learner", tr.learner)->check(CLI::IsMember({"exhaustive", "ls"}));
  t->add_option("--recal", tr.recal)->check(CLI::IsMember({"bucket", "isotonic"}));
  t->add_option("--mode", tr.mode, "fixed: reuse the data; bootstrap: resample per call")
      ->check(CLI::IsMember({"fixed", "bootstrap"}));
  t->add_option("--batch", tr.batch, "batch size in bootstrap mode");
  t->add_option("--samples", tr.samples, "rows per estimate and recalibration in bootstrap mode (default: theoretical)");
  t->add_option("--max-outer", tr.max_outer);
  t->add_option("--seed", tr.seed);
  t->add_option("--out", tr.out);
  t->add_option("--trace", tr.trace);

  BaselineOpts bl;
  auto* b = app.add_subcommand("baseline", "fit a per-loss linear baseline");
  b->add_option("--loss", bl.loss)->check(CLI::IsMember({"sq", "l2", "l1", "exp", "expabs", "log", "glm:sigmoid"}));
  b->add_option("--data", bl.data)->required();
  b->add_option("--test", bl.test);
  b->add_option("--out", bl.out);

  BenchOpts be;
  auto* bn = app.add_subcommand("bench", "run the mixture benchmark");
  bn->add_option("--s", be.cfg.mixture.s);
  bn->add_option("--d", be.cfg.mixture.d);
  bn->add_option("--n-train", be.cfg.mixture.n_train);
  bn->add_option("--n-cal", be.cfg.mixture.n_cal);
  bn->add_option("--n-test", be.cfg.mixture.n_test);
  bn->add_option("--alpha", be.cfg.alpha);
  bn->add_option("--delta", be.cfg.delta, "bucket half-width (default alpha/4)");
  bn->add_option("--seeds", be.seeds, "number of seeds (0..n-1)");
  bn->add_option("--recal", be.recal)->check(CLI::IsMember({"bucket", "isotonic"}));
  bn->add_option("--tolerance", be.tolerance, "allowed calMA excess over the linear optimum");
  bn->add_option("--out", be.out, "table.json, table.csv and/or table.md");

  CounterOpts co;
  auto* c = app.add_subcommand("counterexamples", "evaluate the parity and SIM counterexamples");
  c->add_option("--which", co.which)->check(CLI::IsMember({"parity", "sim", "all"}));
  c->add_option("--resolution", co.resolution, "SIM grid resolution");
  c->add_option("--out", co.out);

  AuditOpts au;
  auto* a = app.add_subcommand("audit", "audit a model for loss OI, calibration and multiaccuracy");
  a->add_option("--model", au.model)->required();
  a->add_option("--data", au.data, "CSV sample or distribution JSON")->required();
  a->add_option("--losses", au.losses, "comma-separated registry names");
  a->add_option("--class", au.class_spec);
  a->add_option("--bucket-delta", au.bucket_delta);
  a->add_option("--max-gap", au.max_gap, "exit 2 when the largest loss OI gap exceeds this");
  a->add_option("--out", au.out);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*g) return run_gen(gen);
    if (*t) return run_train(tr);
    if (*b) return run_baseline(bl);
    if (*bn) return run_bench(be);
    if (*c) return run_counterexamples(co);
    if (*a) return run_audit(au);
  } catch (const ConvergenceError& e) {
    std::cerr << "convergence failure: " << e.what() << "\n";
    return kExitConvergence;
  } catch (const BudgetExceededError& e) {
    std::cerr << "convergence failure: " << e.what() << "\n";
    return kExitConvergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
