#include <iomanip>
#include <iostream>

#include "calma/calma.hpp"
#include "calma/oi_audit.hpp"

using namespace calma;

int main() {
  // four points on the square with a nonlinear Bayes predictor
  FiniteDistribution dist{{{-1.0, -1.0}, {-1.0, 1.0}, {1.0, -1.0}, {1.0, 1.0}},
                          {0.1, 0.2, 0.3, 0.4},
                          {0.1, 0.45, 0.6, 0.9}};
  auto engine = ExpectationEngine::exact(dist);
  HypothesisClass cls = coordinate_class(dist.points);

  CalmaConfig cfg;
  cfg.alpha = 0.1;
  const double sigma = (cfg.alpha - cfg.delta_value()) / 2.0;
  ExhaustiveWeakLearner wl(cls, sigma, sigma);
  CalmaResult res = calma::calma(Predictor::constant(0.5), wl, engine, engine, cfg);

  std::cout << std::setprecision(4) << "calma: " << res.trace.iterations.size() << " outer iterations, "
            << res.trace.total_wl_calls() << " weak-learner calls\n";
  for (std::size_t i = 0; i < dist.size(); ++i)
    std::cout << "  p(" << dist.points[i][0] << "," << dist.points[i][1] << ") = " << res.predictor(dist.points[i])
              << "  (bayes " << dist.bayes[i] << ")\n";

  std::vector<Loss> losses = {make_loss("l1"), make_loss("l2"), make_loss("glm:sigmoid")};
  AuditReport rep = audit(res.predictor, losses, cls, engine);
  std::cout << "ece " << rep.ece << " (bound " << 0.75 * cfg.alpha << "), mae " << rep.mae << " (bound " << cfg.alpha
            << ")\n";
  std::cout << "max |hypothesis gap| " << rep.gaps.max_hypothesis_gap << ", max |decision gap| "
            << rep.gaps.max_decision_gap << ", max |loss OI gap| " << rep.gaps.max_loss_gap << "\n";
  return 0;
}
