#pragma once

#include <string>

#include "json.hpp"

#include "calma/core/hypothesis.hpp"
#include "calma/core/predictor.hpp"
#include "calma/losses.hpp"

namespace calma {

inline constexpr const char* kModelFormat = "calma-model/1";

inline Predictor predictor_from_json(const json& j) {
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "constant") return Predictor::constant(j.at("value").get<double>());
    if (kind == "table")
      return Predictor::table(j.at("points").get<std::vector<Point>>(), j.at("values").get<std::vector<double>>());
    if (kind == "clipped") return Predictor::clipped(Hypothesis::from_json(j.at("score")));
    if (kind == "boosted") {
      std::vector<std::pair<double, Hypothesis>> ups;
      for (const auto& u : j.at("updates")) ups.emplace_back(u.at("step").get<double>(), Hypothesis::from_json(u.at("h")));
      return Predictor::boosted(predictor_from_json(j.at("base")), std::move(ups));
    }
    if (kind == "bucketed")
      return Predictor::bucketed(predictor_from_json(j.at("base")), j.at("delta").get<double>(),
                                 j.at("values").get<std::vector<double>>());
    if (kind == "isotonic")
      return Predictor::isotonic(predictor_from_json(j.at("base")), j.at("knots").get<std::vector<double>>(),
                                 j.at("values").get<std::vector<double>>());
    if (kind == "glm") {
      GlmLoss g = glm_by_name(j.at("transfer").get<std::string>());
      return Predictor::glm(g.name(), g.transfer_fn(), Hypothesis::from_json(j.at("score")));
    }
    throw ValidationError("unknown predictor kind: " + kind);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("predictor json: ") + e.what());
  }
}

inline json model_to_json(const Predictor& p, json meta = json::object()) {
  return {{"format", kModelFormat}, {"predictor", p.to_json()}, {"meta", std::move(meta)}};
}

inline Predictor model_from_json(const json& j) {
  if (!j.contains("format") || j.at("format") != kModelFormat)
    throw ValidationError(std::string("model json: expected format ") + kModelFormat);
  return predictor_from_json(j.at("predictor"));
}

}  // namespace calma
