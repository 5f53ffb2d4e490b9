#pragma once

#include <memory>
#include <string>
#include <vector>

#include "hstgnn/baselines.hpp"
#include "hstgnn/model.hpp"

namespace hstgnn {

enum class ModelKind { Hstgnn, Simplified, Lstm, Cnn1d, Gcn, Dgc, GruGcn };

inline std::string model_name(ModelKind k) {
  switch (k) {
    case ModelKind::Hstgnn: return "hstgnn";
    case ModelKind::Simplified: return "simplified";
    case ModelKind::Lstm: return "lstm";
    case ModelKind::Cnn1d: return "cnn1d";
    case ModelKind::Gcn: return "gcn";
    case ModelKind::Dgc: return "dgc";
    case ModelKind::GruGcn: return "gru-gcn";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  for (ModelKind k : {ModelKind::Hstgnn, ModelKind::Simplified, ModelKind::Lstm, ModelKind::Cnn1d, ModelKind::Gcn,
                      ModelKind::Dgc, ModelKind::GruGcn})
    if (model_name(k) == s) return k;
  throw std::invalid_argument("unknown model '" + s + "'");
}

/// HSTGNN followed by the five baselines.
inline std::vector<ModelKind> comparison_models() {
  return {ModelKind::Hstgnn, ModelKind::Lstm, ModelKind::Cnn1d, ModelKind::Gcn, ModelKind::Dgc, ModelKind::GruGcn};
}

struct ModelSpec {
  ModelKind kind = ModelKind::Hstgnn;
  HstgnnConfig hstgnn;
  BaselineConfig baseline;

  int window() const {
    return kind == ModelKind::Hstgnn || kind == ModelKind::Simplified ? hstgnn.window : baseline.window;
  }
};

inline BaselineKind to_baseline(ModelKind k) {
  switch (k) {
    case ModelKind::Lstm: return BaselineKind::Lstm;
    case ModelKind::Cnn1d: return BaselineKind::Cnn1d;
    case ModelKind::Gcn: return BaselineKind::Gcn;
    case ModelKind::Dgc: return BaselineKind::Dgc;
    case ModelKind::GruGcn: return BaselineKind::GruGcn;
    default: throw std::invalid_argument(model_name(k) + " is not a baseline");
  }
}

inline std::unique_ptr<Model> make_model(const ModelSpec& spec, const SensorNetworkSchema& schema,
                                         std::uint64_t seed) {
  switch (spec.kind) {
    case ModelKind::Hstgnn: return std::make_unique<Hstgnn>(schema, spec.hstgnn, seed);
    case ModelKind::Simplified: return std::make_unique<SimplifiedHstgnn>(schema, spec.hstgnn, seed);
    default: return std::make_unique<Baseline>(to_baseline(spec.kind), schema, spec.baseline, seed);
  }
}

}  // namespace hstgnn
