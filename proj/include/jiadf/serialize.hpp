#pragma once

// JSON forms of the model config and the evaluation report.

#include <cmath>
#include <optional>
#include <string>

#include "json.hpp"

#include "jiadf/config.hpp"
#include "jiadf/metrics.hpp"

namespace jiadf {

using json = nlohmann::json;

inline json to_json(const ModelConfig& c) {
  json j;
  j["clinical_dim"] = c.clinical_dim;
  j["dermoscopic_dim"] = c.dermoscopic_dim;
  j["metadata_raw_dim"] = c.metadata_raw_dim;
  j["encoder_hidden"] = c.encoder_hidden;
  j["image_dim"] = c.image_dim;
  j["metadata_dim"] = c.metadata_dim;
  j["joint_dim"] = c.joint_dim;
  j["heads"] = c.heads;
  j["head_dim"] = c.head_dim;
  j["gate_hidden"] = c.gate_hidden;
  j["classes"] = c.classes;
  j["lambdas"] = {{"joint", c.lambdas.joint}, {"image", c.lambdas.image}, {"metadata", c.lambdas.metadata}};
  j["fusion_variant"] = to_string(c.fusion);
  j["mmfa_variant"] = to_string(c.mmfa);
  j["modalities"] = to_string(c.modalities);
  j["class_weights"] = c.class_weights ? json(*c.class_weights) : json(nullptr);
  j["seed"] = c.seed;
  return j;
}

// Missing keys keep their defaults, so a config document may be partial.
inline ModelConfig config_from_json(const json& j, ModelConfig c = {}) {
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  try {
    take("clinical_dim", c.clinical_dim);
    take("dermoscopic_dim", c.dermoscopic_dim);
    take("metadata_raw_dim", c.metadata_raw_dim);
    take("encoder_hidden", c.encoder_hidden);
    take("image_dim", c.image_dim);
    take("metadata_dim", c.metadata_dim);
    take("joint_dim", c.joint_dim);
    take("heads", c.heads);
    take("head_dim", c.head_dim);
    take("gate_hidden", c.gate_hidden);
    take("classes", c.classes);
    take("seed", c.seed);
    if (j.contains("lambdas")) {
      const json& l = j.at("lambdas");
      if (l.contains("joint")) c.lambdas.joint = l.at("joint").get<double>();
      if (l.contains("image")) c.lambdas.image = l.at("image").get<double>();
      if (l.contains("metadata")) c.lambdas.metadata = l.at("metadata").get<double>();
    }
    if (j.contains("fusion_variant")) c.fusion = parse_fusion_variant(j.at("fusion_variant").get<std::string>());
    if (j.contains("mmfa_variant")) c.mmfa = parse_mmfa_variant(j.at("mmfa_variant").get<std::string>());
    if (j.contains("modalities")) c.modalities = parse_modalities(j.at("modalities").get<std::string>());
    if (j.contains("class_weights")) {
      if (j.at("class_weights").is_null()) c.class_weights.reset();
      else c.class_weights = j.at("class_weights").get<std::vector<double>>();
    }
  } catch (const json::exception& e) {
    throw Error(std::string("invalid config document: ") + e.what());
  }
  c.validate();
  return c;
}

namespace report {

// Row labels of the per-class panel.
inline constexpr const char* kAuc = "AUC";
inline constexpr const char* kAucSens80 = "AUC, Sens > 80%";
inline constexpr const char* kAveragePrecision = "Average Precision";
inline constexpr const char* kAccuracy = "Accuracy";
inline constexpr const char* kSensitivity = "Sensitivity";
inline constexpr const char* kSpecificity = "Specificity";
inline constexpr const char* kDice = "Dice Coefficient";
inline constexpr const char* kPpv = "PPV";
inline constexpr const char* kNpv = "NPV";

inline constexpr const char* kPanelRows[] = {kAuc, kAucSens80, kAveragePrecision, kAccuracy, kSensitivity,
                                              kSpecificity, kDice, kPpv, kNpv};

inline std::string class_name(std::size_t c) { return "class_" + std::to_string(c); }

inline json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace report

// Panel keyed like the appendix table: row label -> {"Mean", class_0, ...}.
inline json to_json(const metrics::MetricsReport& r) {
  using namespace report;
  json panel = json::object();
  auto row = [&](const char* label, double mean, auto get) {
    json cols = json::object();
    cols["Mean"] = mean;
    for (std::size_t c = 0; c < r.classes.size(); ++c) cols[class_name(c)] = get(r.classes[c]);
    panel[label] = cols;
  };
  row(kAuc, r.macro.auc, [](const auto& c) { return opt(c.auc); });
  row(kAucSens80, r.macro.auc_sens80, [](const auto& c) { return opt(c.auc_sens80); });
  row(kAveragePrecision, r.macro.average_precision, [](const auto& c) { return opt(c.average_precision); });
  row(kAccuracy, r.macro.accuracy, [](const auto& c) { return json(c.accuracy); });
  row(kSensitivity, r.macro.sensitivity, [](const auto& c) { return json(c.sensitivity); });
  row(kSpecificity, r.macro.specificity, [](const auto& c) { return json(c.specificity); });
  row(kDice, r.macro.dice, [](const auto& c) { return json(c.dice); });
  row(kPpv, r.macro.ppv, [](const auto& c) { return json(c.ppv); });
  row(kNpv, r.macro.npv, [](const auto& c) { return json(c.npv); });

  json counts = json::object();
  json degenerate = json::object();
  for (std::size_t c = 0; c < r.classes.size(); ++c) {
    const auto& k = r.classes[c].counts;
    counts[class_name(c)] = {{"tp", k.tp}, {"fp", k.fp}, {"fn", k.fn}, {"tn", k.tn}};
    if (!r.classes[c].degenerate.empty()) degenerate[class_name(c)] = r.classes[c].degenerate;
  }
  json bins = json::array();
  for (const auto& b : r.calibration.bins) {
    bins.push_back({{"lower", b.lower},
                    {"upper", b.upper},
                    {"count", b.count},
                    {"mean_confidence", b.mean_confidence},
                    {"accuracy", b.accuracy}});
  }
  return {{"panel", panel},
          {"counts", counts},
          {"degenerate_cells", degenerate},
          {"top1_accuracy", r.top1_accuracy},
          {"macro_f1", r.macro_f1},
          {"macro_ppv", r.macro.ppv},
          {"macro_average_precision", r.macro.average_precision},
          {"ece", r.calibration.ece},
          {"calibration_bins", bins},
          {"warnings", r.warnings}};
}

}  // namespace jiadf
