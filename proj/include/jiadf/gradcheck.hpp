#pragma once

// Backward pass vs. central finite differences on a small random problem.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "jiadf/autodiff.hpp"
#include "jiadf/model.hpp"

namespace jiadf {

// |analytic - numeric| / max(|analytic|, |numeric|, kRelErrFloor). The floor
// turns the check into an absolute one for near-zero gradients, where the
// difference quotient is dominated by rounding.
inline constexpr double kRelErrFloor = 1e-3;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kRelErrFloor});
}

// "enc.img.W1_c" -> "enc.img", "mmfa.h0.Wq_I" -> "mmfa", "head.IM.W" -> "head.IM".
inline std::string param_group(const std::string& name) {
  const auto first = name.find('.');
  if (first == std::string::npos) return name;
  const std::string top = name.substr(0, first);
  if (top == "mmfa" || top == "gate") return top;
  const auto second = name.find('.', first + 1);
  return name.substr(0, second);
}

struct ParamCheck {
  std::string name;
  double worst_rel_err = 0;
  double max_abs_grad = 0;
};

struct GradCheckResult {
  std::vector<ParamCheck> params;
  std::map<std::string, double> worst_by_group;
  double worst = 0;
  std::string worst_param;
  double loss = 0;
};

// Random batch matching the config widths.
inline std::vector<Record> random_batch(const ModelConfig& c, std::size_t n, Rng& rng) {
  std::normal_distribution<double> feat(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> label(0, c.classes - 1);
  std::vector<Record> batch(n);
  for (std::size_t i = 0; i < n; ++i) {
    Record& r = batch[i];
    r.id = i;
    r.label = label(rng);
    auto fill = [&](std::vector<double>& v, std::size_t w) {
      v.resize(w);
      for (double& x : v) x = feat(rng);
    };
    fill(r.clinical, c.clinical_dim);
    fill(r.dermoscopic, c.dermoscopic_dim);
    fill(r.metadata, c.metadata_raw_dim);
  }
  return batch;
}

// Every parameter (including biases and the gate output layer, which start at
// zero) is redrawn uniformly from [-0.5, 0.5] so the linearization point is
// generic.
inline void randomize(ParamStore& params, Rng& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& e : params.entries())
    for (double& x : e.value.raw()) x = u(rng);
}

inline GradCheckResult gradient_check(ModelConfig cfg, std::uint64_t seed, double h = 1e-6, std::size_t batch = 4) {
  cfg.seed = seed;
  Rng rng(seed);
  ParamStore params = init_params(cfg, rng);
  randomize(params, rng);
  const std::vector<Record> records = random_batch(cfg, batch, rng);

  GradCheckResult res;
  res.loss = loss_and_gradient(params, records, cfg);
  std::vector<Tensor> analytic;
  for (const auto& e : params.entries()) analytic.push_back(e.grad);
  const auto numeric =
      finite_diff_gradient([&](ParamStore& p) { return batch_loss(p, records, cfg); }, params, h);

  for (std::size_t p = 0; p < params.size(); ++p) {
    ParamCheck pc{params.entry(p).name};
    for (std::size_t i = 0; i < analytic[p].size(); ++i) {
      pc.worst_rel_err = std::max(pc.worst_rel_err, relative_error(analytic[p][i], numeric[p][i]));
      pc.max_abs_grad = std::max(pc.max_abs_grad, std::abs(analytic[p][i]));
    }
    auto& g = res.worst_by_group[param_group(pc.name)];
    g = std::max(g, pc.worst_rel_err);
    if (pc.worst_rel_err >= res.worst) {
      res.worst = pc.worst_rel_err;
      res.worst_param = pc.name;
    }
    res.params.push_back(pc);
  }
  return res;
}

}  // namespace jiadf
