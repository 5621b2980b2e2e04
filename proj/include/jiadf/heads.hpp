#pragma once

// Branch classifiers, the adaptive decision-fusion gate and the convex
// posterior combination.

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "jiadf/autodiff.hpp"
#include "jiadf/config.hpp"
#include "jiadf/init.hpp"

namespace jiadf::heads {

// Branch order everywhere (s, alpha): image, joint, metadata.
enum Branch : std::size_t { kImage = 0, kJoint = 1, kMetadata = 2 };

inline constexpr const char* kBranchTag[] = {"I", "IM", "M"};

inline std::string weight(const char* tag) { return std::string("head.") + tag + ".W"; }
inline std::string bias(const char* tag) { return std::string("head.") + tag + ".b"; }

inline const std::string kGateW1 = "gate.W1";
inline const std::string kGateB1 = "gate.b1";
inline const std::string kGateW2 = "gate.W2";
inline const std::string kGateB2 = "gate.b2";

// Registers C_I, C_IM, C_M, the single late-concat head and the gate. The gate
// output layer starts at zero so fusion begins as the plain average.
inline void register_params(ParamStore& store, const ModelConfig& c, Rng& rng) {
  const std::size_t widths[] = {c.image_dim, c.joint_dim, c.metadata_dim};
  for (std::size_t b = 0; b < 3; ++b) {
    store.add(weight(kBranchTag[b]), glorot_uniform(c.classes, widths[b], rng));
    store.add(bias(kBranchTag[b]), zeros(c.classes));
  }
  store.add(weight("late"), glorot_uniform(c.classes, c.image_dim + c.metadata_dim, rng));
  store.add(bias("late"), zeros(c.classes));

  store.add(kGateW1, glorot_uniform(c.gate_hidden, 3 * c.classes, rng));
  store.add(kGateB1, zeros(c.gate_hidden));
  store.add(kGateW2, zeros(3, c.gate_hidden));
  store.add(kGateB2, zeros(3));
}

inline Var classify(Graph& g, const char* tag, Var features) {
  return linear(g.param(weight(tag)), features, g.param(bias(tag)));
}

struct Logits {
  Var image;
  Var joint;
  Var metadata;
};

inline Logits branch_logits(Graph& g, Var image, Var metadata, Var joint) {
  return {classify(g, kBranchTag[kImage], image), classify(g, kBranchTag[kJoint], joint),
          classify(g, kBranchTag[kMetadata], metadata)};
}

// alpha = softmax(W2 relu(W1 [z_I || z_IM || z_M] + b1) + b2).
inline Var adf_gate(Graph& g, const Logits& z) {
  Var s = concat({z.image, z.joint, z.metadata});
  Var hidden = relu(linear(g.param(kGateW1), s, g.param(kGateB1)));
  return softmax(linear(g.param(kGateW2), hidden, g.param(kGateB2)));
}

namespace detail {

inline void require_simplex(const Tensor& p, const char* what, double tol) {
  double total = 0.0;
  for (double x : p.data()) {
    if (x < -tol) throw NumericError(std::string(what) + " has a negative entry");
    total += x;
  }
  if (std::abs(total - 1.0) > tol) {
    throw NumericError(std::string(what) + " is off the simplex (sum " + std::to_string(total) + ")");
  }
}

}  // namespace detail

inline constexpr double kFuseTol = 1e-6;

// alpha_I P_I + alpha_IM P_IM + alpha_M P_M.
inline Var fuse_posteriors(Var alpha, Var image, Var joint, Var metadata) {
  if (alpha.size() != 3) throw DimensionError("fusion weights must have 3 entries");
  detail::require_simplex(alpha.value(), "alpha", kFuseTol);
  detail::require_simplex(image.value(), "P_I", kFuseTol);
  detail::require_simplex(joint.value(), "P_IM", kFuseTol);
  detail::require_simplex(metadata.value(), "P_M", kFuseTol);
  return weighted_sum(alpha, {image, joint, metadata});
}

inline Tensor fuse_posteriors(const Tensor& alpha, const Tensor& image, const Tensor& joint, const Tensor& metadata) {
  Graph g;
  return fuse_posteriors(g.constant(alpha), g.constant(image), g.constant(joint), g.constant(metadata)).value();
}

// Index of the largest probability; ties go to the lowest index.
inline std::size_t predict(const Tensor& posterior) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < posterior.size(); ++i)
    if (posterior[i] > posterior[best]) best = i;
  return best;
}

}  // namespace jiadf::heads
