#pragma once

// Full forward pass and training objective: encoders, fusion block, branch
// heads, decision fusion and the auxiliary-supervised loss, with the fusion
// variants and modality subsets used by the ablation suites.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jiadf/autodiff.hpp"
#include "jiadf/config.hpp"
#include "jiadf/heads.hpp"
#include "jiadf/init.hpp"
#include "jiadf/mmfa.hpp"
#include "jiadf/record.hpp"

namespace jiadf {

namespace names {
inline const std::string kImgW1C = "enc.img.W1_c";
inline const std::string kImgW1D = "enc.img.W1_d";
inline const std::string kImgB1 = "enc.img.b1";
inline const std::string kImgW2 = "enc.img.W2";
inline const std::string kImgB2 = "enc.img.b2";
inline const std::string kMetaW1 = "enc.meta.W1";
inline const std::string kMetaB1 = "enc.meta.b1";
inline const std::string kMetaW2 = "enc.meta.W2";
inline const std::string kMetaB2 = "enc.meta.b2";
}  // namespace names

// Every parameter of every variant is registered, whatever the config's
// variant or modality subset; parts not used by a configuration simply never
// enter the graph and receive exact-zero gradients.
inline ParamStore init_params(const ModelConfig& c, Rng& rng) {
  c.validate();
  ParamStore store;
  // The image encoder's first layer is split per image block so that a
  // missing block drops out of the product entirely.
  store.add(names::kImgW1C, glorot_uniform(c.encoder_hidden, c.clinical_dim, rng));
  store.add(names::kImgW1D, glorot_uniform(c.encoder_hidden, c.dermoscopic_dim, rng));
  store.add(names::kImgB1, zeros(c.encoder_hidden));
  store.add(names::kImgW2, glorot_uniform(c.image_dim, c.encoder_hidden, rng));
  store.add(names::kImgB2, zeros(c.image_dim));
  store.add(names::kMetaW1, glorot_uniform(c.encoder_hidden, c.metadata_raw_dim, rng));
  store.add(names::kMetaB1, zeros(c.encoder_hidden));
  store.add(names::kMetaW2, glorot_uniform(c.metadata_dim, c.encoder_hidden, rng));
  store.add(names::kMetaB2, zeros(c.metadata_dim));
  mmfa::register_params(store, mmfa::Dims::from(c), rng);
  heads::register_params(store, c, rng);
  return store;
}

inline ParamStore init_params(const ModelConfig& c) {
  Rng rng(c.seed);
  return init_params(c, rng);
}

// Graph handles for one sample. Branches a configuration does not build are
// left empty.
struct BranchNodes {
  std::optional<Var> z_image, z_joint, z_metadata;
  std::optional<Var> p_image, p_joint, p_metadata;
  std::optional<Var> alpha;
  Var p_final;
  // Set when p_final is exactly softmax of one head, so its loss can use the
  // fused softmax/cross-entropy path.
  std::optional<Var> final_logits;
  bool auxiliary = false;
};

// Plain values of the same quantities.
struct BranchOutputs {
  std::optional<Tensor> z_image, z_joint, z_metadata;
  std::optional<Tensor> p_image, p_joint, p_metadata;
  std::optional<Tensor> alpha;
  Tensor p_final;
  bool auxiliary = false;
};

// Which auxiliary terms a variant trains with (on top of the final term).
inline bool uses_auxiliary_losses(FusionVariant v) {
  return v == FusionVariant::JFConcat || v == FusionVariant::JIMMFA || v == FusionVariant::JIADF;
}

namespace detail {

inline Var input_block(Graph& g, const std::vector<double>& v, std::size_t width, const char* what) {
  if (v.size() != width) {
    throw DimensionError(std::string(what) + " block has width " + std::to_string(v.size()) + ", config expects " +
                         std::to_string(width));
  }
  return g.constant(Tensor::vector(v));
}

inline Var image_features(Graph& g, const Record& r, const ModelConfig& c) {
  std::vector<Var> pre;
  if (c.modalities.clinical) {
    pre.push_back(matmul(g.param(names::kImgW1C), input_block(g, r.clinical, c.clinical_dim, "clinical")));
  }
  if (c.modalities.dermoscopic) {
    pre.push_back(matmul(g.param(names::kImgW1D), input_block(g, r.dermoscopic, c.dermoscopic_dim, "dermoscopic")));
  }
  pre.push_back(g.param(names::kImgB1));
  Var hidden = relu(add_n(pre));
  return linear(g.param(names::kImgW2), hidden, g.param(names::kImgB2));
}

inline Var metadata_features(Graph& g, const Record& r, const ModelConfig& c) {
  Var x = input_block(g, r.metadata, c.metadata_raw_dim, "metadata");
  Var hidden = relu(linear(g.param(names::kMetaW1), x, g.param(names::kMetaB1)));
  return linear(g.param(names::kMetaW2), hidden, g.param(names::kMetaB2));
}

inline void single_head(BranchNodes& out, Var z, std::optional<Var>& z_slot, std::optional<Var>& p_slot) {
  z_slot = z;
  p_slot = softmax(z);
  out.p_final = *p_slot;
  out.final_logits = z;
}

}  // namespace detail

inline BranchNodes forward_nodes(Graph& g, const Record& r, const ModelConfig& c) {
  if (r.label >= c.classes) {
    throw DimensionError("label " + std::to_string(r.label) + " out of range for " + std::to_string(c.classes) +
                         " classes");
  }
  BranchNodes out;
  const bool image = c.modalities.image();
  const bool meta = c.modalities.metadata;
  std::optional<Var> f_image, f_meta;
  if (image) f_image = detail::image_features(g, r, c);
  if (meta) f_meta = detail::metadata_features(g, r, c);

  // Degenerate subsets: one stream, one head, no fusion.
  if (!meta) {
    detail::single_head(out, heads::classify(g, heads::kBranchTag[heads::kImage], *f_image), out.z_image,
                        out.p_image);
    return out;
  }
  if (!image) {
    detail::single_head(out, heads::classify(g, heads::kBranchTag[heads::kMetadata], *f_meta), out.z_metadata,
                        out.p_metadata);
    return out;
  }

  switch (c.fusion) {
    case FusionVariant::LateConcat: {
      Var z = linear(g.param(heads::weight("late")), concat({*f_image, *f_meta}), g.param(heads::bias("late")));
      detail::single_head(out, z, out.z_joint, out.p_joint);
      return out;
    }
    case FusionVariant::JFMMFA: {
      Var joint = mmfa::forward(g, *f_image, *f_meta, c.heads, c.mmfa);
      detail::single_head(out, heads::classify(g, heads::kBranchTag[heads::kJoint], joint), out.z_joint,
                          out.p_joint);
      return out;
    }
    default: break;
  }

  // Three-head variants.
  const MMFAVariant block = c.fusion == FusionVariant::JFConcat ? MMFAVariant::SkipOnly : c.mmfa;
  Var joint = mmfa::forward(g, *f_image, *f_meta, c.heads, block);
  heads::Logits z = heads::branch_logits(g, *f_image, *f_meta, joint);
  out.z_image = z.image;
  out.z_joint = z.joint;
  out.z_metadata = z.metadata;
  out.p_image = softmax(z.image);
  out.p_joint = softmax(z.joint);
  out.p_metadata = softmax(z.metadata);
  out.auxiliary = uses_auxiliary_losses(c.fusion);

  switch (c.fusion) {
    case FusionVariant::JFConcat:
      out.p_final = *out.p_joint;
      out.final_logits = z.joint;
      break;
    case FusionVariant::JIMMFA: {
      // Fixed average, routed through the same convex combination as the
      // gate so that a zeroed gate reproduces it bit for bit.
      const double third = 1.0 / 3.0;
      out.alpha = g.constant(Tensor::vector({third, third, third}));
      out.p_final = heads::fuse_posteriors(*out.alpha, *out.p_image, *out.p_joint, *out.p_metadata);
      break;
    }
    default:
      out.alpha = heads::adf_gate(g, z);
      out.p_final = heads::fuse_posteriors(*out.alpha, *out.p_image, *out.p_joint, *out.p_metadata);
      break;
  }
  return out;
}

inline BranchOutputs to_values(const BranchNodes& n) {
  auto val = [](const std::optional<Var>& v) -> std::optional<Tensor> {
    if (!v) return std::nullopt;
    return v->value();
  };
  BranchOutputs o;
  o.z_image = val(n.z_image);
  o.z_joint = val(n.z_joint);
  o.z_metadata = val(n.z_metadata);
  o.p_image = val(n.p_image);
  o.p_joint = val(n.p_joint);
  o.p_metadata = val(n.p_metadata);
  o.alpha = val(n.alpha);
  o.p_final = n.p_final.value();
  o.auxiliary = n.auxiliary;
  return o;
}

inline BranchOutputs forward(const ParamStore& params, const Record& r, const ModelConfig& c) {
  Graph g(params);
  return to_values(forward_nodes(g, r, c));
}

// CE(P_final) + lambda_IM L_IM + lambda_I L_I + lambda_M L_M, with the
// auxiliary terms present only for variants that train them, and each term
// optionally scaled by the true class's weight.
inline Var total_loss_node(Graph&, const BranchNodes& n, std::size_t y, const ModelConfig& c) {
  const double w = c.class_weights ? (*c.class_weights).at(y) : 1.0;
  auto term = [&](const std::optional<Var>& logits, const std::optional<Var>& probs) {
    return logits ? softmax_cross_entropy(*logits, y) : cross_entropy(*probs, y);
  };
  std::vector<Var> terms;
  terms.push_back(n.final_logits ? softmax_cross_entropy(*n.final_logits, y) : cross_entropy(n.p_final, y));
  if (n.auxiliary) {
    terms.push_back(scale(term(n.z_joint, n.p_joint), c.lambdas.joint));
    terms.push_back(scale(term(n.z_image, n.p_image), c.lambdas.image));
    terms.push_back(scale(term(n.z_metadata, n.p_metadata), c.lambdas.metadata));
  }
  Var total = add_n(terms);
  return w == 1.0 ? total : scale(total, w);
}

// Same objective evaluated from posteriors alone (no logits needed).
inline double total_loss(const BranchOutputs& o, std::size_t y, const ModelConfig& c) {
  Graph g;
  BranchNodes n;
  auto leaf = [&](const std::optional<Tensor>& t) -> std::optional<Var> {
    if (!t) return std::nullopt;
    return g.constant(*t);
  };
  n.p_image = leaf(o.p_image);
  n.p_joint = leaf(o.p_joint);
  n.p_metadata = leaf(o.p_metadata);
  n.p_final = g.constant(o.p_final);
  n.auxiliary = o.auxiliary;
  if (n.auxiliary && (!n.p_image || !n.p_joint || !n.p_metadata)) {
    throw Error("total_loss: auxiliary terms need all three branch posteriors");
  }
  return total_loss_node(g, n, y, c).value().item();
}

// Mean of per-sample losses, accumulated in sample order.
inline Var batch_loss_node(Graph& g, std::span<const Record> batch, const ModelConfig& c) {
  if (batch.empty()) throw Error("batch_loss of an empty batch");
  std::vector<Var> losses;
  losses.reserve(batch.size());
  for (const Record& r : batch) losses.push_back(total_loss_node(g, forward_nodes(g, r, c), r.label, c));
  return scale(add_n(losses), 1.0 / static_cast<double>(batch.size()));
}

inline double batch_loss(const ParamStore& params, std::span<const Record> batch, const ModelConfig& c) {
  Graph g(params);
  return batch_loss_node(g, batch, c).value().item();
}

// Loss value; params' gradient buffers receive d(loss)/d(param).
inline double loss_and_gradient(ParamStore& params, std::span<const Record> batch, const ModelConfig& c) {
  Graph g(params);
  Var loss = batch_loss_node(g, batch, c);
  g.backward(loss);
  return loss.value().item();
}

}  // namespace jiadf
