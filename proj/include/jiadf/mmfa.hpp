#pragma once

// Multi-modal fusion attention: the image feature and the metadata feature
// form a two-token sequence; each head runs a 2x2 attention over it, the
// head outputs are re-projected and merged with a residual skip of the raw
// concatenated features.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "jiadf/autodiff.hpp"
#include "jiadf/config.hpp"
#include "jiadf/init.hpp"

namespace jiadf::mmfa {

struct Dims {
  std::size_t heads;
  std::size_t head_dim;
  std::size_t image_dim;
  std::size_t metadata_dim;
  std::size_t joint_dim;

  static Dims from(const ModelConfig& c) {
    return {c.heads, c.head_dim, c.image_dim, c.metadata_dim, c.joint_dim};
  }
};

// Parameter names, e.g. "mmfa.h0.Wq_I".
inline std::string head_param(std::size_t h, const char* which) {
  return "mmfa.h" + std::to_string(h) + "." + which;
}
inline const std::string kOut = "mmfa.Wo";
inline const std::string kSkip = "mmfa.Wskip";
inline const std::string kGateW = "mmfa.g_W";
inline const std::string kGateB = "mmfa.g_b";

inline constexpr const char* kProjections[] = {"Wq_I", "Wk_I", "Wv_I", "Wq_M", "Wk_M", "Wv_M"};

inline void register_params(ParamStore& store, const Dims& d, Rng& rng) {
  for (std::size_t h = 0; h < d.heads; ++h) {
    for (const char* which : kProjections) {
      const bool image_side = which[3] == 'I';
      const std::size_t in = image_side ? d.image_dim : d.metadata_dim;
      store.add(head_param(h, which), glorot_uniform(d.head_dim, in, rng));
    }
  }
  store.add(kOut, glorot_uniform(d.joint_dim, 2 * d.heads * d.head_dim, rng));
  store.add(kSkip, glorot_uniform(d.joint_dim, d.image_dim + d.metadata_dim, rng));
  store.add(kGateW, glorot_uniform(d.joint_dim, d.joint_dim, rng));
  store.add(kGateB, zeros(d.joint_dim));
}

struct HeadResult {
  Var attention;  // 2x2, rows sum to one
  Var mixed;      // U_h, 2 x d_h
};

// One head: Q, K, V stack the image row above the metadata row.
inline HeadResult two_token_attention(Graph& g, Var image, Var metadata, std::size_t h) {
  auto proj = [&](const char* which, Var x) { return matmul(g.param(head_param(h, which)), x); };
  Var q = stack_rows({proj("Wq_I", image), proj("Wq_M", metadata)});
  Var k = stack_rows({proj("Wk_I", image), proj("Wk_M", metadata)});
  Var v = stack_rows({proj("Wv_I", image), proj("Wv_M", metadata)});
  const double head_dim = static_cast<double>(q.shape()[1]);
  Var scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(head_dim));
  Var attention = softmax(scores);
  return {attention, matmul(attention, v)};
}

// Attention path before the nonlinearity: Wo · concat(vec(U_1), ..., vec(U_H)).
inline Var attention_output(Graph& g, Var image, Var metadata, std::size_t heads) {
  std::vector<Var> flat;
  flat.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var u = two_token_attention(g, image, metadata, h).mixed;
    flat.push_back(reshape(u, {u.size()}));
  }
  return matmul(g.param(kOut), concat(flat));
}

inline Var forward(Graph& g, Var image, Var metadata, std::size_t heads, MMFAVariant variant) {
  const Tensor& skip_w = g.param(kSkip).value();
  if (image.value().rank() != 1 || metadata.value().rank() != 1 ||
      image.size() + metadata.size() != skip_w.dim(1)) {
    throw DimensionError("mmfa: feature widths " + shape_str(image.shape()) + " + " +
                         shape_str(metadata.shape()) + " do not match Wskip " + shape_str(skip_w.shape()));
  }
  std::vector<Var> terms;
  if (variant != MMFAVariant::AttentionOnly) {
    terms.push_back(matmul(g.param(kSkip), concat({image, metadata})));
  }
  if (variant != MMFAVariant::SkipOnly) {
    Var o = attention_output(g, image, metadata, heads);
    terms.push_back(relu(linear(g.param(kGateW), o, g.param(kGateB))));
  }
  return add_n(terms);
}

}  // namespace jiadf::mmfa
