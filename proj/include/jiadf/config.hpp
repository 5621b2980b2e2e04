#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "jiadf/error.hpp"

namespace jiadf {

// Rungs of the fusion ablation ladder, weakest first.
enum class FusionVariant { LateConcat, JFConcat, JFMMFA, JIMMFA, JIADFNoAux, JIADF };

enum class MMFAVariant { SkipOnly, AttentionOnly, Full };

inline constexpr std::array<FusionVariant, 6> kFusionLadder{
    FusionVariant::LateConcat, FusionVariant::JFConcat,   FusionVariant::JFMMFA,
    FusionVariant::JIMMFA,     FusionVariant::JIADFNoAux, FusionVariant::JIADF};

inline std::string to_string(FusionVariant v) {
  switch (v) {
    case FusionVariant::LateConcat: return "late-concat";
    case FusionVariant::JFConcat: return "jf-concat";
    case FusionVariant::JFMMFA: return "jf-mmfa";
    case FusionVariant::JIMMFA: return "ji-mmfa";
    case FusionVariant::JIADFNoAux: return "ji-adf-noaux";
    case FusionVariant::JIADF: return "ji-adf";
  }
  return "?";
}

inline FusionVariant parse_fusion_variant(std::string_view s) {
  for (FusionVariant v : kFusionLadder)
    if (to_string(v) == s) return v;
  throw Error("unknown fusion variant '" + std::string(s) + "'");
}

inline std::string to_string(MMFAVariant v) {
  switch (v) {
    case MMFAVariant::SkipOnly: return "skip-only";
    case MMFAVariant::AttentionOnly: return "attention-only";
    case MMFAVariant::Full: return "full";
  }
  return "?";
}

inline MMFAVariant parse_mmfa_variant(std::string_view s) {
  for (MMFAVariant v : {MMFAVariant::SkipOnly, MMFAVariant::AttentionOnly, MMFAVariant::Full})
    if (to_string(v) == s) return v;
  throw Error("unknown MMFA variant '" + std::string(s) + "'");
}

// Subset of {C (clinical image), D (dermoscopic image), M (metadata)}.
struct Modalities {
  bool clinical = true;
  bool dermoscopic = true;
  bool metadata = true;

  bool image() const { return clinical || dermoscopic; }
  bool empty() const { return !clinical && !dermoscopic && !metadata; }

  friend bool operator==(const Modalities&, const Modalities&) = default;
};

// "C+D+M" style label, as used in the modality ablation table.
inline std::string to_string(const Modalities& m) {
  std::string s;
  auto put = [&](bool on, char c) {
    if (!on) return;
    if (!s.empty()) s += '+';
    s += c;
  };
  put(m.clinical, 'C');
  put(m.dermoscopic, 'D');
  put(m.metadata, 'M');
  return s;
}

// Accepts "c,d,m", "cdm", "C+D+M" and similar spellings.
inline Modalities parse_modalities(std::string_view s) {
  Modalities m{false, false, false};
  for (char ch : s) {
    switch (ch) {
      case 'c': case 'C': m.clinical = true; break;
      case 'd': case 'D': m.dermoscopic = true; break;
      case 'm': case 'M': m.metadata = true; break;
      case ',': case '+': case ' ': break;
      default: throw Error("invalid modality set '" + std::string(s) + "'");
    }
  }
  if (m.empty()) throw Error("modality set must be non-empty");
  return m;
}

// The seven non-empty subsets in table order.
inline std::vector<Modalities> all_modality_subsets() {
  return {{true, false, false}, {false, true, false}, {false, false, true}, {true, true, false},
          {true, false, true},  {false, true, true},  {true, true, true}};
}

struct LossWeights {
  double joint = 0.5;       // lambda_IM
  double image = 0.25;      // lambda_I
  double metadata = 0.25;   // lambda_M
};

struct ModelConfig {
  // Input feature widths.
  std::size_t clinical_dim = 16;
  std::size_t dermoscopic_dim = 16;
  std::size_t metadata_raw_dim = 16;

  std::size_t encoder_hidden = 64;
  std::size_t image_dim = 64;      // D_I
  std::size_t metadata_dim = 64;   // D_M
  std::size_t joint_dim = 256;     // D_IM
  std::size_t heads = 4;           // H
  std::size_t head_dim = 32;       // d_h
  std::size_t gate_hidden = 32;    // G
  std::size_t classes = 3;         // N

  LossWeights lambdas;
  FusionVariant fusion = FusionVariant::JIADF;
  MMFAVariant mmfa = MMFAVariant::Full;
  Modalities modalities;
  std::optional<std::vector<double>> class_weights;
  std::uint64_t seed = 0;

  void validate() const {
    const std::pair<const char*, std::size_t> dims[] = {
        {"clinical_dim", clinical_dim}, {"dermoscopic_dim", dermoscopic_dim},
        {"metadata_raw_dim", metadata_raw_dim}, {"encoder_hidden", encoder_hidden},
        {"image_dim", image_dim}, {"metadata_dim", metadata_dim}, {"joint_dim", joint_dim},
        {"heads", heads}, {"head_dim", head_dim}, {"gate_hidden", gate_hidden}};
    for (const auto& [name, v] : dims)
      if (v == 0) throw DimensionError(std::string("config: ") + name + " must be positive");
    if (classes < 2) throw DimensionError("config: classes must be at least 2");
    if (lambdas.joint < 0 || lambdas.image < 0 || lambdas.metadata < 0) {
      throw Error("config: loss weights must be non-negative");
    }
    if (modalities.empty()) throw Error("config: modality set must be non-empty");
    if (class_weights) {
      if (class_weights->size() != classes) throw DimensionError("config: class_weights length != classes");
      for (double w : *class_weights)
        if (!(w >= 0.0)) throw Error("config: class weights must be non-negative");
    }
  }
};

// The smallest configuration used for finite-difference gradient checks.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.clinical_dim = 4;
  c.dermoscopic_dim = 4;
  c.metadata_raw_dim = 3;
  c.encoder_hidden = 5;
  c.image_dim = 6;
  c.metadata_dim = 6;
  c.joint_dim = 8;
  c.heads = 2;
  c.head_dim = 3;
  c.gate_hidden = 8;
  c.classes = 3;
  return c;
}

}  // namespace jiadf
