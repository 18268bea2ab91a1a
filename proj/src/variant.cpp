#include "deepcopy/variant.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>
#include <string>

namespace deepcopy {

VariantFlags flags(Variant v) {
  VariantFlags f;
  switch (v) {
    case Variant::kS2S1:
      break;
    case Variant::kS2S2:
      f.encoder_input = EncoderInput::kContextPlusContextFact;
      f.facts = FactUse::kConcatenated;
      break;
    case Variant::kS2S3:
      f.encoder_input = EncoderInput::kContextPlusResponseFact;
      f.facts = FactUse::kConcatenated;
      f.oracle = true;
      break;
    case Variant::kS2SC1:
      f.copy = true;
      break;
    case Variant::kS2SC2:
      f = flags(Variant::kS2S2);
      f.copy = true;
      break;
    case Variant::kS2SC3:
      f = flags(Variant::kS2S3);
      f.copy = true;
      break;
    case Variant::kM1:
      f.facts = FactUse::kMemory;
      f.context_attention = false;
      f.memory_init = true;
      break;
    case Variant::kM2:
      f.facts = FactUse::kMemory;
      f.memory_init = true;
      break;
    case Variant::kM3:
      f.facts = FactUse::kMemory;
      f.context_attention = false;
      f.fact_attention = true;
      f.memory_init = true;
      break;
    case Variant::kM4:
      f.facts = FactUse::kMemory;
      f.fact_attention = true;
      f.memory_init = true;
      break;
    case Variant::kMS2S:
      f.facts = FactUse::kHierarchical;
      f.fact_attention = true;
      break;
    case Variant::kDeepCopy:
      f.facts = FactUse::kHierarchical;
      f.fact_attention = true;
      f.copy = true;
      break;
  }
  return f;
}

std::string_view label(Variant v) {
  switch (v) {
    case Variant::kS2S1: return "S2S-1";
    case Variant::kS2S2: return "S2S-2";
    case Variant::kS2S3: return "S2S-3";
    case Variant::kS2SC1: return "S2SC-1";
    case Variant::kS2SC2: return "S2SC-2";
    case Variant::kS2SC3: return "S2SC-3";
    case Variant::kM1: return "M-1";
    case Variant::kM2: return "M-2";
    case Variant::kM3: return "M-3";
    case Variant::kM4: return "M-4";
    case Variant::kMS2S: return "M-S2S";
    case Variant::kDeepCopy: return "DeepCopy";
  }
  return "?";
}

std::string_view description(Variant v) {
  switch (v) {
    case Variant::kS2S1: return "Seq2Seq + NoFact";
    case Variant::kS2S2: return "Seq2Seq + BestFactContext";
    case Variant::kS2S3: return "Seq2Seq + BestFactResponse*";
    case Variant::kS2SC1: return "Seq2Seq + NoFact + Copy";
    case Variant::kS2SC2: return "Seq2Seq + BestFactContext + Copy";
    case Variant::kS2SC3: return "Seq2Seq + BestFactResponse + Copy*";
    case Variant::kM1: return "MemNet";
    case Variant::kM2: return "MemNet + ContextAttention";
    case Variant::kM3: return "MemNet + FactAttention";
    case Variant::kM4: return "MemNet + FullAttention";
    case Variant::kMS2S: return "MultiSeq2Seq";
    case Variant::kDeepCopy: return "DeepCopy";
  }
  return "?";
}

Variant parse_variant(std::string_view text) {
  auto upper = [](std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::toupper(c); });
    return out;
  };
  const std::string want = upper(text);
  std::string valid;
  for (Variant v : kAllVariants) {
    if (upper(label(v)) == want) return v;
    if (!valid.empty()) valid += ", ";
    valid += label(v);
  }
  throw std::invalid_argument("unknown variant '" + std::string(text) + "'; valid variants: " + valid);
}

}  // namespace deepcopy
