// Model variants: the Table-1 style labels and the structural flags each one
// implies.
#pragma once

#include <array>
#include <string>
#include <string_view>

namespace deepcopy {

enum class Variant {
  kS2S1,    // Seq2Seq + NoFact
  kS2S2,    // Seq2Seq + BestFactContext
  kS2S3,    // Seq2Seq + BestFactResponse (oracle)
  kS2SC1,   // ... + Copy
  kS2SC2,
  kS2SC3,   // oracle
  kM1,      // MemNet
  kM2,      // MemNet + ContextAttention
  kM3,      // MemNet + FactAttention
  kM4,      // MemNet + FullAttention
  kMS2S,    // MultiSeq2Seq
  kDeepCopy,
};

inline constexpr std::array<Variant, 12> kAllVariants = {
    Variant::kM1,   Variant::kM2,   Variant::kM3,   Variant::kM4,   Variant::kS2S1,  Variant::kS2S2,
    Variant::kS2S3, Variant::kS2SC1, Variant::kS2SC2, Variant::kS2SC3, Variant::kMS2S, Variant::kDeepCopy};

enum class EncoderInput { kContext, kContextPlusContextFact, kContextPlusResponseFact };
enum class FactUse { kNone, kConcatenated, kMemory, kHierarchical };

struct VariantFlags {
  EncoderInput encoder_input = EncoderInput::kContext;
  FactUse facts = FactUse::kNone;
  bool context_attention = true;
  bool fact_attention = false;  // MemNet value attention or hierarchical token/fact attention
  bool copy = false;            // single-source copy, or context+fact copy for DeepCopy
  bool memory_init = false;     // decoder initialised from u + o
  bool oracle = false;          // fact chosen with the ground-truth response
};

VariantFlags flags(Variant v);
/// "S2SC-2", "M-S2S", "DeepCopy", ...
std::string_view label(Variant v);
/// Long form, e.g. "Seq2Seq + BestFactContext + Copy".
std::string_view description(Variant v);
/// Accepts the short labels case-insensitively; throws std::invalid_argument
/// listing the valid labels otherwise.
Variant parse_variant(std::string_view text);

}  // namespace deepcopy
