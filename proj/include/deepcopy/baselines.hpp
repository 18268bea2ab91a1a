// Seq2Seq (+Copy) and MemNet comparison models.
#pragma once

#include <vector>

#include "deepcopy/model.hpp"

namespace deepcopy::baselines {

struct MemorySummary {
  Tensor keys;     // (K, d)
  Tensor values;   // (K, d)
  Tensor weights;  // attention over facts
  Tensor summary;  // o
  Tensor combined; // u_hat = u + o
};

/// Mean bag-of-embeddings of a fact, projected by `projection` (d, d_emb).
Tensor embed_fact(Tape& tape, const Tensor& embedding, const Tensor& projection,
                  const std::vector<TokenId>& fact);

/// Attention over fact keys conditioned on u; o mixes the fact values.
MemorySummary memnet_summary(Tape& tape, const Tensor& u, const Tensor& embedding, const Tensor& key_projection,
                             const Tensor& value_projection, const nn::AttentionParams& attn,
                             const std::vector<std::vector<TokenId>>& facts);

bool is_seq2seq(Variant v);
bool is_memnet(Variant v);

ForwardResult seq2seq_forward(Tape& tape, const Model& model, const DialogueExample& ex,
                              const ForwardOptions& opts = {});
ForwardResult memnet_forward(Tape& tape, const Model& model, const DialogueExample& ex,
                             const ForwardOptions& opts = {});

}  // namespace deepcopy::baselines
