// Copy distributions: context pointer, hierarchical fact pointer, inter-source
// fusion and the generate/copy soft switch.
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "deepcopy/seqnn.hpp"

namespace deepcopy::copy {

using ad::Tape;
using ad::Tensor;
using corpus::TokenId;

/// p(w) = sum of weights[i] over positions i with tokens[i] == w, as a vector
/// over `support_size` extended ids.
Tensor scatter_weights(Tape& tape, std::span<const TokenId> tokens, const Tensor& weights,
                       std::size_t support_size);

struct ContextCopy {
  nn::AttentionResult attention;  // alpha_x, c_x
  Tensor dist;                    // p_x over extended ids
};

ContextCopy context_copy(Tape& tape, const nn::AttentionParams& params, const nn::AttentionMemory& context,
                         std::span<const TokenId> context_tokens, const Tensor& decoder_h,
                         std::size_t support_size);

/// p_f(w) = sum_j beta_j * sum_{l: f_jl = w} alpha_jl.
Tensor hierarchical_mix(Tape& tape, const Tensor& beta, const std::vector<Tensor>& alphas,
                        const std::vector<std::vector<TokenId>>& fact_tokens, std::size_t support_size);

struct FactCopy {
  std::vector<nn::AttentionResult> token_attention;  // alpha^(f)(i), c^(f)(i) per fact
  nn::AttentionResult fact_attention;                // beta, c_f
  Tensor dist;                                       // p_f over extended ids
};

/// Token-level attention inside every fact, then attention over the per-fact
/// summaries. Leaves `dist` undefined.
FactCopy fact_attention(Tape& tape, const nn::AttentionParams& token_params, const nn::AttentionParams& fact_params,
                        std::span<const nn::AttentionMemory> facts, const Tensor& decoder_h);

/// fact_attention followed by hierarchical_mix.
FactCopy fact_copy(Tape& tape, const nn::AttentionParams& token_params, const nn::AttentionParams& fact_params,
                   std::span<const nn::AttentionMemory> facts, const std::vector<std::vector<TokenId>>& fact_tokens,
                   const Tensor& decoder_h, std::size_t support_size);

struct Fusion {
  Tensor weights;  // [gamma, 1 - gamma]
  Tensor gamma;    // scalar
  Tensor context;  // c_t
  Tensor dist;     // p_copy = gamma p_x + (1 - gamma) p_f
};

Fusion fuse(Tape& tape, const nn::AttentionParams& params, const Tensor& context_summary,
            const Tensor& fact_summary, const Tensor& context_dist, const Tensor& fact_dist,
            const Tensor& decoder_h);

/// p_final = p_gen * [p_vocab; 0] + (1 - p_gen) * p_copy over the extended ids.
Tensor mix_switch(Tape& tape, const Tensor& p_gen, const Tensor& p_vocab, const Tensor& p_copy);

}  // namespace deepcopy::copy
