#include "deepcopy/copy.hpp"

#include <stdexcept>
#include <string>

namespace deepcopy::copy {

Tensor scatter_weights(Tape& tape, std::span<const TokenId> tokens, const Tensor& weights,
                       std::size_t support_size) {
  std::vector<std::size_t> idx(tokens.begin(), tokens.end());
  return ad::index_add(tape, Tensor::zeros({support_size}), idx, weights);
}

ContextCopy context_copy(Tape& tape, const nn::AttentionParams& params, const nn::AttentionMemory& context,
                         std::span<const TokenId> context_tokens, const Tensor& decoder_h,
                         std::size_t support_size) {
  if (context_tokens.empty()) throw std::invalid_argument("context_copy: empty context");
  ContextCopy out;
  out.attention = nn::attend(tape, params, context, decoder_h);
  out.dist = scatter_weights(tape, context_tokens, out.attention.weights, support_size);
  return out;
}

Tensor hierarchical_mix(Tape& tape, const Tensor& beta, const std::vector<Tensor>& alphas,
                        const std::vector<std::vector<TokenId>>& fact_tokens, std::size_t support_size) {
  if (beta.size() != alphas.size() || alphas.size() != fact_tokens.size()) {
    throw std::invalid_argument("hierarchical_mix: beta, alphas and facts differ in count");
  }
  std::vector<TokenId> all_tokens;
  std::vector<Tensor> scaled;
  for (std::size_t j = 0; j < alphas.size(); ++j) {
    if (alphas[j].size() != fact_tokens[j].size()) {
      throw ad::ShapeError("hierarchical_mix: fact " + std::to_string(j) + " has " +
                           std::to_string(fact_tokens[j].size()) + " tokens but " +
                           std::to_string(alphas[j].size()) + " weights");
    }
    scaled.push_back(ad::scale_by(tape, ad::pick(tape, beta, j), alphas[j]));
    all_tokens.insert(all_tokens.end(), fact_tokens[j].begin(), fact_tokens[j].end());
  }
  return scatter_weights(tape, all_tokens, ad::concat(tape, scaled), support_size);
}

FactCopy fact_attention(Tape& tape, const nn::AttentionParams& token_params, const nn::AttentionParams& fact_params,
                        std::span<const nn::AttentionMemory> facts, const Tensor& decoder_h) {
  if (facts.empty()) throw std::invalid_argument("fact_copy: at least one fact is required");
  FactCopy out;
  std::vector<Tensor> summaries;
  for (const auto& mem : facts) {
    out.token_attention.push_back(nn::attend(tape, token_params, mem, decoder_h));
    summaries.push_back(out.token_attention.back().context);
  }
  Tensor stacked = ad::stack(tape, summaries);
  out.fact_attention = nn::attend(tape, fact_params, nn::prepare_attention(tape, fact_params, stacked, stacked),
                                  decoder_h);
  return out;
}

FactCopy fact_copy(Tape& tape, const nn::AttentionParams& token_params, const nn::AttentionParams& fact_params,
                   std::span<const nn::AttentionMemory> facts, const std::vector<std::vector<TokenId>>& fact_tokens,
                   const Tensor& decoder_h, std::size_t support_size) {
  if (facts.size() != fact_tokens.size()) throw std::invalid_argument("fact_copy: facts and tokens differ in count");
  FactCopy out = fact_attention(tape, token_params, fact_params, facts, decoder_h);
  std::vector<Tensor> alphas;
  for (const auto& a : out.token_attention) alphas.push_back(a.weights);
  out.dist = hierarchical_mix(tape, out.fact_attention.weights, alphas, fact_tokens, support_size);
  return out;
}

Fusion fuse(Tape& tape, const nn::AttentionParams& params, const Tensor& context_summary,
            const Tensor& fact_summary, const Tensor& context_dist, const Tensor& fact_dist,
            const Tensor& decoder_h) {
  Fusion out;
  const auto attn = nn::attention(tape, params, ad::stack(tape, {context_summary, fact_summary}), decoder_h);
  out.weights = attn.weights;
  out.context = attn.context;
  out.gamma = ad::pick(tape, attn.weights, 0);
  out.dist = ad::add(tape, ad::scale_by(tape, out.gamma, context_dist),
                     ad::scale_by(tape, ad::pick(tape, attn.weights, 1), fact_dist));
  return out;
}

Tensor mix_switch(Tape& tape, const Tensor& p_gen, const Tensor& p_vocab, const Tensor& p_copy) {
  if (p_copy.size() < p_vocab.size()) {
    throw ad::ShapeError("mix_switch: copy support " + ad::shape_str(p_copy.shape()) +
                         " smaller than vocabulary " + ad::shape_str(p_vocab.shape()));
  }
  Tensor vocab_ext = p_vocab;
  if (p_copy.size() > p_vocab.size()) {
    vocab_ext = ad::concat(tape, {p_vocab, Tensor::zeros({p_copy.size() - p_vocab.size()})});
  }
  return ad::add(tape, ad::scale_by(tape, p_gen, vocab_ext),
                 ad::scale_by(tape, ad::affine(tape, p_gen, -1.0, 1.0), p_copy));
}

}  // namespace deepcopy::copy
