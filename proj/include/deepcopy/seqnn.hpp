// Embeddings, the LSTM cell, the sequence encoder and tanh-MLP attention.
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "deepcopy/ad.hpp"
#include "deepcopy/corpus.hpp"
#include "deepcopy/params.hpp"

namespace deepcopy::nn {

using ad::Tape;
using ad::Tensor;
using corpus::TokenId;

inline constexpr double kInitRange = 0.08;
inline constexpr double kForgetBias = 1.0;
inline constexpr double kMaskedScore = -1e9;

struct LstmState {
  Tensor h;
  Tensor c;
};

LstmState zero_state(std::size_t hidden);

/// Gates are stacked as rows [input; forget; cell; output] of one
/// (4d, input_dim + d) matrix applied to [x; h].
struct LstmParams {
  Tensor weight;
  Tensor bias;
  std::size_t input_dim = 0;
  std::size_t hidden = 0;
};

LstmParams make_lstm(ParamStore& store, const std::string& prefix, std::size_t input_dim,
                     std::size_t hidden, Rng& rng, double range = kInitRange);
LstmParams lstm_from(const ParamStore& store, const std::string& prefix);

LstmState lstm_step(Tape& tape, const LstmParams& lstm, const Tensor& x, const LstmState& state);

/// Maps extended (copy-only) ids to UNK so they can be embedded.
TokenId embeddable(TokenId id, std::size_t vocab_size);

struct EncodedSeq {
  Tensor outputs;  // (n, d)
  LstmState final;
  std::vector<bool> valid;  // false for PAD positions
  std::size_t length() const { return valid.size(); }
};

/// Unidirectional left-to-right pass of `lstm` over the embedded tokens.
EncodedSeq encode(Tape& tape, const Tensor& embedding, const LstmParams& lstm,
                  std::span<const TokenId> tokens);

struct AttentionParams {
  Tensor w1;  // (p)
  Tensor w2;  // (p, 2p), acting on [u_i; v]
};

AttentionParams make_attention(ParamStore& store, const std::string& prefix, std::size_t dim, Rng& rng,
                               double range = kInitRange);
AttentionParams attention_from(const ParamStore& store, const std::string& prefix);

/// The query-independent half of the score, W2[:, :p] u_i, computed once per
/// sequence. Scores come from `keys`, the returned context mixes `values`.
struct AttentionMemory {
  Tensor keys_proj;  // (n, p)
  Tensor w2_query;   // (p, p)
  Tensor values;     // (n, p')
  Tensor mask_bias;  // (n), 0 or kMaskedScore; undefined when nothing is masked
};

AttentionMemory prepare_attention(Tape& tape, const AttentionParams& params, const Tensor& keys,
                                  const Tensor& values, const std::vector<bool>& valid = {});

struct AttentionResult {
  Tensor weights;  // (n) simplex
  Tensor context;  // (p')
};

/// e_i = w1 . tanh(W2 [u_i; v]);  weights = softmax(e);  context = sum_i weights_i value_i
AttentionResult attend(Tape& tape, const AttentionParams& params, const AttentionMemory& memory,
                       const Tensor& query);

AttentionResult attention(Tape& tape, const AttentionParams& params, const Tensor& u, const Tensor& v,
                          const std::vector<bool>& valid = {});

}  // namespace deepcopy::nn
