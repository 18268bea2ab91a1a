#include "deepcopy/seqnn.hpp"

#include <algorithm>
#include <stdexcept>

namespace deepcopy::nn {

LstmState zero_state(std::size_t hidden) {
  return {Tensor::zeros({hidden}), Tensor::zeros({hidden})};
}

LstmParams make_lstm(ParamStore& store, const std::string& prefix, std::size_t input_dim,
                     std::size_t hidden, Rng& rng, double range) {
  LstmParams p;
  p.input_dim = input_dim;
  p.hidden = hidden;
  p.weight = store.add(prefix + ".weight", {4 * hidden, input_dim + hidden}, rng, range);
  p.bias = store.add_filled(prefix + ".bias", {4 * hidden}, 0.0);
  auto b = p.bias.mutable_data();
  std::fill(b.begin() + static_cast<std::ptrdiff_t>(hidden),
            b.begin() + static_cast<std::ptrdiff_t>(2 * hidden), kForgetBias);
  return p;
}

LstmParams lstm_from(const ParamStore& store, const std::string& prefix) {
  LstmParams p;
  p.weight = store.get(prefix + ".weight");
  p.bias = store.get(prefix + ".bias");
  p.hidden = p.weight.dim(0) / 4;
  p.input_dim = p.weight.dim(1) - p.hidden;
  return p;
}

LstmState lstm_step(Tape& tape, const LstmParams& lstm, const Tensor& x, const LstmState& state) {
  const std::size_t d = lstm.hidden;
  if (x.rank() != 1 || x.size() != lstm.input_dim) {
    throw ad::ShapeError("lstm_step: input " + ad::shape_str(x.shape()) + " for input_dim " +
                         std::to_string(lstm.input_dim));
  }
  Tensor pre = ad::add(tape, ad::matmul(tape, lstm.weight, ad::concat(tape, {x, state.h})), lstm.bias);
  Tensor gates_ifo = ad::sigmoid(tape, pre);
  Tensor i = ad::slice(tape, gates_ifo, 0, d);
  Tensor f = ad::slice(tape, gates_ifo, d, 2 * d);
  Tensor o = ad::slice(tape, gates_ifo, 3 * d, 4 * d);
  Tensor g = ad::tanh(tape, ad::slice(tape, pre, 2 * d, 3 * d));
  Tensor c = ad::add(tape, ad::mul(tape, f, state.c), ad::mul(tape, i, g));
  Tensor h = ad::mul(tape, o, ad::tanh(tape, c));
  return {h, c};
}

TokenId embeddable(TokenId id, std::size_t vocab_size) {
  return id < vocab_size ? id : corpus::Vocab::kUnk;
}

EncodedSeq encode(Tape& tape, const Tensor& embedding, const LstmParams& lstm,
                  std::span<const TokenId> tokens) {
  if (tokens.empty()) throw std::invalid_argument("encode: empty token sequence");
  const std::size_t vocab = embedding.dim(0);
  std::vector<std::size_t> ids;
  ids.reserve(tokens.size());
  for (TokenId t : tokens) ids.push_back(embeddable(t, vocab));
  Tensor embedded = ad::lookup(tape, embedding, ids);

  EncodedSeq out;
  LstmState state = zero_state(lstm.hidden);
  std::vector<Tensor> outputs;
  outputs.reserve(ids.size());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    state = lstm_step(tape, lstm, ad::row(tape, embedded, k), state);
    outputs.push_back(state.h);
    out.valid.push_back(ids[k] != corpus::Vocab::kPad);
  }
  out.outputs = ad::stack(tape, outputs);
  out.final = state;
  return out;
}

AttentionParams make_attention(ParamStore& store, const std::string& prefix, std::size_t dim, Rng& rng,
                               double range) {
  return {store.add(prefix + ".w1", {dim}, rng, range), store.add(prefix + ".W2", {dim, 2 * dim}, rng, range)};
}

AttentionParams attention_from(const ParamStore& store, const std::string& prefix) {
  return {store.get(prefix + ".w1"), store.get(prefix + ".W2")};
}

AttentionMemory prepare_attention(Tape& tape, const AttentionParams& params, const Tensor& keys,
                                  const Tensor& values, const std::vector<bool>& valid) {
  const std::size_t p = params.w1.size();
  if (keys.rank() != 2 || keys.dim(1) != p) {
    throw ad::ShapeError("attention: keys " + ad::shape_str(keys.shape()) + " for dim " + std::to_string(p));
  }
  if (values.rank() != 2 || values.dim(0) != keys.dim(0)) {
    throw ad::ShapeError("attention: keys " + ad::shape_str(keys.shape()) + " and values " +
                         ad::shape_str(values.shape()) + " differ in length");
  }
  const std::size_t n = keys.dim(0);
  AttentionMemory mem;
  mem.keys_proj = ad::matmul(tape, keys, ad::transpose(tape, ad::slice(tape, params.w2, 0, p)));
  mem.w2_query = ad::slice(tape, params.w2, p, 2 * p);
  mem.values = values;
  if (!valid.empty()) {
    if (valid.size() != n) throw ad::ShapeError("attention: mask length differs from sequence length");
    if (std::none_of(valid.begin(), valid.end(), [](bool v) { return v; })) {
      throw std::invalid_argument("attention: every position is masked");
    }
    if (!std::all_of(valid.begin(), valid.end(), [](bool v) { return v; })) {
      std::vector<double> bias(n, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        if (!valid[i]) bias[i] = kMaskedScore;
      mem.mask_bias = Tensor::vector(std::move(bias));
    }
  }
  return mem;
}

AttentionResult attend(Tape& tape, const AttentionParams& params, const AttentionMemory& memory,
                       const Tensor& query) {
  Tensor q = ad::matmul(tape, memory.w2_query, query);
  Tensor hidden = ad::tanh(tape, ad::add(tape, memory.keys_proj, q));
  Tensor scores = ad::matmul(tape, hidden, params.w1);
  if (memory.mask_bias.defined()) scores = ad::add(tape, scores, memory.mask_bias);
  Tensor weights = ad::softmax(tape, scores);
  return {weights, ad::matmul(tape, weights, memory.values)};
}

AttentionResult attention(Tape& tape, const AttentionParams& params, const Tensor& u, const Tensor& v,
                          const std::vector<bool>& valid) {
  return attend(tape, params, prepare_attention(tape, params, u, u, valid), v);
}

}  // namespace deepcopy::nn
