#include "deepcopy/baselines.hpp"

#include <stdexcept>
#include <string>

namespace deepcopy::baselines {

Tensor embed_fact(Tape& tape, const Tensor& embedding, const Tensor& projection,
                  const std::vector<TokenId>& fact) {
  if (fact.empty()) throw std::invalid_argument("embed_fact: empty fact");
  std::vector<std::size_t> ids;
  for (TokenId t : fact) ids.push_back(nn::embeddable(t, embedding.dim(0)));
  Tensor rows = ad::lookup(tape, embedding, ids);
  Tensor mean = ad::matmul(tape, Tensor::vector(std::vector<double>(ids.size(), 1.0 / ids.size())), rows);
  return ad::matmul(tape, projection, mean);
}

MemorySummary memnet_summary(Tape& tape, const Tensor& u, const Tensor& embedding, const Tensor& key_projection,
                             const Tensor& value_projection, const nn::AttentionParams& attn,
                             const std::vector<std::vector<TokenId>>& facts) {
  if (facts.empty()) throw std::invalid_argument("memnet_summary: at least one fact is required");
  std::vector<Tensor> keys, values;
  for (const auto& f : facts) {
    keys.push_back(embed_fact(tape, embedding, key_projection, f));
    values.push_back(embed_fact(tape, embedding, value_projection, f));
  }
  MemorySummary out;
  out.keys = ad::stack(tape, keys);
  out.values = ad::stack(tape, values);
  const auto a = nn::attend(tape, attn, nn::prepare_attention(tape, attn, out.keys, out.values), u);
  out.weights = a.weights;
  out.summary = a.context;
  out.combined = ad::add(tape, u, out.summary);
  return out;
}

bool is_seq2seq(Variant v) {
  switch (v) {
    case Variant::kS2S1: case Variant::kS2S2: case Variant::kS2S3:
    case Variant::kS2SC1: case Variant::kS2SC2: case Variant::kS2SC3:
      return true;
    default:
      return false;
  }
}

bool is_memnet(Variant v) {
  return v == Variant::kM1 || v == Variant::kM2 || v == Variant::kM3 || v == Variant::kM4;
}

ForwardResult seq2seq_forward(Tape& tape, const Model& model, const DialogueExample& ex,
                              const ForwardOptions& opts) {
  if (!is_seq2seq(model.config().variant)) {
    throw std::invalid_argument("seq2seq_forward: model variant is " + std::string(label(model.config().variant)));
  }
  return model.forward(tape, ex, opts);
}

ForwardResult memnet_forward(Tape& tape, const Model& model, const DialogueExample& ex,
                             const ForwardOptions& opts) {
  if (!is_memnet(model.config().variant)) {
    throw std::invalid_argument("memnet_forward: model variant is " + std::string(label(model.config().variant)));
  }
  return model.forward(tape, ex, opts);
}

}  // namespace deepcopy::baselines
