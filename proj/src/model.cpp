#include "deepcopy/model.hpp"

#include <algorithm>
#include <string>

#include "deepcopy/baselines.hpp"

namespace deepcopy {

namespace {

bool needs_facts(const VariantFlags& f) { return f.facts != FactUse::kNone; }

}  // namespace

Model::Model(const ModelConfig& config, Rng& rng) : config_(config), flags_(deepcopy::flags(config.variant)) {
  build(rng);
  bind();
}

Model::Model(const ModelConfig& config, ParamStore params)
    : config_(config), flags_(deepcopy::flags(config.variant)), params_(std::move(params)) {
  // Build a reference layout and check every name and shape against it.
  Rng rng(0);
  Model reference(config, rng);
  for (const auto& e : reference.params().entries()) {
    if (!params_.has(e.name)) throw std::invalid_argument("parameters lack '" + e.name + "'");
    if (params_.get(e.name).shape() != e.tensor.shape()) {
      throw ad::ShapeError("parameter '" + e.name + "' has shape " + ad::shape_str(params_.get(e.name).shape()) +
                           ", expected " + ad::shape_str(e.tensor.shape()));
    }
  }
  bind();
}

std::size_t Model::output_context_dim() const {
  const std::size_t d = config_.d_hidden;
  switch (config_.variant) {
    case Variant::kM1: return 0;
    case Variant::kM4:
    case Variant::kMS2S: return 2 * d;
    default: return d;
  }
}

void Model::build(Rng& rng) {
  const std::size_t v = config_.vocab_size, e = config_.d_emb, d = config_.d_hidden;
  const double r = config_.init_range;
  if (v <= corpus::Vocab::kReserved || e == 0 || d == 0) {
    throw std::invalid_argument("model: vocab_size must exceed the reserved ids and dimensions must be positive");
  }
  ad::Tensor emb = params_.add("embedding", {v, e}, rng, r);
  for (std::size_t j = 0; j < e; ++j) emb.mutable_data()[corpus::Vocab::kPad * e + j] = 0.0;

  nn::make_lstm(params_, "encoder", e, d, rng, r);
  nn::make_lstm(params_, "decoder", e + output_context_dim(), d, rng, r);
  if (flags_.context_attention) nn::make_attention(params_, "attn.context", d, rng, r);
  if (flags_.facts == FactUse::kHierarchical) {
    nn::make_attention(params_, "attn.fact_token", d, rng, r);
    nn::make_attention(params_, "attn.fact_level", d, rng, r);
    if (flags_.copy) nn::make_attention(params_, "attn.fusion", d, rng, r);
  }
  if (flags_.facts == FactUse::kMemory) {
    params_.add("memnet.key", {d, e}, rng, r);
    params_.add("memnet.value", {d, e}, rng, r);
    nn::make_attention(params_, "attn.memory", d, rng, r);
    if (flags_.fact_attention) nn::make_attention(params_, "attn.fact_value", d, rng, r);
  }
  params_.add("output.weight", {v, d + output_context_dim()}, rng, r);
  params_.add_filled("output.bias", {v}, 0.0);
  if (flags_.copy) {
    params_.add("switch.context", {d}, rng, r);
    params_.add("switch.hidden", {d}, rng, r);
    params_.add("switch.input", {e}, rng, r);
    params_.add_filled("switch.bias", {}, 0.0);
  }
}

void Model::bind() {
  embedding_ = params_.get("embedding");
  encoder_ = nn::lstm_from(params_, "encoder");
  decoder_ = nn::lstm_from(params_, "decoder");
  if (flags_.context_attention) context_attn_ = nn::attention_from(params_, "attn.context");
  if (flags_.facts == FactUse::kHierarchical) {
    fact_token_attn_ = nn::attention_from(params_, "attn.fact_token");
    fact_level_attn_ = nn::attention_from(params_, "attn.fact_level");
    if (flags_.copy) fusion_attn_ = nn::attention_from(params_, "attn.fusion");
  }
  if (flags_.facts == FactUse::kMemory) {
    key_proj_ = params_.get("memnet.key");
    value_proj_ = params_.get("memnet.value");
    memory_attn_ = nn::attention_from(params_, "attn.memory");
    if (flags_.fact_attention) fact_value_attn_ = nn::attention_from(params_, "attn.fact_value");
  }
  out_weight_ = params_.get("output.weight");
  out_bias_ = params_.get("output.bias");
  if (flags_.copy) {
    switch_context_ = params_.get("switch.context");
    switch_hidden_ = params_.get("switch.hidden");
    switch_input_ = params_.get("switch.input");
    switch_bias_ = params_.get("switch.bias");
  }
}

void Model::mask_gradients() {
  auto g = embedding_.mutable_grad();
  const std::size_t e = config_.d_emb;
  std::fill_n(g.begin() + static_cast<std::ptrdiff_t>(corpus::Vocab::kPad * e), e, 0.0);
}

std::vector<TokenId> Model::encoder_input(const DialogueExample& ex, const ForwardOptions& opts) const {
  std::vector<TokenId> tokens = ex.context;
  if (flags_.encoder_input == EncoderInput::kContext) return tokens;
  if (flags_.oracle && !opts.oracle) {
    throw OracleError(std::string(label(config_.variant)) +
                      " is an ORACLE variant: it selects its fact with the ground-truth response and "
                      "must be enabled explicitly (--oracle)");
  }
  if (ex.facts.empty()) {
    throw std::invalid_argument(std::string(label(config_.variant)) + " requires at least one fact");
  }
  const std::size_t k = flags_.encoder_input == EncoderInput::kContextPlusContextFact ? ex.best_fact_by_context
                                                                                      : ex.best_fact_by_response;
  if (k >= ex.facts.size()) throw std::out_of_range("selected fact index " + std::to_string(k) + " out of range");
  tokens.push_back(corpus::Vocab::kConcat);
  tokens.insert(tokens.end(), ex.facts[k].begin(), ex.facts[k].end());
  return tokens;
}

std::vector<TokenId> Model::copy_support(const DialogueExample& ex, const ForwardOptions& opts) const {
  if (!flags_.copy) return {};
  std::vector<TokenId> support = encoder_input(ex, opts);
  if (flags_.facts == FactUse::kHierarchical)
    for (const auto& f : ex.facts) support.insert(support.end(), f.begin(), f.end());
  std::sort(support.begin(), support.end());
  support.erase(std::unique(support.begin(), support.end()), support.end());
  return support;
}

std::vector<TokenId> Model::model_targets(const DialogueExample& ex, const ForwardOptions& opts) const {
  const auto support = copy_support(ex, opts);
  std::vector<TokenId> out;
  out.reserve(ex.target.size());
  for (TokenId t : ex.target) {
    const bool ok = t < config_.vocab_size || std::binary_search(support.begin(), support.end(), t);
    out.push_back(ok ? t : corpus::Vocab::kUnk);
  }
  return out;
}

EncodedExample Model::encode(Tape& tape, const DialogueExample& ex, const ForwardOptions& opts) const {
  if (ex.vocab_size != config_.vocab_size) {
    throw std::invalid_argument("example built for vocabulary of " + std::to_string(ex.vocab_size) +
                                " tokens, model has " + std::to_string(config_.vocab_size));
  }
  if (needs_facts(flags_) && ex.facts.empty()) {
    throw std::invalid_argument(std::string(label(config_.variant)) + " requires at least one fact");
  }
  EncodedExample enc;
  enc.input_tokens = encoder_input(ex, opts);
  enc.output_size = flags_.copy ? ex.extended_size() : config_.vocab_size;
  enc.input = nn::encode(tape, embedding_, encoder_, enc.input_tokens);
  if (flags_.context_attention) {
    enc.input_memory =
        nn::prepare_attention(tape, context_attn_, enc.input.outputs, enc.input.outputs, enc.input.valid);
  }
  enc.decoder_init_h = enc.input.final.h;

  if (flags_.facts == FactUse::kHierarchical) {
    enc.fact_tokens = ex.facts;
    for (const auto& fact : ex.facts) {
      auto f = nn::encode(tape, embedding_, encoder_, fact);
      enc.fact_memories.push_back(nn::prepare_attention(tape, fact_token_attn_, f.outputs, f.outputs, f.valid));
    }
  }
  if (flags_.facts == FactUse::kMemory) {
    const auto mem = baselines::memnet_summary(tape, enc.input.final.h, embedding_, key_proj_, value_proj_,
                                               memory_attn_, ex.facts);
    if (opts.mask_facts) {
      enc.memory_summary = Tensor::zeros({config_.d_hidden});
      enc.decoder_init_h = enc.input.final.h;
    } else {
      enc.memory_summary = mem.summary;
      enc.decoder_init_h = mem.combined;
    }
    if (flags_.fact_attention) {
      enc.value_memory = nn::prepare_attention(tape, fact_value_attn_, mem.values, mem.values);
    }
  }
  return enc;
}

DecoderState Model::initial_state(const EncodedExample& enc, const ForwardOptions& opts) const {
  DecoderState s;
  if (opts.zero_init) {
    s.lstm = nn::zero_state(config_.d_hidden);
  } else {
    s.lstm = {enc.decoder_init_h, enc.input.final.c};
  }
  if (output_context_dim() > 0) s.feed = Tensor::zeros({output_context_dim()});
  return s;
}

std::pair<StepDists, DecoderState> Model::step(Tape& tape, const EncodedExample& enc, const DecoderState& state,
                                               TokenId prev) const {
  StepDists out;
  const TokenId prev_id = nn::embeddable(prev, config_.vocab_size);
  Tensor prev_emb = ad::lookup(tape, embedding_, prev_id);
  Tensor input = state.feed.defined() ? ad::concat(tape, {prev_emb, state.feed}) : prev_emb;
  DecoderState next;
  next.lstm = nn::lstm_step(tape, decoder_, input, state.lstm);
  next.step = state.step + 1;
  const Tensor& h = next.lstm.h;

  copy::ContextCopy ctx;
  if (flags_.context_attention) {
    if (flags_.copy) {
      ctx = copy::context_copy(tape, context_attn_, enc.input_memory, enc.input_tokens, h, enc.output_size);
      out.context_copy = ctx.dist;
    } else {
      ctx.attention = nn::attend(tape, context_attn_, enc.input_memory, h);
    }
    out.context_weights = ctx.attention.weights;
    out.context_summary = ctx.attention.context;
  }

  copy::FactCopy facts;
  if (flags_.facts == FactUse::kHierarchical) {
    facts = flags_.copy ? copy::fact_copy(tape, fact_token_attn_, fact_level_attn_, enc.fact_memories,
                                          enc.fact_tokens, h, enc.output_size)
                        : copy::fact_attention(tape, fact_token_attn_, fact_level_attn_, enc.fact_memories, h);
    for (const auto& a : facts.token_attention) out.fact_token_weights.push_back(a.weights);
    out.fact_weights = facts.fact_attention.weights;
    out.fact_summary = facts.fact_attention.context;
    if (flags_.copy) out.fact_copy = facts.dist;
  } else if (flags_.facts == FactUse::kMemory && flags_.fact_attention) {
    const auto a = nn::attend(tape, fact_value_attn_, enc.value_memory, h);
    out.fact_weights = a.weights;
    out.fact_summary = a.context;
  }

  Tensor copy_context;
  switch (config_.variant) {
    case Variant::kM1:
      break;
    case Variant::kM3:
      out.output_context = out.fact_summary;
      break;
    case Variant::kM4:
    case Variant::kMS2S:
      out.output_context = ad::concat(tape, {out.context_summary, out.fact_summary});
      break;
    case Variant::kDeepCopy: {
      const auto fused = copy::fuse(tape, fusion_attn_, out.context_summary, out.fact_summary, out.context_copy,
                                    out.fact_copy, h);
      out.fusion_weights = fused.weights;
      out.gamma = fused.gamma;
      out.p_copy = fused.dist;
      out.output_context = fused.context;
      break;
    }
    default:
      out.output_context = out.context_summary;
      if (flags_.copy) out.p_copy = out.context_copy;
      break;
  }

  Tensor features = out.output_context.defined() ? ad::concat(tape, {h, out.output_context}) : h;
  out.p_vocab = ad::softmax(tape, ad::add(tape, ad::matmul(tape, out_weight_, features), out_bias_));

  if (flags_.copy) {
    Tensor logit = ad::add(tape, ad::add(tape, ad::dot(tape, switch_context_, out.output_context),
                                         ad::dot(tape, switch_hidden_, h)),
                           ad::add(tape, ad::dot(tape, switch_input_, prev_emb), switch_bias_));
    out.p_gen = ad::sigmoid(tape, logit);
    out.p_final = copy::mix_switch(tape, out.p_gen, out.p_vocab, out.p_copy);
  } else {
    out.p_final = out.p_vocab;
  }
  if (output_context_dim() > 0) next.feed = out.output_context;
  return {std::move(out), std::move(next)};
}

Tensor sequence_nll(Tape& tape, const std::vector<StepDists>& steps, const std::vector<TokenId>& targets) {
  if (steps.size() != targets.size() || targets.empty()) {
    throw std::invalid_argument("sequence_nll: " + std::to_string(steps.size()) + " step distributions for " +
                                std::to_string(targets.size()) + " targets");
  }
  Tensor total;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    Tensor lp = ad::log(tape, ad::pick(tape, steps[t].p_final, targets[t]));
    total = total.defined() ? ad::add(tape, total, lp) : lp;
  }
  return ad::affine(tape, total, -1.0 / static_cast<double>(targets.size()));
}

ForwardResult Model::forward(Tape& tape, const DialogueExample& ex, const ForwardOptions& opts) const {
  if (ex.target.empty()) throw std::invalid_argument("forward: empty target");
  ForwardResult result;
  result.targets = model_targets(ex, opts);
  const EncodedExample enc = encode(tape, ex, opts);
  DecoderState state = initial_state(enc, opts);
  TokenId prev = corpus::Vocab::kSos;
  for (TokenId y : result.targets) {
    auto [dists, next] = step(tape, enc, state, prev);
    result.steps.push_back(std::move(dists));
    state = std::move(next);
    prev = y;
  }
  result.loss = sequence_nll(tape, result.steps, result.targets);
  return result;
}

std::pair<StepDists, DecoderState> decode_step(Tape& tape, const Model& model, const EncodedExample& enc,
                                               const DecoderState& state, TokenId prev) {
  return model.step(tape, enc, state, prev);
}

ForwardResult deepcopy_forward(Tape& tape, const Model& model, const DialogueExample& ex) {
  if (model.config().variant != Variant::kDeepCopy) {
    throw std::invalid_argument("deepcopy_forward: model variant is " + std::string(label(model.config().variant)));
  }
  return model.forward(tape, ex);
}

ForwardResult multiseq2seq_forward(Tape& tape, const Model& model, const DialogueExample& ex) {
  if (model.config().variant != Variant::kMS2S) {
    throw std::invalid_argument("multiseq2seq_forward: model variant is " +
                                std::string(label(model.config().variant)));
  }
  return model.forward(tape, ex);
}

}  // namespace deepcopy
