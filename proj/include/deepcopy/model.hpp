// Encoder-decoder models for every variant. The DeepCopy decoder combines a
// context pointer, a hierarchical fact pointer, inter-source fusion and a
// vocabulary distribution; the baselines switch parts of it off.
#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "deepcopy/copy.hpp"
#include "deepcopy/corpus.hpp"
#include "deepcopy/params.hpp"
#include "deepcopy/seqnn.hpp"
#include "deepcopy/variant.hpp"

namespace deepcopy {

using ad::Tape;
using ad::Tensor;
using corpus::DialogueExample;
using corpus::TokenId;

/// Raised when a response-selected (ORACLE) variant is used without the
/// caller opting in.
class OracleError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct ModelConfig {
  Variant variant = Variant::kDeepCopy;
  std::size_t vocab_size = 0;
  std::size_t d_emb = 100;
  std::size_t d_hidden = 100;
  double init_range = nn::kInitRange;
};

struct ForwardOptions {
  bool oracle = false;      // allow S2S-3 / S2SC-3
  bool mask_facts = false;  // MemNet: drop the fact summary, u_hat = u
  bool zero_init = false;   // start the decoder from the zero state
};

/// Everything one decoder step produces. Members a variant does not compute
/// stay undefined.
struct StepDists {
  Tensor context_weights;                 // alpha_x over encoder positions
  std::vector<Tensor> fact_token_weights; // alpha^(f)(i) per fact
  Tensor fact_weights;                    // beta over facts
  Tensor fusion_weights;                  // [gamma, 1 - gamma]
  Tensor gamma;
  Tensor context_copy;                    // p_x
  Tensor fact_copy;                       // p_f
  Tensor p_vocab;
  Tensor p_copy;
  Tensor p_gen;
  Tensor p_final;
  Tensor context_summary;                 // c_x
  Tensor fact_summary;                    // c_f
  Tensor output_context;                  // vector fed to the output layer with h_t
};

struct DecoderState {
  nn::LstmState lstm;
  Tensor feed;  // previous output context (input feeding); undefined when the variant has none
  std::size_t step = 0;
};

struct EncodedExample {
  std::vector<TokenId> input_tokens;
  nn::EncodedSeq input;
  nn::AttentionMemory input_memory;
  std::vector<std::vector<TokenId>> fact_tokens;
  std::vector<nn::AttentionMemory> fact_memories;  // hierarchical variants
  nn::AttentionMemory value_memory;                // MemNet fact-value attention
  Tensor memory_summary;                           // o
  Tensor decoder_init_h;                           // u or u_hat
  std::size_t output_size = 0;                     // length of p_final
};

struct ForwardResult {
  std::vector<StepDists> steps;
  std::vector<TokenId> targets;  // what the loss was computed against
  Tensor loss;                   // -(1/|y|) sum_t log p_t(y_t)
};

class Model {
 public:
  /// Fresh parameters drawn from `rng`.
  Model(const ModelConfig& config, Rng& rng);
  /// Wraps existing parameters (e.g. from a checkpoint); names and shapes
  /// are validated.
  Model(const ModelConfig& config, ParamStore params);

  const ModelConfig& config() const { return config_; }
  const VariantFlags& flags() const { return flags_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Width of the vector concatenated with h_t at the output layer.
  std::size_t output_context_dim() const;

  /// Encoder token sequence for this variant (context, or context + CONCAT + fact).
  std::vector<TokenId> encoder_input(const DialogueExample& ex, const ForwardOptions& opts = {}) const;
  /// Extended ids this variant can copy for the example.
  std::vector<TokenId> copy_support(const DialogueExample& ex, const ForwardOptions& opts = {}) const;
  /// Targets as this variant sees them: extended ids it cannot produce become UNK.
  std::vector<TokenId> model_targets(const DialogueExample& ex, const ForwardOptions& opts = {}) const;

  EncodedExample encode(Tape& tape, const DialogueExample& ex, const ForwardOptions& opts = {}) const;
  DecoderState initial_state(const EncodedExample& enc, const ForwardOptions& opts = {}) const;
  std::pair<StepDists, DecoderState> step(Tape& tape, const EncodedExample& enc, const DecoderState& state,
                                          TokenId prev) const;
  ForwardResult forward(Tape& tape, const DialogueExample& ex, const ForwardOptions& opts = {}) const;

  /// Zeroes gradients that must never move parameters (the PAD embedding row).
  void mask_gradients();

 private:
  void build(Rng& rng);
  void bind();

  ModelConfig config_;
  VariantFlags flags_;
  ParamStore params_;

  Tensor embedding_;
  nn::LstmParams encoder_;
  nn::LstmParams decoder_;
  nn::AttentionParams context_attn_;
  nn::AttentionParams fact_token_attn_;
  nn::AttentionParams fact_level_attn_;
  nn::AttentionParams fusion_attn_;
  nn::AttentionParams memory_attn_;
  nn::AttentionParams fact_value_attn_;
  Tensor key_proj_;
  Tensor value_proj_;
  Tensor out_weight_;
  Tensor out_bias_;
  Tensor switch_context_;
  Tensor switch_hidden_;
  Tensor switch_input_;
  Tensor switch_bias_;
};

/// Loss of the ground-truth step probabilities: -(1/|y|) sum_t log max(p, 1e-12).
Tensor sequence_nll(Tape& tape, const std::vector<StepDists>& steps, const std::vector<TokenId>& targets);

// Entry points named after the model families. Each checks the variant.
std::pair<StepDists, DecoderState> decode_step(Tape& tape, const Model& model, const EncodedExample& enc,
                                               const DecoderState& state, TokenId prev);
ForwardResult deepcopy_forward(Tape& tape, const Model& model, const DialogueExample& ex);
ForwardResult multiseq2seq_forward(Tape& tape, const Model& model, const DialogueExample& ex);

}  // namespace deepcopy
