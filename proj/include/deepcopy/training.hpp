// Teacher-forced NLL training with Adam and global-norm gradient clipping.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <istream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "deepcopy/model.hpp"

namespace deepcopy::training {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrainConfig {
  std::size_t batch_size = 32;
  double lr = 0.001;
  double clip_norm = 5.0;
  std::size_t max_epochs = 10;
  std::size_t max_steps = 0;  // 0: bounded by max_epochs only
  std::uint64_t seed = 1;
  Variant variant = Variant::kDeepCopy;
  std::size_t eval_every = 100;
  std::size_t d_emb = 100;
  std::size_t d_hidden = 100;
  std::size_t vocab_max = corpus::Vocab::kDefaultMaxSize;
  std::size_t beam_width = 4;
  std::size_t max_decode_len = 30;
  double init_range = nn::kInitRange;
  double stop_loss = 0.0;  // stop once a batch loss falls below this; 0 disables
  bool oracle = false;
  std::string train_file = "train.txt";
  std::string valid_file = "valid.txt";
  std::string test_file = "test.txt";
};

const std::vector<std::string>& config_keys();
/// Sets one key from its text form; unknown keys and bad values raise
/// ConfigError naming the key (and listing valid keys when unknown).
void set_config_value(TrainConfig& config, const std::string& key, const std::string& value);
/// "key = value" lines; '#' starts a comment.
TrainConfig parse_config(std::istream& in, const std::string& source = "<config>");
TrainConfig load_config(const std::filesystem::path& path);
/// Canonical "key = value" text, one line per key in config_keys() order.
std::string config_text(const TrainConfig& config);
/// FNV-1a 64 of config_text(), as 16 hex digits.
std::string config_hash(const TrainConfig& config);
void validate(const TrainConfig& config);

ModelConfig model_config(const TrainConfig& config, std::size_t vocab_size);

inline Tensor nll_loss(Tape& tape, const std::vector<StepDists>& steps, const std::vector<TokenId>& targets) {
  return sequence_nll(tape, steps, targets);
}

/// Mean NLL over a batch: the average of per-example sequence losses.
double batch_nll(const Model& model, const std::vector<DialogueExample>& batch, const ForwardOptions& opts = {});

/// Scales every gradient by max_norm / norm when the global L2 norm exceeds
/// max_norm. Returns the factor applied (1 when untouched).
double clip_gradients(ParamStore& params, double max_norm = 5.0);
double global_grad_norm(const ParamStore& params);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;

  explicit AdamState(const ParamStore& params);
};

void adam_step(ParamStore& params, AdamState& state, double lr);

struct LogRow {
  std::size_t step = 0;
  double train_loss = 0.0;
  std::optional<double> val_ppl;
};

struct TrainResult {
  std::vector<LogRow> history;
  ParamStore best_params;
  std::size_t best_step = 0;
  std::optional<double> best_val_ppl;
  std::size_t steps = 0;
};

using StepCallback = std::function<void(const LogRow&)>;

/// Deterministic given config.seed: seeded init, seeded epoch shuffles and a
/// fixed per-example gradient accumulation order.
TrainResult train(const TrainConfig& config, Model& model, const std::vector<DialogueExample>& train_set,
                  const std::vector<DialogueExample>& valid_set, const StepCallback& on_step = {});

void write_loss_csv(const std::filesystem::path& path, const std::vector<LogRow>& history);

}  // namespace deepcopy::training
