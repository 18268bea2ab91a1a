#include "deepcopy/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "deepcopy/eval.hpp"

namespace deepcopy::training {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::size_t parse_count(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    if (!value.empty() && value[0] == '-') throw std::invalid_argument("negative");
    v = std::stoull(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != value.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
  return static_cast<std::size_t>(v);
}

double parse_real(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != value.size() || !std::isfinite(v)) {
    throw ConfigError(key + ": expected a number, got '" + value + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + value + "'");
}

std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "batch_size", "lr",        "clip_norm",      "max_epochs", "max_steps", "seed",
      "variant",    "eval_every", "d_emb",         "d_hidden",   "vocab_max", "beam_width",
      "max_decode_len", "init_range", "stop_loss", "oracle",     "train_file", "valid_file",
      "test_file"};
  return keys;
}

void set_config_value(TrainConfig& c, const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  if (key == "batch_size") c.batch_size = parse_count(key, value);
  else if (key == "lr") c.lr = parse_real(key, value);
  else if (key == "clip_norm") c.clip_norm = parse_real(key, value);
  else if (key == "max_epochs") c.max_epochs = parse_count(key, value);
  else if (key == "max_steps") c.max_steps = parse_count(key, value);
  else if (key == "seed") c.seed = parse_count(key, value);
  else if (key == "variant") {
    try {
      c.variant = parse_variant(value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("variant: ") + e.what());
    }
  } else if (key == "eval_every") c.eval_every = parse_count(key, value);
  else if (key == "d_emb") c.d_emb = parse_count(key, value);
  else if (key == "d_hidden") c.d_hidden = parse_count(key, value);
  else if (key == "vocab_max") c.vocab_max = parse_count(key, value);
  else if (key == "beam_width") c.beam_width = parse_count(key, value);
  else if (key == "max_decode_len") c.max_decode_len = parse_count(key, value);
  else if (key == "init_range") c.init_range = parse_real(key, value);
  else if (key == "stop_loss") c.stop_loss = parse_real(key, value);
  else if (key == "oracle") c.oracle = parse_bool(key, value);
  else if (key == "train_file") c.train_file = value;
  else if (key == "valid_file") c.valid_file = value;
  else if (key == "test_file") c.test_file = value;
  else {
    std::string valid;
    for (const auto& k : config_keys()) valid += (valid.empty() ? "" : ", ") + k;
    throw ConfigError("unknown config key '" + key + "'; valid keys: " + valid);
  }
}

TrainConfig parse_config(std::istream& in, const std::string& source) {
  TrainConfig c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    try {
      set_config_value(c, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse_config(in, path.string());
}

std::string config_text(const TrainConfig& c) {
  std::ostringstream out;
  out << "batch_size = " << c.batch_size << '\n'
      << "lr = " << fmt_real(c.lr) << '\n'
      << "clip_norm = " << fmt_real(c.clip_norm) << '\n'
      << "max_epochs = " << c.max_epochs << '\n'
      << "max_steps = " << c.max_steps << '\n'
      << "seed = " << c.seed << '\n'
      << "variant = " << label(c.variant) << '\n'
      << "eval_every = " << c.eval_every << '\n'
      << "d_emb = " << c.d_emb << '\n'
      << "d_hidden = " << c.d_hidden << '\n'
      << "vocab_max = " << c.vocab_max << '\n'
      << "beam_width = " << c.beam_width << '\n'
      << "max_decode_len = " << c.max_decode_len << '\n'
      << "init_range = " << fmt_real(c.init_range) << '\n'
      << "stop_loss = " << fmt_real(c.stop_loss) << '\n'
      << "oracle = " << (c.oracle ? "true" : "false") << '\n'
      << "train_file = " << c.train_file << '\n'
      << "valid_file = " << c.valid_file << '\n'
      << "test_file = " << c.test_file << '\n';
  return out.str();
}

std::string config_hash(const TrainConfig& c) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : config_text(c)) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void validate(const TrainConfig& c) {
  auto positive = [](const char* key, double v) {
    if (!(v > 0)) throw ConfigError(std::string(key) + " must be positive");
  };
  positive("batch_size", static_cast<double>(c.batch_size));
  positive("clip_norm", c.clip_norm);
  positive("eval_every", static_cast<double>(c.eval_every));
  positive("d_emb", static_cast<double>(c.d_emb));
  positive("d_hidden", static_cast<double>(c.d_hidden));
  positive("vocab_max", static_cast<double>(c.vocab_max));
  positive("beam_width", static_cast<double>(c.beam_width));
  positive("max_decode_len", static_cast<double>(c.max_decode_len));
  positive("init_range", c.init_range);
  if (c.lr < 0) throw ConfigError("lr must be non-negative");
  if (c.max_epochs == 0 && c.max_steps == 0) throw ConfigError("one of max_epochs / max_steps must be positive");
  if (flags(c.variant).oracle && !c.oracle) {
    throw OracleError(std::string(label(c.variant)) +
                      " is an ORACLE variant (fact chosen with the ground-truth response); rerun with --oracle "
                      "to train or evaluate it");
  }
}

ModelConfig model_config(const TrainConfig& c, std::size_t vocab_size) {
  ModelConfig m;
  m.variant = c.variant;
  m.vocab_size = vocab_size;
  m.d_emb = c.d_emb;
  m.d_hidden = c.d_hidden;
  m.init_range = c.init_range;
  return m;
}

double batch_nll(const Model& model, const std::vector<DialogueExample>& batch, const ForwardOptions& opts) {
  if (batch.empty()) throw std::invalid_argument("batch_nll: empty batch");
  double total = 0.0;
  for (const auto& ex : batch) {
    Tape tape(false);
    total += model.forward(tape, ex, opts).loss.item();
  }
  return total / static_cast<double>(batch.size());
}

double global_grad_norm(const ParamStore& params) {
  double sq = 0.0;
  for (const auto& e : params.entries())
    for (double g : e.tensor.grad()) sq += g * g;
  return std::sqrt(sq);
}

double clip_gradients(ParamStore& params, double max_norm) {
  for (const auto& e : params.entries()) {
    for (double g : e.tensor.grad()) {
      if (!std::isfinite(g)) throw std::runtime_error("non-finite gradient in parameter '" + e.name + "'");
    }
  }
  const double norm = global_grad_norm(params);
  if (norm <= max_norm) return 1.0;
  const double scale = max_norm / norm;
  for (const auto& e : params.entries()) {
    ad::Tensor t = e.tensor;
    for (double& g : t.mutable_grad()) g *= scale;
  }
  return scale;
}

AdamState::AdamState(const ParamStore& params) {
  for (const auto& e : params.entries()) {
    first.emplace_back(e.tensor.size(), 0.0);
    second.emplace_back(e.tensor.size(), 0.0);
  }
}

void adam_step(ParamStore& params, AdamState& s, double lr) {
  if (s.first.size() != params.size()) throw std::invalid_argument("adam_step: state does not match parameters");
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    ad::Tensor t = params.entries()[k].tensor;
    auto w = t.mutable_data();
    auto g = t.grad();
    auto& m = s.first[k];
    auto& v = s.second[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
      v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + s.epsilon);
    }
  }
}

TrainResult train(const TrainConfig& config, Model& model, const std::vector<DialogueExample>& train_set,
                  const std::vector<DialogueExample>& valid_set, const StepCallback& on_step) {
  validate(config);
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  const std::size_t n = train_set.size();
  const std::size_t per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::size_t total = config.max_steps > 0 ? config.max_steps : config.max_epochs * per_epoch;

  ForwardOptions opts;
  opts.oracle = config.oracle;
  ParamStore& params = model.params();
  AdamState adam(params);
  Rng shuffle_rng(config.seed ^ 0x5DEECE66DULL);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = n;

  TrainResult result;
  for (std::size_t step = 1; step <= total; ++step) {
    if (cursor >= n) {
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      cursor = 0;
    }
    const std::size_t b = std::min(config.batch_size, n - cursor);
    params.zero_grad();
    double loss_sum = 0.0;
    for (std::size_t k = 0; k < b; ++k) {
      Tape tape;
      const ForwardResult fwd = model.forward(tape, train_set[order[cursor + k]], opts);
      loss_sum += fwd.loss.item();
      tape.backward(ad::affine(tape, fwd.loss, 1.0 / static_cast<double>(b)));
    }
    cursor += b;
    model.mask_gradients();
    clip_gradients(params, config.clip_norm);
    adam_step(params, adam, config.lr);

    LogRow row;
    row.step = step;
    row.train_loss = loss_sum / static_cast<double>(b);
    const bool stopping = step == total || (config.stop_loss > 0 && row.train_loss < config.stop_loss);
    if (!valid_set.empty() && (step % config.eval_every == 0 || stopping)) {
      row.val_ppl = eval::perplexity(model, valid_set, opts);
      if (!result.best_val_ppl || *row.val_ppl < *result.best_val_ppl) {
        result.best_val_ppl = row.val_ppl;
        result.best_step = step;
        result.best_params = params.clone();
      }
    }
    result.history.push_back(row);
    result.steps = step;
    if (on_step) on_step(row);
    if (stopping) break;
  }
  if (!result.best_val_ppl) {
    result.best_params = params.clone();
    result.best_step = result.steps;
  }
  return result;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<LogRow>& history) {
  std::ofstream out(path);
  if (!out) throw corpus::DataError("cannot write " + path.string());
  out << "step,train_loss,val_ppl\n";
  char buf[128];
  for (const auto& r : history) {
    if (r.val_ppl) {
      std::snprintf(buf, sizeof buf, "%zu,%.9f,%.9f\n", r.step, r.train_loss, *r.val_ppl);
    } else {
      std::snprintf(buf, sizeof buf, "%zu,%.9f,\n", r.step, r.train_loss);
    }
    out << buf;
  }
}

}  // namespace deepcopy::training
