#include "deepcopy/cli.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#include "deepcopy/eval.hpp"
#include "deepcopy/training.hpp"

namespace deepcopy::cli {

namespace fs = std::filesystem;
using training::ConfigError;
using training::TrainConfig;

std::string git_blob_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw corpus::DataError("cannot open " + path.string());
  const std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string header = "blob " + std::to_string(content.size()) + std::string(1, '\0');
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size());
  EVP_DigestUpdate(ctx, content.data(), content.size());
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

namespace {

struct Options {
  std::string command;
  std::string config_path;
  std::string out_dir = ".";
  std::string checkpoint;
  std::string split = "valid";
  std::string ids;
  std::size_t jobs = 1;
  bool oracle = false;
  std::vector<std::string> overrides;      // key=value
  std::map<std::string, std::string> flags;  // --<config key> value
  std::optional<std::size_t> width;
};

fs::path resolve_data(const std::string& file) {
  const fs::path p(file);
  if (fs::exists(p)) return p;
  if (const char* root = std::getenv("DEEPCOPY_DATA_DIR")) {
    const fs::path q = fs::path(root) / p;
    if (fs::exists(q)) return q;
  }
  return p;
}

TrainConfig resolve_config(const Options& o) {
  TrainConfig c = o.config_path.empty() ? TrainConfig{} : training::load_config(o.config_path);
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + kv + "' is not key=value");
    training::set_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  for (const auto& [k, v] : o.flags) training::set_config_value(c, k, v);
  if (o.width) c.beam_width = *o.width;
  if (o.oracle) c.oracle = true;
  return c;
}

void write_manifest(const fs::path& dir, const std::string& command, const TrainConfig& c,
                    const std::vector<fs::path>& inputs) {
  nlohmann::json data = nlohmann::json::object();
  for (const auto& p : inputs) data[p.filename().string()] = git_blob_hash(p);
  nlohmann::json m = {{"command", command},
                      {"config_hash", training::config_hash(c)},
                      {"config", training::config_text(c)},
                      {"seed", c.seed},
                      {"variant", label(c.variant)},
                      {"oracle", c.oracle},
                      {"data", data}};
  std::ofstream out(dir / ("manifest_" + command + ".json"));
  if (!out) throw corpus::DataError("cannot write manifest in " + dir.string());
  out << m.dump(2) << '\n';
}

fs::path require_file(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw corpus::DataError(std::string("missing ") + what + ": " + p.string());
  return p;
}

int cmd_prepare(const Options& o, const TrainConfig& c, std::ostream& out) {
  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  const fs::path train_path = require_file(resolve_data(c.train_file), "training data");
  const auto train_dialogues = corpus::parse_convai2(train_path);
  const corpus::Vocab vocab = corpus::build_vocab(train_dialogues, c.vocab_max);
  const auto tfidf = corpus::TfIdfModel::fit(train_dialogues);
  vocab.save(dir / "vocab.txt");

  std::vector<fs::path> inputs{train_path};
  auto emit = [&](const std::vector<corpus::Dialogue>& dialogues, const std::string& split) {
    const auto examples = corpus::build_examples(dialogues, vocab, tfidf);
    corpus::write_jsonl(dir / (split + ".jsonl"), examples, vocab);
    out << split << ": " << dialogues.size() << " dialogues, " << examples.size() << " examples\n";
  };
  emit(train_dialogues, "train");
  for (const auto& [file, split] : {std::pair{c.valid_file, std::string("valid")}, {c.test_file, "test"}}) {
    const fs::path p = resolve_data(file);
    if (!fs::exists(p)) {
      out << split << ": " << p.string() << " not found, skipped\n";
      continue;
    }
    inputs.push_back(p);
    emit(corpus::parse_convai2(p), split);
  }
  out << "vocabulary: " << vocab.size() << " tokens (" << corpus::Vocab::kReserved << " reserved)\n";
  write_manifest(dir, "prepare", c, inputs);
  return kOk;
}

std::vector<DialogueExample> load_split(const fs::path& dir, const std::string& split, const corpus::Vocab& vocab) {
  return corpus::read_jsonl(require_file(dir / (split + ".jsonl"), "prepared split (run prepare first)"), vocab);
}

nlohmann::json checkpoint_meta(const TrainConfig& c, const corpus::Vocab& vocab, std::size_t step) {
  return {{"variant", label(c.variant)}, {"vocab_size", vocab.size()}, {"d_emb", c.d_emb},
          {"d_hidden", c.d_hidden},      {"init_range", c.init_range}, {"oracle", c.oracle},
          {"config_hash", training::config_hash(c)}, {"step", step}};
}

int cmd_train(const Options& o, const TrainConfig& c, std::ostream& out) {
  training::validate(c);
  const fs::path dir(o.out_dir);
  const fs::path vocab_path = require_file(dir / "vocab.txt", "vocabulary (run prepare first)");
  const corpus::Vocab vocab = corpus::Vocab::load(vocab_path);
  const auto train_set = load_split(dir, "train", vocab);
  std::vector<DialogueExample> valid_set;
  std::vector<fs::path> inputs{vocab_path, dir / "train.jsonl"};
  if (fs::exists(dir / "valid.jsonl")) {
    valid_set = load_split(dir, "valid", vocab);
    inputs.push_back(dir / "valid.jsonl");
  }
  Rng rng(c.seed);
  Model model(training::model_config(c, vocab.size()), rng);
  out << "training " << label(c.variant) << (flags(c.variant).oracle ? " [ORACLE]" : "") << " on "
      << train_set.size() << " examples, " << model.params().num_values() << " parameters\n";
  const auto result = training::train(c, model, train_set, valid_set, [&](const training::LogRow& r) {
    if (r.val_ppl) out << "step " << r.step << " loss " << r.train_loss << " val_ppl " << *r.val_ppl << '\n';
  });
  training::write_loss_csv(dir / "loss.csv", result.history);
  save_checkpoint(dir / "last.ckpt", model.params(), checkpoint_meta(c, vocab, result.steps));
  save_checkpoint(dir / "best.ckpt", result.best_params, checkpoint_meta(c, vocab, result.best_step));
  out << "done: " << result.steps << " steps, best step " << result.best_step;
  if (result.best_val_ppl) out << " (val ppl " << *result.best_val_ppl << ")";
  out << '\n';
  write_manifest(dir, "train", c, inputs);
  return kOk;
}

Model load_model(const fs::path& path, const TrainConfig& c) {
  auto [params, meta] = load_checkpoint(require_file(path, "checkpoint"));
  ModelConfig mc;
  try {
    mc.variant = parse_variant(meta.at("variant").get<std::string>());
    mc.vocab_size = meta.at("vocab_size").get<std::size_t>();
    mc.d_emb = meta.at("d_emb").get<std::size_t>();
    mc.d_hidden = meta.at("d_hidden").get<std::size_t>();
    mc.init_range = meta.value("init_range", c.init_range);
  } catch (const std::exception& e) {
    throw corpus::DataError(path.string() + ": bad checkpoint metadata: " + e.what());
  }
  if (flags(mc.variant).oracle && !c.oracle) {
    throw OracleError(std::string(label(mc.variant)) +
                      " is an ORACLE variant (fact chosen with the ground-truth response); rerun with --oracle");
  }
  return Model(mc, std::move(params));
}

struct EvalInputs {
  fs::path dir;
  corpus::Vocab vocab;
  std::vector<DialogueExample> data;
  std::vector<fs::path> files;
};

EvalInputs load_eval_inputs(const Options& o) {
  EvalInputs in;
  in.dir = o.out_dir;
  const fs::path vocab_path = require_file(in.dir / "vocab.txt", "vocabulary (run prepare first)");
  in.vocab = corpus::Vocab::load(vocab_path);
  in.data = load_split(in.dir, o.split, in.vocab);
  if (in.data.empty()) throw corpus::DataError("split '" + o.split + "' has no examples");
  in.files = {vocab_path, in.dir / (o.split + ".jsonl")};
  return in;
}

fs::path checkpoint_path(const Options& o) {
  return o.checkpoint.empty() ? fs::path(o.out_dir) / "best.ckpt" : fs::path(o.checkpoint);
}

int cmd_evaluate(const Options& o, TrainConfig c, std::ostream& out) {
  const auto in = load_eval_inputs(o);
  const fs::path ckpt = checkpoint_path(o);
  const Model model = load_model(ckpt, c);
  c.variant = model.config().variant;
  ForwardOptions opts;
  opts.oracle = c.oracle;
  const double ppl = eval::perplexity(model, in.data, opts, o.jobs);
  const auto gens = eval::generate(model, in.data, c.beam_width, c.max_decode_len, opts, o.jobs);
  std::vector<corpus::Tokens> hyps, refs;
  for (std::size_t i = 0; i < gens.size(); ++i) {
    hyps.push_back(eval::surface_tokens(gens[i].hypothesis, in.data[i], in.vocab));
    refs.push_back(in.data[i].target_tokens);
  }
  const auto report = eval::score_outputs(std::string(label(c.variant)), flags(c.variant).oracle, ppl, hyps, refs);
  std::ofstream csv(in.dir / "metrics.csv");
  if (!csv) throw corpus::DataError("cannot write " + (in.dir / "metrics.csv").string());
  eval::write_report_csv(csv, {report});
  eval::write_report_table(out, {report});
  auto files = in.files;
  files.push_back(ckpt);
  write_manifest(in.dir, "evaluate", c, files);
  return kOk;
}

int cmd_generate(const Options& o, TrainConfig c, std::ostream& out) {
  const auto in = load_eval_inputs(o);
  const fs::path ckpt = checkpoint_path(o);
  const Model model = load_model(ckpt, c);
  c.variant = model.config().variant;
  ForwardOptions opts;
  opts.oracle = c.oracle;
  auto gens = eval::generate(model, in.data, c.beam_width, c.max_decode_len, opts, o.jobs);
  std::ofstream jsonl(in.dir / "generations.jsonl");
  if (!jsonl) throw corpus::DataError("cannot write " + (in.dir / "generations.jsonl").string());
  for (std::size_t i = 0; i < gens.size(); ++i) {
    gens[i].surface = eval::surface_tokens(gens[i].hypothesis, in.data[i], in.vocab);
    jsonl << eval::generation_json(gens[i], in.data[i], in.vocab).dump() << '\n';
  }
  out << "wrote " << gens.size() << " hypotheses to " << (in.dir / "generations.jsonl").string() << '\n';
  auto files = in.files;
  files.push_back(ckpt);
  write_manifest(in.dir, "generate", c, files);
  return kOk;
}

std::vector<std::size_t> parse_ids(const std::string& text, std::size_t limit) {
  std::vector<std::size_t> ids;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t pos = 0;
    std::size_t id = 0;
    try {
      id = std::stoul(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size() || pos == 0) throw ConfigError("--ids: '" + item + "' is not an example index");
    if (id >= limit) throw ConfigError("--ids: example " + item + " out of range (" + std::to_string(limit) + " examples)");
    ids.push_back(id);
  }
  if (ids.empty()) ids.push_back(0);
  return ids;
}

int cmd_inspect(const Options& o, TrainConfig c, std::ostream& out) {
  auto in = load_eval_inputs(o);
  const auto ids = parse_ids(o.ids, in.data.size());
  const fs::path ckpt = checkpoint_path(o);
  const Model model = load_model(ckpt, c);
  c.variant = model.config().variant;
  ForwardOptions opts;
  opts.oracle = c.oracle;
  std::vector<DialogueExample> chosen;
  for (auto id : ids) chosen.push_back(in.data[id]);
  auto gens = eval::generate(model, chosen, c.beam_width, c.max_decode_len, opts, o.jobs);
  std::ofstream jsonl(in.dir / "inspect.jsonl");
  if (!jsonl) throw corpus::DataError("cannot write " + (in.dir / "inspect.jsonl").string());
  for (std::size_t k = 0; k < gens.size(); ++k) {
    gens[k].id = ids[k];
    gens[k].surface = eval::surface_tokens(gens[k].hypothesis, chosen[k], in.vocab);
    const auto j = eval::generation_json(gens[k], chosen[k], in.vocab);
    jsonl << j.dump() << '\n';
    out << "example " << ids[k] << ": " << j["hypothesis"].get<std::string>() << '\n';
    for (const auto& s : j["steps"]) {
      out << "  " << std::left << std::setw(14) << s["token"].get<std::string>();
      out << " p_gen=" << (s["p_gen"].is_null() ? std::string("-") : std::to_string(s["p_gen"].get<double>()));
      out << " gamma=" << (s["gamma"].is_null() ? std::string("-") : std::to_string(s["gamma"].get<double>()));
      out << " beta=" << s["beta"].dump() << '\n';
    }
  }
  auto files = in.files;
  files.push_back(ckpt);
  write_manifest(in.dir, "inspect", c, files);
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Knowledge-grounded response generation with hierarchical pointer networks", "deepcopy"};
  app.require_subcommand(1);
  Options o;
  std::map<std::string, std::string> flag_values;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "Config file (key = value lines)");
    sub->add_option("--out-dir", o.out_dir, "Working directory for prepared data, checkpoints and reports");
    sub->add_option("--jobs", o.jobs, "Parallel decoding workers")->check(CLI::PositiveNumber);
    sub->add_option("--width", o.width, "Beam width (same as --beam_width)");
    sub->add_flag("--oracle", o.oracle, "Allow ORACLE variants (S2S-3, S2SC-3)");
    sub->add_option("--checkpoint", o.checkpoint, "Checkpoint to load (default <out-dir>/best.ckpt)");
    sub->add_option("--split", o.split, "Split to evaluate: train, valid or test");
    sub->add_option("--ids", o.ids, "Comma-separated example indices (inspect)");
    for (const auto& key : training::config_keys()) {
      if (key == "oracle") continue;
      sub->add_option("--" + key, flag_values[key], "Config override");
    }
    sub->add_option("overrides", o.overrides, "key=value config overrides");
  };
  for (const char* name : {"prepare", "train", "evaluate", "generate", "inspect"}) {
    auto* sub = app.add_subcommand(name, std::string(name) + " command");
    add_common(sub);
    sub->callback([&o, name] { o.command = name; });
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsageError;
  }
  for (auto& [k, v] : flag_values)
    if (!v.empty()) o.flags[k] = v;

  try {
    TrainConfig c = resolve_config(o);
    if (o.command == "prepare") return cmd_prepare(o, c, out);
    if (o.command == "train") return cmd_train(o, c, out);
    if (o.command == "evaluate") return cmd_evaluate(o, c, out);
    if (o.command == "generate") return cmd_generate(o, c, out);
    if (o.command == "inspect") return cmd_inspect(o, c, out);
    err << "unknown command\n";
    return kUsageError;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const OracleError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const corpus::DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace deepcopy::cli
