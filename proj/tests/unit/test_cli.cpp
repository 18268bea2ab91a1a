#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "deepcopy/cli.hpp"
#include "deepcopy/eval.hpp"
#include "deepcopy/training.hpp"

using namespace deepcopy;
namespace fs = std::filesystem;

namespace {

const fs::path kData = DEEPCOPY_TEST_DATA;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "deepcopy_cli_test" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Working copy of the committed micro run (evaluate writes into its out-dir).
fs::path micro_copy(const std::string& name) {
  const fs::path d = fresh_dir(name);
  for (const char* f : {"vocab.txt", "valid.jsonl", "best.ckpt"}) fs::copy_file(kData / "micro" / f, d / f);
  return d;
}

const std::string kMicroCfg = (kData / "micro" / "micro.cfg").string();

int shell(const std::string& cmd) {
  const int status = std::system((cmd + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct DataDir {
  DataDir() { setenv("DEEPCOPY_DATA_DIR", kData.c_str(), 1); }
  ~DataDir() { unsetenv("DEEPCOPY_DATA_DIR"); }
};

}  // namespace

TEST_CASE("help succeeds and usage errors exit with 1") {
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"train", "--help"}).code == 0);
  CHECK(run({}).code == cli::kUsageError);
  CHECK(run({"frobnicate"}).code == cli::kUsageError);
  CHECK(run({"train", "--no-such-flag", "1"}).code == cli::kUsageError);
  CHECK(run({"evaluate", "--jobs", "0"}).code == cli::kUsageError);
}

TEST_CASE("the installed binary reports the same exit codes") {
  const std::string bin = DEEPCOPY_BINARY;
  CHECK(shell(bin + " --help") == 0);
  CHECK(shell(bin + " train --variant S2SC-3") == 1);
  CHECK(shell(bin + " prepare --train_file /nonexistent/train.txt") == 2);
}

TEST_CASE("unknown config keys are rejected with the list of valid keys") {
  const auto r = run({"prepare", "learning_rate=0.1"});
  CHECK(r.code == cli::kUsageError);
  CHECK(r.err.find("learning_rate") != std::string::npos);
  CHECK(r.err.find("batch_size") != std::string::npos);
  const fs::path dir = fresh_dir("badcfg");
  std::ofstream(dir / "bad.cfg") << "lr = 0.1\nbatch = 4\n";
  const auto f = run({"train", "--config", (dir / "bad.cfg").string()});
  CHECK(f.code == cli::kUsageError);
  CHECK(f.err.find((dir / "bad.cfg").string() + ":2") != std::string::npos);
  CHECK(run({"train", "--config", (dir / "missing.cfg").string()}).code == cli::kUsageError);
}

TEST_CASE("ORACLE variants are refused without --oracle") {
  const auto r = run({"train", "--variant", "S2SC-3"});
  CHECK(r.code == cli::kUsageError);
  CHECK(r.err.find("ORACLE") != std::string::npos);
  CHECK(r.err.find("--oracle") != std::string::npos);
  CHECK(run({"train", "--variant", "S2S-3"}).code == cli::kUsageError);
}

TEST_CASE("missing inputs are data errors naming the path") {
  const fs::path dir = fresh_dir("missing");
  const auto p = run({"prepare", "--out-dir", dir.string(), "--train_file", (dir / "nope.txt").string()});
  CHECK(p.code == cli::kDataError);
  CHECK(p.err.find("nope.txt") != std::string::npos);
  const auto t = run({"train", "--out-dir", dir.string()});
  CHECK(t.code == cli::kDataError);
  CHECK(t.err.find("vocab.txt") != std::string::npos);
  const auto e = run({"evaluate", "--out-dir", micro_copy("missing_ckpt").string(), "--checkpoint", "/nonexistent.ckpt"});
  CHECK(e.code == cli::kDataError);
  CHECK(e.err.find("/nonexistent.ckpt") != std::string::npos);
}

TEST_CASE("evaluate on the committed micro-checkpoint reproduces the golden CSV") {
  const fs::path dir = micro_copy("golden");
  const auto r = run({"evaluate", "--config", kMicroCfg, "--out-dir", dir.string()});
  REQUIRE(r.code == 0);
  CHECK(slurp(dir / "metrics.csv") == slurp(kData / "micro" / "metrics.golden.csv"));
  CHECK(r.out.find("DeepCopy") != std::string::npos);
  CHECK(r.out.find("Distinct-2/3/4") != std::string::npos);
  // parallel decoding changes nothing
  REQUIRE(run({"evaluate", "--config", kMicroCfg, "--out-dir", dir.string(), "--jobs", "3"}).code == 0);
  CHECK(slurp(dir / "metrics.csv") == slurp(kData / "micro" / "metrics.golden.csv"));
}

TEST_CASE("generate with width 1 equals greedy decoding") {
  const fs::path dir = micro_copy("greedy");
  REQUIRE(run({"generate", "--config", kMicroCfg, "--out-dir", dir.string(), "--width", "1"}).code == 0);
  const corpus::Vocab vocab = corpus::Vocab::load(dir / "vocab.txt");
  const auto data = corpus::read_jsonl(dir / "valid.jsonl", vocab);
  auto [params, meta] = load_checkpoint(dir / "best.ckpt");
  ModelConfig mc;
  mc.variant = parse_variant(meta["variant"].get<std::string>());
  mc.vocab_size = meta["vocab_size"];
  mc.d_emb = meta["d_emb"];
  mc.d_hidden = meta["d_hidden"];
  const Model model(mc, std::move(params));
  std::ifstream in(dir / "generations.jsonl");
  std::size_t i = 0;
  for (std::string line; std::getline(in, line); ++i) {
    const auto j = nlohmann::json::parse(line);
    const auto g = eval::greedy_decode(model, data.at(i), 12);
    CHECK(j["hypothesis"] == corpus::detokenize(eval::surface_tokens(g, data[i], vocab)));
    CHECK(j["id"] == i);
  }
  CHECK(i == data.size());
}

TEST_CASE("an end-to-end run writes manifests with content hashes") {
  DataDir env;
  const fs::path dir = fresh_dir("e2e");
  const std::vector<std::string> common{"--config", kMicroCfg, "--out-dir", dir.string()};
  auto with = [&](std::vector<std::string> head, std::vector<std::string> tail = {}) {
    head.insert(head.end(), common.begin(), common.end());
    head.insert(head.end(), tail.begin(), tail.end());
    return run(head);
  };
  REQUIRE(with({"prepare"}).code == 0);
  for (const char* f : {"vocab.txt", "train.jsonl", "valid.jsonl", "test.jsonl"}) CHECK(fs::exists(dir / f));

  // flags beat positional overrides, which beat the config file
  REQUIRE(with({"train"}, {"max_steps=5", "seed=9", "--seed", "4"}).code == 0);
  for (const char* f : {"loss.csv", "best.ckpt", "last.ckpt", "manifest_train.json"}) CHECK(fs::exists(dir / f));
  const auto m = nlohmann::json::parse(slurp(dir / "manifest_train.json"));
  CHECK(m["seed"] == 4);
  CHECK(m["variant"] == "DeepCopy");
  CHECK(m["command"] == "train");
  CHECK(m["config"].get<std::string>().find("max_steps = 5\n") != std::string::npos);
  CHECK(m["config_hash"].get<std::string>().size() == 16);
  CHECK(m["data"]["train.jsonl"] == cli::git_blob_hash(dir / "train.jsonl"));
  const std::string loss = slurp(dir / "loss.csv");
  CHECK(std::count(loss.begin(), loss.end(), '\n') == 6);

  const auto prep = nlohmann::json::parse(slurp(dir / "manifest_prepare.json"));
  CHECK(prep["data"]["overfit8.txt"] == cli::git_blob_hash(kData / "overfit8.txt"));

  REQUIRE(with({"evaluate"}, {"--split", "test"}).code == 0);
  const auto ev = nlohmann::json::parse(slurp(dir / "manifest_evaluate.json"));
  CHECK(ev["data"].contains("test.jsonl"));
  CHECK(ev["data"].contains("best.ckpt"));

  const auto ins = with({"inspect"}, {"--ids", "0,2"});
  REQUIRE(ins.code == 0);
  CHECK(ins.out.find("example 2") != std::string::npos);
  CHECK(ins.out.find("p_gen=") != std::string::npos);
  CHECK(ins.out.find("gamma=") != std::string::npos);
  CHECK(ins.out.find("beta=[") != std::string::npos);
  std::ifstream in(dir / "inspect.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("steps"));
    ++lines;
  }
  CHECK(lines == 2);
  CHECK(with({"inspect"}, {"--ids", "99"}).code == cli::kUsageError);
  CHECK(with({"inspect"}, {"--ids", "x"}).code == cli::kUsageError);
}

TEST_CASE("the data directory variable is a fallback for relative paths") {
  const fs::path dir = fresh_dir("envless");
  CHECK(run({"prepare", "--config", kMicroCfg, "--out-dir", dir.string()}).code == cli::kDataError);
  DataDir env;
  CHECK(run({"prepare", "--config", kMicroCfg, "--out-dir", dir.string()}).code == 0);
}

TEST_CASE("git blob hash matches git hash-object") {
  const fs::path dir = fresh_dir("hash");
  std::ofstream(dir / "hello.txt") << "hello\n";
  CHECK(cli::git_blob_hash(dir / "hello.txt") == "ce013625030ba8dba906f756967f9e9ca394464a");
  std::ofstream(dir / "empty.txt");
  CHECK(cli::git_blob_hash(dir / "empty.txt") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}
