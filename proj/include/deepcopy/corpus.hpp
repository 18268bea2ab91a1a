// ConvAI2 / PersonaChat parsing, vocabulary, example assembly and tf-idf
// fact selection.
#pragma once

#include <cstddef>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace deepcopy::corpus {

using TokenId = std::size_t;
using Tokens = std::vector<std::string>;

/// Raised for unreadable or malformed data files. Carries the offending line
/// number when there is one.
class DataError : public std::runtime_error {
 public:
  DataError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Lowercases and splits on whitespace, peeling leading/trailing punctuation
/// off each word. Idempotent on already-tokenized ConvAI2 text.
Tokens tokenize(const std::string& text);
std::string detokenize(const Tokens& tokens);

struct TurnPair {
  Tokens utterance;  // partner
  Tokens reply;      // the persona holder
};

struct Dialogue {
  std::vector<Tokens> persona;          // "your persona:" facts
  std::vector<Tokens> partner_persona;  // "partner's persona:" facts; never used as model input
  std::vector<TurnPair> turns;
};

std::vector<Dialogue> parse_convai2(std::istream& in);
std::vector<Dialogue> parse_convai2(const std::filesystem::path& path);

class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kSos = 2;
  static constexpr TokenId kEos = 3;
  static constexpr TokenId kConcat = 4;
  static constexpr std::size_t kReserved = 5;
  static constexpr std::size_t kDefaultMaxSize = 18650;

  static const std::vector<std::string>& reserved_tokens();

  Vocab();
  /// Reserved tokens followed by `words` in order.
  explicit Vocab(const std::vector<std::string>& words);

  std::size_t size() const { return id_to_token_.size(); }
  TokenId id(const std::string& token) const;  // kUnk when absent
  bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return id_to_token_; }

  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

 private:
  std::unordered_map<std::string, TokenId> token_to_id_;
  std::vector<std::string> id_to_token_;
};

Vocab build_vocab(const std::vector<Dialogue>& dialogues, std::size_t max_size = Vocab::kDefaultMaxSize);

struct DialogueExample {
  std::vector<TokenId> context;             // extended ids
  std::vector<std::vector<TokenId>> facts;  // extended ids
  std::vector<TokenId> target;              // extended ids where available, then kEos
  std::vector<std::string> ext_vocab;       // ext_vocab[i] has id vocab_size + i
  std::size_t vocab_size = 0;
  Tokens target_tokens;                     // surface reference, no EOS
  std::size_t best_fact_by_context = 0;
  std::size_t best_fact_by_response = 0;

  std::size_t extended_size() const { return vocab_size + ext_vocab.size(); }
  std::optional<TokenId> ext_id(const std::string& token) const;
  /// Surface form of an extended id.
  std::string surface(TokenId id, const Vocab& vocab) const;
};

/// One example per reply; context is the previous two utterances joined by
/// CONCAT, facts are the replying side's persona.
std::vector<DialogueExample> make_examples(const Dialogue& dialogue, const Vocab& vocab);

class TfIdfModel {
 public:
  /// Document frequencies over every persona fact of the given dialogues.
  static TfIdfModel fit(const std::vector<Dialogue>& dialogues);
  static TfIdfModel fit(const std::vector<Tokens>& documents);

  /// log((N + 1) / (df + 1)) + 1
  double idf(const std::string& token) const;
  std::size_t num_documents() const { return num_docs_; }
  std::map<std::string, double> vector(const Tokens& tokens) const;
  double cosine(const Tokens& a, const Tokens& b) const;

 private:
  std::unordered_map<std::string, std::size_t> df_;
  std::size_t num_docs_ = 0;
};

struct FactSelection {
  std::size_t index = 0;
  bool empty_reference = false;
};

/// Argmax cosine similarity, ties to the lowest index.
FactSelection select_fact_tfidf(const std::vector<Tokens>& facts, const Tokens& reference,
                                const TfIdfModel& model);

/// Fills best_fact_by_context / best_fact_by_response on each example.
void assign_best_facts(std::vector<DialogueExample>& examples, const Dialogue& dialogue,
                       const TfIdfModel& model);

/// Examples plus tf-idf selections for every dialogue, in file order.
std::vector<DialogueExample> build_examples(const std::vector<Dialogue>& dialogues, const Vocab& vocab,
                                            const TfIdfModel& model);

nlohmann::json example_to_json(const DialogueExample& ex, const Vocab& vocab);
DialogueExample example_from_json(const nlohmann::json& j, const Vocab& vocab);
void write_jsonl(const std::filesystem::path& path, const std::vector<DialogueExample>& examples,
                 const Vocab& vocab);
std::vector<DialogueExample> read_jsonl(const std::filesystem::path& path, const Vocab& vocab);

}  // namespace deepcopy::corpus
