#include "deepcopy/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace deepcopy::corpus {

namespace {

bool is_punct(char c) {
  switch (c) {
    case '.': case ',': case '!': case '?': case ';': case ':': case '"': case '(': case ')':
      return true;
    default:
      return false;
  }
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_on(const std::string& s, const std::string& sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + sep.size();
  }
}

}  // namespace

Tokens tokenize(const std::string& text) {
  Tokens out;
  std::istringstream words(text);
  std::string w;
  while (words >> w) {
    std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return std::tolower(c); });
    std::size_t b = 0, e = w.size();
    Tokens tail;
    while (b < e && is_punct(w[b])) out.push_back(std::string(1, w[b++]));
    while (e > b && is_punct(w[e - 1])) tail.push_back(std::string(1, w[--e]));
    if (e > b) out.push_back(w.substr(b, e - b));
    out.insert(out.end(), tail.rbegin(), tail.rend());
  }
  return out;
}

std::string detokenize(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

// ---- parsing -------------------------------------------------------------

std::vector<Dialogue> parse_convai2(std::istream& in) {
  static const std::string kYour = "your persona:";
  static const std::string kPartner = "partner's persona:";

  std::vector<Dialogue> dialogues;
  std::string line;
  std::size_t lineno = 0;
  std::size_t dialogue_start = 0;
  long prev_number = 0;

  auto finish = [&] {
    if (dialogues.empty()) return;
    const Dialogue& d = dialogues.back();
    if (d.turns.empty()) throw DataError("dialogue has no turns", dialogue_start);
    if (d.persona.empty()) throw DataError("dialogue has no 'your persona' facts", dialogue_start);
  };

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;

    std::size_t pos = 0;
    while (pos < line.size() && std::isdigit(static_cast<unsigned char>(line[pos]))) ++pos;
    if (pos == 0 || pos >= line.size() || line[pos] != ' ') {
      throw DataError("expected '<number> <text>'", lineno);
    }
    const long number = std::stol(line.substr(0, pos));
    const std::string body = line.substr(pos + 1);

    if (number == 1 || dialogues.empty()) {
      if (number != 1) throw DataError("first line of a dialogue must be numbered 1", lineno);
      finish();
      dialogues.emplace_back();
      dialogue_start = lineno;
    } else if (number != prev_number + 1) {
      throw DataError("line number " + std::to_string(number) + " does not follow " +
                          std::to_string(prev_number),
                      lineno);
    }
    prev_number = number;
    Dialogue& d = dialogues.back();

    if (body.rfind(kYour, 0) == 0) {
      Tokens fact = tokenize(body.substr(kYour.size()));
      if (fact.empty()) throw DataError("empty persona fact", lineno);
      d.persona.push_back(std::move(fact));
      continue;
    }
    if (body.rfind(kPartner, 0) == 0) {
      Tokens fact = tokenize(body.substr(kPartner.size()));
      if (fact.empty()) throw DataError("empty persona fact", lineno);
      d.partner_persona.push_back(std::move(fact));
      continue;
    }

    // "<utterance>\t<reply>" optionally followed by "\t<reward>\t<cand>|<cand>|..."
    const auto fields = split_on(body, "\t");
    if (fields.size() < 2) throw DataError("turn line has no tab-separated reply", lineno);
    TurnPair turn{tokenize(fields[0]), tokenize(fields[1])};
    if (turn.utterance.empty() || turn.reply.empty()) throw DataError("empty utterance or reply", lineno);
    d.turns.push_back(std::move(turn));
  }
  finish();
  return dialogues;
}

std::vector<Dialogue> parse_convai2(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return parse_convai2(in);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// ---- vocabulary ----------------------------------------------------------

const std::vector<std::string>& Vocab::reserved_tokens() {
  static const std::vector<std::string> tokens = {"<pad>", "<unk>", "<s>", "</s>", "<concat>"};
  return tokens;
}

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(const std::vector<std::string>& words) {
  for (const auto& t : reserved_tokens()) {
    token_to_id_.emplace(t, id_to_token_.size());
    id_to_token_.push_back(t);
  }
  for (const auto& w : words) {
    if (!token_to_id_.emplace(w, id_to_token_.size()).second) {
      throw DataError("duplicate vocabulary token '" + w + "'");
    }
    id_to_token_.push_back(w);
  }
}

TokenId Vocab::id(const std::string& token) const {
  const auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(TokenId id) const {
  if (id >= id_to_token_.size()) {
    throw std::out_of_range("vocab: id " + std::to_string(id) + " out of range for size " +
                            std::to_string(id_to_token_.size()));
  }
  return id_to_token_[id];
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t i = kReserved; i < id_to_token_.size(); ++i) out << id_to_token_[i] << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) words.push_back(line);
  }
  return Vocab(words);
}

Vocab build_vocab(const std::vector<Dialogue>& dialogues, std::size_t max_size) {
  if (max_size < 1) throw std::invalid_argument("build_vocab: max_size must be >= 1");
  std::unordered_map<std::string, std::size_t> slot;
  std::vector<std::pair<std::string, std::size_t>> counts;  // first-appearance order
  auto count = [&](const Tokens& tokens) {
    for (const auto& t : tokens) {
      auto [it, fresh] = slot.emplace(t, counts.size());
      if (fresh) counts.emplace_back(t, 0);
      ++counts[it->second].second;
    }
  };
  for (const Dialogue& d : dialogues) {
    for (const auto& f : d.persona) count(f);
    for (const auto& f : d.partner_persona) count(f);
    for (const auto& t : d.turns) {
      count(t.utterance);
      count(t.reply);
    }
  }
  const auto& reserved = Vocab::reserved_tokens();
  std::erase_if(counts, [&](const auto& c) {
    return std::find(reserved.begin(), reserved.end(), c.first) != reserved.end();
  });
  std::stable_sort(counts.begin(), counts.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (counts.size() > max_size) counts.resize(max_size);
  std::vector<std::string> words;
  words.reserve(counts.size());
  for (auto& c : counts) words.push_back(std::move(c.first));
  return Vocab(words);
}

// ---- examples ------------------------------------------------------------

std::optional<TokenId> DialogueExample::ext_id(const std::string& token) const {
  const auto it = std::find(ext_vocab.begin(), ext_vocab.end(), token);
  if (it == ext_vocab.end()) return std::nullopt;
  return vocab_size + static_cast<std::size_t>(it - ext_vocab.begin());
}

std::string DialogueExample::surface(TokenId id, const Vocab& vocab) const {
  if (id < vocab_size) return vocab.token(id);
  if (id - vocab_size >= ext_vocab.size()) {
    throw std::out_of_range("example: extended id " + std::to_string(id) + " out of range");
  }
  return ext_vocab[id - vocab_size];
}

namespace {

Tokens context_tokens(const Dialogue& d, std::size_t turn) {
  if (turn == 0) return d.turns[0].utterance;
  Tokens ctx = d.turns[turn - 1].reply;
  ctx.push_back(Vocab::reserved_tokens()[Vocab::kConcat]);
  ctx.insert(ctx.end(), d.turns[turn].utterance.begin(), d.turns[turn].utterance.end());
  return ctx;
}

}  // namespace

std::vector<DialogueExample> make_examples(const Dialogue& dialogue, const Vocab& vocab) {
  std::vector<DialogueExample> out;
  for (std::size_t t = 0; t < dialogue.turns.size(); ++t) {
    DialogueExample ex;
    ex.vocab_size = vocab.size();
    auto encode_input = [&](const Tokens& tokens) {
      std::vector<TokenId> ids;
      ids.reserve(tokens.size());
      for (const auto& tok : tokens) {
        if (vocab.contains(tok)) {
          ids.push_back(vocab.id(tok));
        } else if (auto e = ex.ext_id(tok)) {
          ids.push_back(*e);
        } else {
          ex.ext_vocab.push_back(tok);
          ids.push_back(vocab.size() + ex.ext_vocab.size() - 1);
        }
      }
      return ids;
    };
    ex.context = encode_input(context_tokens(dialogue, t));
    for (const auto& fact : dialogue.persona) ex.facts.push_back(encode_input(fact));

    ex.target_tokens = dialogue.turns[t].reply;
    for (const auto& tok : ex.target_tokens) {
      if (vocab.contains(tok)) {
        ex.target.push_back(vocab.id(tok));
      } else {
        ex.target.push_back(ex.ext_id(tok).value_or(Vocab::kUnk));
      }
    }
    ex.target.push_back(Vocab::kEos);
    out.push_back(std::move(ex));
  }
  return out;
}

// ---- tf-idf --------------------------------------------------------------

TfIdfModel TfIdfModel::fit(const std::vector<Tokens>& documents) {
  TfIdfModel m;
  m.num_docs_ = documents.size();
  for (const auto& doc : documents) {
    Tokens uniq = doc;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    for (const auto& t : uniq) ++m.df_[t];
  }
  return m;
}

TfIdfModel TfIdfModel::fit(const std::vector<Dialogue>& dialogues) {
  std::vector<Tokens> docs;
  for (const auto& d : dialogues) docs.insert(docs.end(), d.persona.begin(), d.persona.end());
  return fit(docs);
}

double TfIdfModel::idf(const std::string& token) const {
  const auto it = df_.find(token);
  const double df = it == df_.end() ? 0.0 : static_cast<double>(it->second);
  return std::log((static_cast<double>(num_docs_) + 1.0) / (df + 1.0)) + 1.0;
}

std::map<std::string, double> TfIdfModel::vector(const Tokens& tokens) const {
  std::map<std::string, double> v;
  for (const auto& t : tokens) v[t] += 1.0;
  for (auto& [t, w] : v) w *= idf(t);
  return v;
}

double TfIdfModel::cosine(const Tokens& a, const Tokens& b) const {
  const auto va = vector(a);
  const auto vb = vector(b);
  double dotp = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [t, w] : va) {
    na += w * w;
    if (auto it = vb.find(t); it != vb.end()) dotp += w * it->second;
  }
  for (const auto& [t, w] : vb) nb += w * w;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dotp / (std::sqrt(na) * std::sqrt(nb));
}

FactSelection select_fact_tfidf(const std::vector<Tokens>& facts, const Tokens& reference,
                                const TfIdfModel& model) {
  if (facts.empty()) throw std::invalid_argument("select_fact_tfidf: no facts");
  FactSelection sel;
  if (reference.empty()) {
    sel.empty_reference = true;
    return sel;
  }
  double best = -1.0;
  for (std::size_t i = 0; i < facts.size(); ++i) {
    const double s = model.cosine(facts[i], reference);
    if (s > best) {
      best = s;
      sel.index = i;
    }
  }
  return sel;
}

void assign_best_facts(std::vector<DialogueExample>& examples, const Dialogue& dialogue,
                       const TfIdfModel& model) {
  const std::string& concat = Vocab::reserved_tokens()[Vocab::kConcat];
  for (std::size_t t = 0; t < examples.size() && t < dialogue.turns.size(); ++t) {
    Tokens ctx = context_tokens(dialogue, t);
    std::erase(ctx, concat);
    examples[t].best_fact_by_context = select_fact_tfidf(dialogue.persona, ctx, model).index;
    examples[t].best_fact_by_response =
        select_fact_tfidf(dialogue.persona, dialogue.turns[t].reply, model).index;
  }
}

std::vector<DialogueExample> build_examples(const std::vector<Dialogue>& dialogues, const Vocab& vocab,
                                            const TfIdfModel& model) {
  std::vector<DialogueExample> out;
  for (const auto& d : dialogues) {
    auto exs = make_examples(d, vocab);
    assign_best_facts(exs, d, model);
    std::move(exs.begin(), exs.end(), std::back_inserter(out));
  }
  return out;
}

// ---- JSONL ---------------------------------------------------------------

nlohmann::json example_to_json(const DialogueExample& ex, const Vocab& vocab) {
  nlohmann::json ext = nlohmann::json::object();
  for (std::size_t i = 0; i < ex.ext_vocab.size(); ++i) ext[ex.ext_vocab[i]] = vocab.size() + i;
  return {
      {"context", ex.context},
      {"facts", ex.facts},
      {"target", ex.target},
      {"ext_vocab", ext},
      {"target_text", detokenize(ex.target_tokens)},
      {"best_fact_by_context", ex.best_fact_by_context},
      {"best_fact_by_response", ex.best_fact_by_response},
  };
}

DialogueExample example_from_json(const nlohmann::json& j, const Vocab& vocab) {
  DialogueExample ex;
  ex.vocab_size = vocab.size();
  ex.context = j.at("context").get<std::vector<TokenId>>();
  ex.facts = j.at("facts").get<std::vector<std::vector<TokenId>>>();
  ex.target = j.at("target").get<std::vector<TokenId>>();
  const auto& ext = j.at("ext_vocab");
  ex.ext_vocab.resize(ext.size());
  for (const auto& [tok, id] : ext.items()) {
    const auto k = id.get<std::size_t>();
    if (k < vocab.size() || k - vocab.size() >= ext.size()) {
      throw DataError("ext_vocab id " + std::to_string(k) + " for '" + tok + "' is not dense");
    }
    ex.ext_vocab[k - vocab.size()] = tok;
  }
  ex.target_tokens = tokenize(j.at("target_text").get<std::string>());
  ex.best_fact_by_context = j.value("best_fact_by_context", std::size_t{0});
  ex.best_fact_by_response = j.value("best_fact_by_response", std::size_t{0});
  const std::size_t limit = ex.extended_size();
  auto check = [&](const std::vector<TokenId>& ids, const char* field) {
    for (auto id : ids)
      if (id >= limit) throw DataError(std::string(field) + " id " + std::to_string(id) + " out of range");
  };
  check(ex.context, "context");
  for (const auto& f : ex.facts) check(f, "fact");
  check(ex.target, "target");
  return ex;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<DialogueExample>& examples,
                 const Vocab& vocab) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& ex : examples) out << example_to_json(ex, vocab).dump() << '\n';
}

std::vector<DialogueExample> read_jsonl(const std::filesystem::path& path, const Vocab& vocab) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<DialogueExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(example_from_json(nlohmann::json::parse(line), vocab));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ": " + e.what(), lineno);
    } catch (const DataError& e) {
      throw DataError(path.string() + ": " + e.what(), lineno);
    }
  }
  return out;
}

}  // namespace deepcopy::corpus
