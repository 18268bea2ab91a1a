#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "deepcopy/eval.hpp"

namespace deepcopy::eval {

namespace {

struct Live {
  std::vector<TokenId> tokens;
  double log_prob = 0.0;
  DecoderState state;
};

struct Candidate {
  std::size_t parent;
  TokenId token;
  double log_prob;
};

bool emittable(TokenId id) { return id != corpus::Vocab::kPad && id != corpus::Vocab::kSos; }

double normalized(double log_prob, std::size_t len) { return log_prob / static_cast<double>(std::max<std::size_t>(len, 1)); }

// Better by score, then by lexicographically smaller sequence.
bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

template <typename F>
void parallel_for(std::size_t n, std::size_t jobs, F&& body) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(jobs);
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += jobs) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

Hypothesis beam_search(const Model& model, const DialogueExample& ex, std::size_t width, std::size_t max_len,
                       const ForwardOptions& opts) {
  if (width == 0 || max_len == 0) throw std::invalid_argument("beam_search: width and max_len must be positive");
  Tape tape(false);
  const EncodedExample enc = model.encode(tape, ex, opts);
  std::vector<Live> live{{{}, 0.0, model.initial_state(enc, opts)}};
  std::vector<Hypothesis> finished;

  for (std::size_t t = 0; t < max_len && !live.empty(); ++t) {
    std::vector<Candidate> cands;
    std::vector<DecoderState> next_states;
    for (std::size_t k = 0; k < live.size(); ++k) {
      const TokenId prev = live[k].tokens.empty() ? corpus::Vocab::kSos : live[k].tokens.back();
      auto [dists, next] = model.step(tape, enc, live[k].state, prev);
      next_states.push_back(std::move(next));
      const auto p = dists.p_final.data();
      for (TokenId id = 0; id < p.size(); ++id) {
        if (!emittable(id) || !(p[id] > 0.0)) continue;
        cands.push_back({k, id, live[k].log_prob + std::log(p[id])});
      }
    }
    auto ranks_before = [&](const Candidate& a, const Candidate& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      const auto& sa = live[a.parent].tokens;
      const auto& sb = live[b.parent].tokens;
      if (sa != sb) return sa < sb;
      return a.token < b.token;
    };
    const std::size_t keep = std::min(width, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), ranks_before);
    cands.resize(keep);

    std::vector<Live> next_live;
    for (const Candidate& c : cands) {
      std::vector<TokenId> seq = live[c.parent].tokens;
      if (c.token == corpus::Vocab::kEos) {
        Hypothesis h;
        h.tokens = std::move(seq);
        h.log_prob = c.log_prob;
        h.score = normalized(c.log_prob, h.tokens.size() + 1);
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        seq.push_back(c.token);
        next_live.push_back({std::move(seq), c.log_prob, next_states[c.parent]});
      }
    }
    live = std::move(next_live);
    if (finished.size() >= width) break;
  }

  std::vector<Hypothesis> pool = std::move(finished);
  if (pool.empty()) {
    for (auto& l : live) {
      Hypothesis h;
      h.tokens = std::move(l.tokens);
      h.log_prob = l.log_prob;
      h.score = normalized(l.log_prob, h.tokens.size());
      h.finished = false;
      pool.push_back(std::move(h));
    }
  }
  if (pool.empty()) throw std::runtime_error("beam_search: no hypothesis has non-zero probability");
  return *std::min_element(pool.begin(), pool.end(), better);
}

Hypothesis greedy_decode(const Model& model, const DialogueExample& ex, std::size_t max_len,
                         const ForwardOptions& opts) {
  Tape tape(false);
  const EncodedExample enc = model.encode(tape, ex, opts);
  DecoderState state = model.initial_state(enc, opts);
  Hypothesis h;
  TokenId prev = corpus::Vocab::kSos;
  for (std::size_t t = 0; t < max_len; ++t) {
    auto [dists, next] = model.step(tape, enc, state, prev);
    const auto p = dists.p_final.data();
    TokenId best = corpus::Vocab::kUnk;
    double best_p = -1.0;
    for (TokenId id = 0; id < p.size(); ++id) {
      if (emittable(id) && p[id] > best_p) {
        best = id;
        best_p = p[id];
      }
    }
    h.log_prob += std::log(best_p);
    if (best == corpus::Vocab::kEos) {
      h.finished = true;
      break;
    }
    h.tokens.push_back(best);
    state = std::move(next);
    prev = best;
  }
  h.score = normalized(h.log_prob, h.tokens.size() + (h.finished ? 1 : 0));
  return h;
}

Tokens surface_tokens(const Hypothesis& hyp, const DialogueExample& ex, const corpus::Vocab& vocab) {
  Tokens out;
  for (TokenId id : hyp.tokens) out.push_back(ex.surface(id, vocab));
  return out;
}

double perplexity(const Model& model, const std::vector<DialogueExample>& data, const ForwardOptions& opts,
                  std::size_t jobs) {
  if (data.empty()) throw std::invalid_argument("perplexity: empty dataset");
  std::vector<double> nll(data.size());
  std::vector<std::size_t> count(data.size());
  parallel_for(data.size(), jobs, [&](std::size_t i) {
    Tape tape(false);
    const auto r = model.forward(tape, data[i], opts);
    count[i] = r.targets.size();
    nll[i] = r.loss.item() * static_cast<double>(count[i]);
  });
  double total = 0.0;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    total += nll[i];
    tokens += count[i];
  }
  return std::exp(total / static_cast<double>(tokens));
}

std::vector<Generation> generate(const Model& model, const std::vector<DialogueExample>& data, std::size_t width,
                                 std::size_t max_len, const ForwardOptions& opts, std::size_t jobs) {
  std::vector<Generation> out(data.size());
  parallel_for(data.size(), jobs, [&](std::size_t i) {
    Generation& g = out[i];
    g.id = i;
    g.hypothesis = beam_search(model, data[i], width, max_len, opts);
    Tape tape(false);
    const EncodedExample enc = model.encode(tape, data[i], opts);
    DecoderState state = model.initial_state(enc, opts);
    std::vector<TokenId> replay = g.hypothesis.tokens;
    if (g.hypothesis.finished) replay.push_back(corpus::Vocab::kEos);
    TokenId prev = corpus::Vocab::kSos;
    for (TokenId y : replay) {
      auto [dists, next] = model.step(tape, enc, state, prev);
      g.steps.push_back(std::move(dists));
      state = std::move(next);
      prev = y;
    }
  });
  return out;
}

namespace {

nlohmann::json values(const Tensor& t) {
  if (!t.defined()) return nullptr;
  if (t.size() == 1 && t.rank() == 0) return t.item();
  return std::vector<double>(t.data().begin(), t.data().end());
}

std::string text_of(const std::vector<TokenId>& ids, const DialogueExample& ex, const corpus::Vocab& vocab) {
  Tokens toks;
  for (TokenId id : ids) toks.push_back(ex.surface(id, vocab));
  return corpus::detokenize(toks);
}

}  // namespace

nlohmann::json generation_json(const Generation& g, const DialogueExample& ex, const corpus::Vocab& vocab) {
  nlohmann::json facts = nlohmann::json::array();
  for (const auto& f : ex.facts) facts.push_back(text_of(f, ex, vocab));
  nlohmann::json steps = nlohmann::json::array();
  std::vector<TokenId> emitted = g.hypothesis.tokens;
  if (g.hypothesis.finished) emitted.push_back(corpus::Vocab::kEos);
  for (std::size_t t = 0; t < g.steps.size(); ++t) {
    const StepDists& s = g.steps[t];
    steps.push_back({{"token", ex.surface(emitted[t], vocab)},
                     {"p_gen", values(s.p_gen)},
                     {"gamma", values(s.gamma)},
                     {"beta", values(s.fact_weights)}});
  }
  return {{"id", g.id},
          {"context", text_of(ex.context, ex, vocab)},
          {"facts", facts},
          {"reference", corpus::detokenize(ex.target_tokens)},
          {"hypothesis", corpus::detokenize(g.surface.empty() ? surface_tokens(g.hypothesis, ex, vocab) : g.surface)},
          {"finished", g.hypothesis.finished},
          {"score", g.hypothesis.score},
          {"steps", steps}};
}

}  // namespace deepcopy::eval
