// Decoding (beam search, greedy) and the automatic metrics: perplexity,
// corpus BLEU, ROUGE-L, CIDEr and distinct-n.
#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "deepcopy/model.hpp"

namespace deepcopy::eval {

using corpus::Tokens;

struct Hypothesis {
  std::vector<TokenId> tokens;  // extended ids, EOS excluded
  double log_prob = 0.0;        // sum over emitted tokens, EOS included when finished
  double score = 0.0;           // log_prob / emitted length
  bool finished = false;        // false: max_len reached without EOS
};

/// Beam search over the model's extended output space. Finished hypotheses
/// are ranked by length-normalised log-probability; ties go to the
/// lexicographically smaller id sequence. PAD and SOS are never emitted.
Hypothesis beam_search(const Model& model, const DialogueExample& ex, std::size_t width, std::size_t max_len,
                       const ForwardOptions& opts = {});
/// Argmax at every step (lowest id on ties) until EOS or max_len.
Hypothesis greedy_decode(const Model& model, const DialogueExample& ex, std::size_t max_len,
                         const ForwardOptions& opts = {});

Tokens surface_tokens(const Hypothesis& hyp, const DialogueExample& ex, const corpus::Vocab& vocab);

/// exp(total NLL / total target tokens), teacher-forced.
double perplexity(const Model& model, const std::vector<DialogueExample>& data, const ForwardOptions& opts = {},
                  std::size_t jobs = 1);

double corpus_bleu(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references);
/// LCS F-measure with beta = 1.2, averaged over pairs, x100.
double rouge_l(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references);
/// Mean over pairs of the n = 1..4 average tf-idf cosine, x10. Document
/// frequencies come from the references; idf = log(N) - log(max(1, df)).
double cider(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references);

struct Distinct {
  double value = 0.0;
  bool too_short = false;  // every candidate shorter than n
};
Distinct distinct_n(const std::vector<Tokens>& candidates, std::size_t n);

struct MetricReport {
  std::string model;
  bool oracle = false;
  double perplexity = 0.0;
  double bleu = 0.0;
  double rouge_l = 0.0;
  double cider = 0.0;
  double distinct_2 = 0.0;
  double distinct_3 = 0.0;
  double distinct_4 = 0.0;
};

MetricReport score_outputs(const std::string& model, bool oracle, double ppl, const std::vector<Tokens>& candidates,
                           const std::vector<Tokens>& references);

void write_report_csv(std::ostream& out, const std::vector<MetricReport>& rows);
void write_report_table(std::ostream& out, const std::vector<MetricReport>& rows);

struct Generation {
  std::size_t id = 0;
  Hypothesis hypothesis;
  Tokens surface;
  std::vector<StepDists> steps;  // replayed along the hypothesis (EOS step included when finished)
};

/// Beam-decodes every example (in parallel when jobs > 1) and replays each
/// hypothesis to record per-step switch and attention values.
std::vector<Generation> generate(const Model& model, const std::vector<DialogueExample>& data, std::size_t width,
                                 std::size_t max_len, const ForwardOptions& opts = {}, std::size_t jobs = 1);

nlohmann::json generation_json(const Generation& g, const DialogueExample& ex, const corpus::Vocab& vocab);

}  // namespace deepcopy::eval
