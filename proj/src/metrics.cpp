#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <stdexcept>

#include "deepcopy/eval.hpp"

namespace deepcopy::eval {

namespace {

using NgramCounts = std::map<Tokens, double>;

NgramCounts ngrams(const Tokens& toks, std::size_t n) {
  NgramCounts out;
  if (toks.size() < n) return out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) out[Tokens(toks.begin() + i, toks.begin() + i + n)] += 1.0;
  return out;
}

void check_pairs(const char* metric, const std::vector<Tokens>& c, const std::vector<Tokens>& r) {
  if (c.empty()) throw std::invalid_argument(std::string(metric) + ": empty candidate set");
  if (c.size() != r.size()) {
    throw std::invalid_argument(std::string(metric) + ": " + std::to_string(c.size()) + " candidates but " +
                                std::to_string(r.size()) + " references");
  }
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

double corpus_bleu(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references) {
  check_pairs("corpus_bleu", candidates, references);
  constexpr std::size_t kMaxOrder = 4;
  double matches[kMaxOrder] = {}, totals[kMaxOrder] = {};
  double cand_len = 0, ref_len = 0;
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    cand_len += static_cast<double>(candidates[s].size());
    ref_len += static_cast<double>(references[s].size());
    for (std::size_t n = 1; n <= kMaxOrder; ++n) {
      const auto c = ngrams(candidates[s], n);
      const auto r = ngrams(references[s], n);
      for (const auto& [g, count] : c) {
        totals[n - 1] += count;
        if (auto it = r.find(g); it != r.end()) matches[n - 1] += std::min(count, it->second);
      }
    }
  }
  double log_sum = 0.0;
  for (std::size_t n = 0; n < kMaxOrder; ++n) {
    if (matches[n] == 0.0 || totals[n] == 0.0) return 0.0;
    log_sum += std::log(matches[n] / totals[n]);
  }
  const double bp = cand_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  return 100.0 * bp * std::exp(log_sum / static_cast<double>(kMaxOrder));
}

double rouge_l(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references) {
  check_pairs("rouge_l", candidates, references);
  constexpr double kBeta2 = 1.2 * 1.2;
  double total = 0.0;
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    const auto& c = candidates[s];
    const auto& r = references[s];
    const double lcs = c.empty() || r.empty() ? 0.0 : static_cast<double>(lcs_length(c, r));
    if (lcs == 0.0) continue;
    const double p = lcs / static_cast<double>(c.size());
    const double rec = lcs / static_cast<double>(r.size());
    total += (1.0 + kBeta2) * p * rec / (rec + kBeta2 * p);
  }
  return 100.0 * total / static_cast<double>(candidates.size());
}

double cider(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references) {
  check_pairs("cider", candidates, references);
  constexpr std::size_t kMaxOrder = 4;
  const double log_n = std::log(static_cast<double>(references.size()));
  std::map<Tokens, double> df;
  for (const auto& r : references) {
    for (std::size_t n = 1; n <= kMaxOrder; ++n)
      for (const auto& [g, count] : ngrams(r, n)) df[g] += 1.0;
  }
  auto weighted = [&](const NgramCounts& counts) {
    NgramCounts v;
    for (const auto& [g, count] : counts) {
      const auto it = df.find(g);
      const double d = it == df.end() ? 0.0 : it->second;
      v[g] = count * (log_n - std::log(std::max(1.0, d)));
    }
    return v;
  };
  double total = 0.0;
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    double per_pair = 0.0;
    for (std::size_t n = 1; n <= kMaxOrder; ++n) {
      const auto vc = weighted(ngrams(candidates[s], n));
      const auto vr = weighted(ngrams(references[s], n));
      double dotp = 0.0, nc = 0.0, nr = 0.0;
      for (const auto& [g, w] : vc) {
        nc += w * w;
        if (auto it = vr.find(g); it != vr.end()) dotp += w * it->second;
      }
      for (const auto& [g, w] : vr) nr += w * w;
      if (nc > 0.0 && nr > 0.0) per_pair += dotp / (std::sqrt(nc) * std::sqrt(nr));
    }
    total += per_pair / static_cast<double>(kMaxOrder);
  }
  return 10.0 * total / static_cast<double>(candidates.size());
}

Distinct distinct_n(const std::vector<Tokens>& candidates, std::size_t n) {
  if (n == 0) throw std::invalid_argument("distinct_n: n must be >= 1");
  std::set<Tokens> unique;
  std::size_t total = 0;
  for (const auto& c : candidates) {
    if (c.size() < n) continue;
    for (std::size_t i = 0; i + n <= c.size(); ++i) {
      unique.emplace(c.begin() + i, c.begin() + i + n);
      ++total;
    }
  }
  if (total == 0) return {0.0, true};
  return {static_cast<double>(unique.size()) / static_cast<double>(total), false};
}

MetricReport score_outputs(const std::string& model, bool oracle, double ppl, const std::vector<Tokens>& candidates,
                           const std::vector<Tokens>& references) {
  MetricReport r;
  r.model = model;
  r.oracle = oracle;
  r.perplexity = ppl;
  r.bleu = corpus_bleu(candidates, references);
  r.rouge_l = rouge_l(candidates, references);
  r.cider = cider(candidates, references);
  r.distinct_2 = distinct_n(candidates, 2).value;
  r.distinct_3 = distinct_n(candidates, 3).value;
  r.distinct_4 = distinct_n(candidates, 4).value;
  return r;
}

void write_report_csv(std::ostream& out, const std::vector<MetricReport>& rows) {
  out << "model,oracle,perplexity,bleu,rouge_l,cider,distinct_2,distinct_3,distinct_4\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.model.c_str(),
                  r.oracle ? "ORACLE" : "", r.perplexity, r.bleu, r.rouge_l, r.cider, r.distinct_2, r.distinct_3,
                  r.distinct_4);
    out << buf;
  }
}

void write_report_table(std::ostream& out, const std::vector<MetricReport>& rows) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-12s %10s %8s %8s %8s %18s\n", "Model", "Perplexity", "BLEU", "ROUGE-L",
                "CIDEr", "Distinct-2/3/4");
  out << buf;
  bool any_oracle = false;
  for (const auto& r : rows) {
    any_oracle |= r.oracle;
    const std::string name = r.model + (r.oracle ? "*" : "");
    std::snprintf(buf, sizeof buf, "%-12s %10.2f %8.2f %8.2f %8.2f   %.3f/%.3f/%.3f\n", name.c_str(), r.perplexity,
                  r.bleu, r.rouge_l, r.cider, r.distinct_2, r.distinct_3, r.distinct_4);
    out << buf;
  }
  if (any_oracle) out << "* ORACLE: supporting fact selected with the ground-truth response\n";
}

}  // namespace deepcopy::eval
