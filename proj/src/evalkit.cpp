#include "aligncap/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "aligncap/codebook.hpp"

namespace aligncap {

namespace {

using Tokens = std::vector<std::string>;
using NgramCounts = std::unordered_map<std::string, int>;

Tokens tokenize(const std::string& s) { return normalize_words(s); }

std::string join_ngram(const Tokens& t, size_t start, int n) {
  std::string g = t[start];
  for (int k = 1; k < n; ++k) g += '\x1f' + t[start + k];
  return g;
}

NgramCounts ngram_counts(const Tokens& t, int n) {
  NgramCounts counts;
  if (static_cast<int>(t.size()) >= n)
    for (size_t i = 0; i + n <= t.size(); ++i) ++counts[join_ngram(t, i, n)];
  return counts;
}

struct BleuStats {
  double clipped[4] = {0, 0, 0, 0};
  double total[4] = {0, 0, 0, 0};
  double cand_len = 0;
  double ref_len = 0;
};

BleuStats bleu_item_stats(const EvalItem& item) {
  BleuStats st;
  Tokens cand = tokenize(item.candidate);
  st.cand_len = static_cast<double>(cand.size());

  // closest-length reference; ties toward the shorter one
  double best_ref = 0;
  double best_diff = std::numeric_limits<double>::infinity();
  std::vector<Tokens> refs;
  for (const auto& r : item.references) {
    refs.push_back(tokenize(r));
    const double len = static_cast<double>(refs.back().size());
    const double diff = std::fabs(len - st.cand_len);
    if (diff < best_diff || (diff == best_diff && len < best_ref)) {
      best_diff = diff;
      best_ref = len;
    }
  }
  st.ref_len = best_ref;

  for (int n = 1; n <= 4; ++n) {
    NgramCounts cc = ngram_counts(cand, n);
    NgramCounts mx;
    for (const auto& r : refs)
      for (const auto& [g, c] : ngram_counts(r, n)) mx[g] = std::max(mx[g], c);
    for (const auto& [g, c] : cc) {
      st.total[n - 1] += c;
      auto it = mx.find(g);
      if (it != mx.end()) st.clipped[n - 1] += std::min(c, it->second);
    }
  }
  return st;
}

double bleu_from_stats(const BleuStats& st, bool smoothed) {
  double log_sum = 0.0;
  for (int n = 0; n < 4; ++n) {
    if (st.total[n] == 0) return 0.0;
    double p = st.clipped[n] / st.total[n];
    if (p == 0.0) {
      if (!smoothed) return 0.0;
      p = 1e-16;
    }
    log_sum += 0.25 * std::log(p);
  }
  if (st.cand_len == 0) return 0.0;
  const double bp = st.cand_len >= st.ref_len ? 1.0 : std::exp(1.0 - st.ref_len / st.cand_len);
  return bp * std::exp(log_sum);
}

int lcs_length(const Tokens& a, const Tokens& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1, 0), cur(m + 1, 0);
  for (size_t i = 1; i <= n; ++i) {
    for (size_t j = 1; j <= m; ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[m];
}

double rouge_l_item(const EvalItem& item) {
  constexpr double kBeta = 1.2;
  Tokens cand = tokenize(item.candidate);
  double best = 0.0;
  for (const auto& r : item.references) {
    Tokens ref = tokenize(r);
    if (cand.empty() || ref.empty()) continue;
    const int lcs = lcs_length(cand, ref);
    if (lcs == 0) continue;
    const double p = static_cast<double>(lcs) / cand.size();
    const double rc = static_cast<double>(lcs) / ref.size();
    const double f = (1.0 + kBeta * kBeta) * rc * p / (rc + kBeta * kBeta * p);
    best = std::max(best, f);
  }
  return best;
}

bool synonym_match(const SynonymMap& syn, const std::string& a, const std::string& b) {
  if (auto it = syn.find(a); it != syn.end() && it->second.count(b)) return true;
  if (auto it = syn.find(b); it != syn.end() && it->second.count(a)) return true;
  return false;
}

double meteor_item_vs_ref(const Tokens& cand, const Tokens& ref, const SynonymMap& syn) {
  if (cand.empty() || ref.empty()) return 0.0;
  std::vector<int> align(cand.size(), -1);
  std::vector<bool> ref_used(ref.size(), false);
  // pass 1: exact
  for (size_t i = 0; i < cand.size(); ++i)
    for (size_t j = 0; j < ref.size(); ++j)
      if (!ref_used[j] && cand[i] == ref[j]) {
        align[i] = static_cast<int>(j);
        ref_used[j] = true;
        break;
      }
  // pass 2: synonyms
  for (size_t i = 0; i < cand.size(); ++i) {
    if (align[i] >= 0) continue;
    for (size_t j = 0; j < ref.size(); ++j)
      if (!ref_used[j] && synonym_match(syn, cand[i], ref[j])) {
        align[i] = static_cast<int>(j);
        ref_used[j] = true;
        break;
      }
  }
  int matches = 0;
  for (int a : align) matches += a >= 0 ? 1 : 0;
  if (matches == 0) return 0.0;
  const double p = static_cast<double>(matches) / cand.size();
  const double r = static_cast<double>(matches) / ref.size();
  const double fmean = 10.0 * p * r / (r + 9.0 * p);
  int chunks = 0;
  int prev_i = -2, prev_j = -2;
  for (size_t i = 0; i < cand.size(); ++i) {
    if (align[i] < 0) continue;
    if (static_cast<int>(i) != prev_i + 1 || align[i] != prev_j + 1) ++chunks;
    prev_i = static_cast<int>(i);
    prev_j = align[i];
  }
  const double frag = static_cast<double>(chunks) / matches;
  return fmean * (1.0 - 0.5 * frag * frag * frag);
}

double meteor_item(const EvalItem& item, const SynonymMap& syn) {
  Tokens cand = tokenize(item.candidate);
  double best = 0.0;
  for (const auto& r : item.references)
    best = std::max(best, meteor_item_vs_ref(cand, tokenize(r), syn));
  return best;
}

struct CiderIdf {
  std::unordered_map<std::string, double> idf[4];
  double log_n = 0.0;

  double get(int n, const std::string& g) const {
    auto it = idf[n].find(g);
    return it != idf[n].end() ? it->second : log_n;  // unseen n-grams keep full idf
  }
};

CiderIdf cider_idf(const EvalCorpus& corpus) {
  CiderIdf out;
  const double n_items = static_cast<double>(corpus.items.size());
  out.log_n = std::log(std::max(1.0, n_items));
  for (int n = 0; n < 4; ++n) {
    std::unordered_map<std::string, int> df;
    for (const auto& item : corpus.items) {
      std::unordered_map<std::string, bool> present;
      for (const auto& r : item.references)
        for (const auto& [g, c] : ngram_counts(tokenize(r), n + 1)) present[g] = true;
      for (const auto& [g, _] : present) ++df[g];
    }
    for (const auto& [g, d] : df)
      out.idf[n][g] = out.log_n - std::log(std::max(1.0, static_cast<double>(d)));
  }
  return out;
}

double cider_item(const EvalItem& item, const CiderIdf& idf) {
  Tokens cand = tokenize(item.candidate);
  double score = 0.0;
  for (int n = 0; n < 4; ++n) {
    NgramCounts cc = ngram_counts(cand, n + 1);
    std::unordered_map<std::string, double> cvec;
    double cnorm = 0.0;
    for (const auto& [g, c] : cc) {
      const double w = c * idf.get(n, g);
      cvec[g] = w;
      cnorm += w * w;
    }
    cnorm = std::sqrt(cnorm);
    double ref_avg = 0.0;
    for (const auto& r : item.references) {
      std::unordered_map<std::string, double> rvec;
      double rnorm = 0.0;
      for (const auto& [g, c] : ngram_counts(tokenize(r), n + 1)) {
        const double w = c * idf.get(n, g);
        rvec[g] = w;
        rnorm += w * w;
      }
      rnorm = std::sqrt(rnorm);
      double dot = 0.0;
      for (const auto& [g, w] : cvec) {
        auto it = rvec.find(g);
        if (it != rvec.end()) dot += w * it->second;
      }
      if (cnorm > 0.0 && rnorm > 0.0) ref_avg += dot / (cnorm * rnorm);
    }
    score += ref_avg / item.references.size() / 4.0;
  }
  return 10.0 * score;
}

void check_corpus(const EvalCorpus& corpus) {
  for (const auto& item : corpus.items)
    if (item.references.empty())
      throw std::invalid_argument("eval corpus: item without references");
}

}  // namespace

double bleu4(const EvalCorpus& corpus, bool smoothed, bool sentence_level) {
  check_corpus(corpus);
  if (corpus.items.empty()) return 0.0;
  if (sentence_level) {
    double sum = 0.0;
    for (const auto& item : corpus.items) sum += bleu_from_stats(bleu_item_stats(item), smoothed);
    return sum / corpus.items.size();
  }
  BleuStats agg;
  for (const auto& item : corpus.items) {
    BleuStats st = bleu_item_stats(item);
    for (int n = 0; n < 4; ++n) {
      agg.clipped[n] += st.clipped[n];
      agg.total[n] += st.total[n];
    }
    agg.cand_len += st.cand_len;
    agg.ref_len += st.ref_len;
  }
  return bleu_from_stats(agg, smoothed);
}

double rouge_l(const EvalCorpus& corpus) {
  check_corpus(corpus);
  if (corpus.items.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& item : corpus.items) sum += rouge_l_item(item);
  return sum / corpus.items.size();
}

double meteor_lite(const EvalCorpus& corpus, const SynonymMap& synonyms) {
  check_corpus(corpus);
  if (corpus.items.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& item : corpus.items) sum += meteor_item(item, synonyms);
  return sum / corpus.items.size();
}

double cider(const EvalCorpus& corpus) {
  check_corpus(corpus);
  if (corpus.items.empty()) return 0.0;
  CiderIdf idf = cider_idf(corpus);
  double sum = 0.0;
  for (const auto& item : corpus.items) sum += cider_item(item, idf);
  return sum / corpus.items.size();
}

MetricReport evaluate_corpus(const EvalCorpus& corpus, const SynonymMap& synonyms) {
  check_corpus(corpus);
  MetricReport rep;
  rep.bleu4 = bleu4(corpus);
  rep.rouge_l = rouge_l(corpus);
  rep.meteor = meteor_lite(corpus, synonyms);
  rep.cider = cider(corpus);
  CiderIdf idf = cider_idf(corpus);
  for (const auto& item : corpus.items) {
    MetricReport::ItemScores s;
    s.bleu4 = bleu_from_stats(bleu_item_stats(item), false);
    s.rouge_l = rouge_l_item(item);
    s.meteor = meteor_item(item, synonyms);
    s.cider = cider_item(item, idf);
    rep.per_item.push_back(s);
  }
  return rep;
}

std::string report_to_json(const MetricReport& rep) {
  nlohmann::json j;
  j["bleu4"] = rep.bleu4;
  j["rouge_l"] = rep.rouge_l;
  j["meteor"] = rep.meteor;
  j["cider"] = rep.cider;
  j["per_item"] = nlohmann::json::array();
  for (const auto& s : rep.per_item)
    j["per_item"].push_back({{"bleu4", s.bleu4},
                             {"rouge_l", s.rouge_l},
                             {"meteor", s.meteor},
                             {"cider", s.cider}});
  return j.dump(2);
}

std::string build_aes_prompt(AesKind kind, const std::string& candidate,
                             const std::string& reference) {
  const std::string aspect =
      kind == AesKind::ClueOverlap
          ? "Rate the degree of overlap of the emotional clues (tone, intonation, pitch, rhythm, "
            "volume, and emotion adjectives) between the two captions."
          : "Rate the degree of overlap of the summarized emotional states expressed by the two "
            "captions.";
  return "You are evaluating a generated speech emotion caption against a reference.\n" + aspect +
         "\nReference caption: \"" + reference + "\"\nGenerated caption: \"" + candidate +
         "\"\nReply with a single integer score from 0 (no overlap) to 10 (complete overlap).\n";
}

}  // namespace aligncap
