#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

namespace aligncap {

struct EvalItem {
  std::string candidate;
  std::vector<std::string> references;  // at least one
};

struct EvalCorpus {
  std::vector<EvalItem> items;
};

using SynonymMap = std::map<std::string, std::set<std::string>>;

// Corpus-level BLEU with uniform 1-4 gram weights, clipped counts and the
// closest-length brevity penalty. The default is unsmoothed: any zero
// higher-order precision zeroes the score. sentence_level averages per-item
// BLEU instead.
double bleu4(const EvalCorpus& corpus, bool smoothed = false, bool sentence_level = false);

// Mean over items of the LCS F-measure (beta = 1.2) against the best
// reference.
double rouge_l(const EvalCorpus& corpus);

// Unigram alignment, exact matches then synonym matches; F = 10PR/(R+9P);
// fragmentation penalty 0.5*(chunks/matches)^3; per-item max over references.
double meteor_lite(const EvalCorpus& corpus, const SynonymMap& synonyms = {});

// Standard CIDEr: 1-4 gram TF-IDF vectors, cosine against each reference
// averaged, mean over n, x10. IDF from the reference corpus.
double cider(const EvalCorpus& corpus);

struct MetricReport {
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double meteor = 0.0;
  double cider = 0.0;  // raw, in [0, 10]
  struct ItemScores {
    double bleu4 = 0.0, rouge_l = 0.0, meteor = 0.0, cider = 0.0;
  };
  std::vector<ItemScores> per_item;
};

MetricReport evaluate_corpus(const EvalCorpus& corpus, const SynonymMap& synonyms = {});
std::string report_to_json(const MetricReport& report);

enum class AesKind { ClueOverlap, SummaryOverlap };

// Deterministic judge prompt asking for a 0-10 overlap score; kind selects
// the emotional-clue vs summarized-state wording.
std::string build_aes_prompt(AesKind kind, const std::string& candidate,
                             const std::string& reference);

}  // namespace aligncap
