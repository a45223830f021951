#pragma once

#include <memory>
#include <string>
#include <vector>

#include "aligncap/codebook.hpp"
#include "aligncap/decode.hpp"
#include "aligncap/emoparse.hpp"
#include "aligncap/model.hpp"

namespace aligncap {

struct PreferencePair {
  TokenSeq x;  // speech-token context
  TokenSeq chosen;
  TokenSeq rejected;
  double chosen_score = 0.0;
  double rejected_score = 0.0;
};

struct PoConfig {
  double beta = 0.1;
  double learning_rate = 5e-7;
  int max_steps = 1000;
  int batch_size = 4;
  uint64_t seed = 0;

  void validate() const;
};

// Scoring prompt sent to the judge: reference caption plus the numbered
// candidate list, asking for one 0-10 score per candidate.
std::string build_score_prompt(const std::string& reference, const std::vector<std::string>& candidates);

class Judge {
 public:
  virtual ~Judge() = default;
  virtual std::vector<double> score(const std::string& reference,
                                    const std::vector<std::string>& candidates) = 0;
};

// Deterministic offline judge: clue-overlap F1 against the reference, x10.
class MockJudge : public Judge {
 public:
  explicit MockJudge(const ClueVocabulary& vocab) : vocab_(vocab) {}
  std::vector<double> score(const std::string& reference,
                            const std::vector<std::string>& candidates) override;

 private:
  ClueVocabulary vocab_;
};

// Single-endpoint JSON judge: POST {"prompt", "candidates"} -> {"scores"}.
// Retries transport failures up to 3 times with exponential backoff. Reads
// ALIGNCAP_JUDGE_TOKEN for bearer authentication when set.
class HttpJudge : public Judge {
 public:
  HttpJudge(std::string host, int port, std::string path = "/score", int timeout_sec = 10);
  std::vector<double> score(const std::string& reference,
                            const std::vector<std::string>& candidates) override;

 private:
  std::string host_;
  int port_;
  std::string path_;
  int timeout_sec_;
};

std::unique_ptr<Judge> make_judge(const std::string& selector, const ClueVocabulary& vocab);

// Top-k beam hypotheses with duplicates removed.
std::vector<TokenSeq> generate_candidates(const ModelParams& p, const LoraAdapter* adapter,
                                          const TokenSeq& x, int k, const DecodeConfig& cfg,
                                          const JointCodebook& cb);

std::vector<double> score_candidates(Judge& judge, const std::string& reference,
                                     const std::vector<std::string>& candidates);

// Chosen = earliest argmax of scores; one pair per remaining candidate;
// ties with the chosen score are dropped. Throws when all scores are equal.
std::vector<PreferencePair> build_pairs(const TokenSeq& x, const std::vector<TokenSeq>& candidates,
                                        const std::vector<double>& scores);

// Mean over pairs of -log sigmoid(beta * (chosen log-ratio - rejected
// log-ratio)); gradients flow only to the policy.
double dpo_loss(const ModelParams& policy, const LoraAdapter& policy_adapter,
                const ModelParams& ref, const LoraAdapter& ref_adapter,
                const std::vector<PreferencePair>& pairs, double beta);

double dpo_grad(const ModelParams& policy, const LoraAdapter& policy_adapter,
                const ModelParams& ref, const LoraAdapter& ref_adapter,
                const std::vector<PreferencePair>& pairs, double beta,
                ModelParams* policy_grads, LoraAdapter* adapter_grads);

struct PoStepRecord {
  int step = 0;
  double loss = 0.0;
  double margin = 0.0;    // mean policy log pi(chosen) - log pi(rejected)
  double accuracy = 0.0;  // fraction of pairs with positive margin
};

struct PoStats {
  double margin = 0.0;
  double accuracy = 0.0;
};

PoStats po_stats(const ModelParams& policy, const LoraAdapter& adapter,
                 const std::vector<PreferencePair>& pairs);

// Adapter-only SGD on the DPO objective; the reference stays untouched.
std::vector<PoStepRecord> train_po(const ModelParams& policy, LoraAdapter& adapter,
                                   const ModelParams& ref, const LoraAdapter& ref_adapter,
                                   const std::vector<PreferencePair>& pairs, const PoConfig& cfg);

void write_po_metrics_jsonl(const std::vector<PoStepRecord>& log, const std::string& path);

}  // namespace aligncap
