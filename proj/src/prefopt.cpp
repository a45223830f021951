#include "aligncap/prefopt.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <stdexcept>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace aligncap {

void PoConfig::validate() const {
  if (beta <= 0.0) throw std::invalid_argument("po config: beta must be > 0");
  if (learning_rate <= 0.0) throw std::invalid_argument("po config: learning_rate <= 0");
  if (max_steps < 0 || batch_size < 1) throw std::invalid_argument("po config: bad counts");
}

std::string build_score_prompt(const std::string& reference,
                               const std::vector<std::string>& candidates) {
  std::string s =
      "You are rating speech emotion captions. The reference caption is:\n\"" + reference +
      "\"\nScore each candidate from 0 to 10 for how well its emotional clues and overall "
      "description overlap with the reference. Reply with one number per candidate, in order.\n";
  for (size_t i = 0; i < candidates.size(); ++i)
    s += "Candidate " + std::to_string(i + 1) + ": \"" + candidates[i] + "\"\n";
  return s;
}

namespace {

double clue_overlap_f1(const ClueVocabulary& vocab, const std::string& reference,
                       const std::string& candidate) {
  std::vector<std::string> ref = extract_clues(vocab, reference);
  std::vector<std::string> cand = extract_clues(vocab, candidate);
  if (ref.empty() && cand.empty()) return 1.0;  // nothing asked, nothing wrong
  if (ref.empty() || cand.empty()) return 0.0;
  std::set<std::string> ref_set(ref.begin(), ref.end());
  int hits = 0;
  for (const auto& c : cand)
    if (ref_set.count(c)) ++hits;
  if (hits == 0) return 0.0;
  const double precision = static_cast<double>(hits) / cand.size();
  const double recall = static_cast<double>(hits) / ref.size();
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace

std::vector<double> MockJudge::score(const std::string& reference,
                                     const std::vector<std::string>& candidates) {
  std::vector<double> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates) out.push_back(10.0 * clue_overlap_f1(vocab_, reference, c));
  return out;
}

HttpJudge::HttpJudge(std::string host, int port, std::string path, int timeout_sec)
    : host_(std::move(host)), port_(port), path_(std::move(path)), timeout_sec_(timeout_sec) {}

std::vector<double> HttpJudge::score(const std::string& reference,
                                     const std::vector<std::string>& candidates) {
  nlohmann::json body = {{"prompt", build_score_prompt(reference, candidates)},
                         {"candidates", candidates}};
  const std::string payload = body.dump();

  std::string last_error;
  for (int attempt = 0; attempt < 3; ++attempt) {
    if (attempt > 0)
      std::this_thread::sleep_for(std::chrono::milliseconds(100 << (attempt - 1)));
    httplib::Client client(host_, port_);
    client.set_connection_timeout(timeout_sec_);
    client.set_read_timeout(timeout_sec_);
    httplib::Headers headers;
    if (const char* token = std::getenv("ALIGNCAP_JUDGE_TOKEN"))
      headers.emplace("Authorization", std::string("Bearer ") + token);
    auto res = client.Post(path_, headers, payload, "application/json");
    if (!res) {
      last_error = "transport failure (" + httplib::to_string(res.error()) + ")";
      continue;
    }
    if (res->status != 200) {
      last_error = "http status " + std::to_string(res->status);
      continue;
    }
    nlohmann::json reply;
    try {
      reply = nlohmann::json::parse(res->body);
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string("judge: malformed response body: ") + e.what());
    }
    if (!reply.contains("scores") || !reply["scores"].is_array())
      throw std::runtime_error("judge: response missing numeric \"scores\" array");
    std::vector<double> scores;
    for (const auto& s : reply["scores"]) {
      if (!s.is_number())
        throw std::runtime_error("judge: non-numeric score in response: " + s.dump());
      scores.push_back(s.get<double>());
    }
    if (scores.size() != candidates.size())
      throw std::runtime_error("judge: got " + std::to_string(scores.size()) + " scores for " +
                               std::to_string(candidates.size()) + " candidates");
    return scores;
  }
  throw std::runtime_error("judge: all retries failed: " + last_error);
}

std::unique_ptr<Judge> make_judge(const std::string& selector, const ClueVocabulary& vocab) {
  if (selector == "mock") return std::make_unique<MockJudge>(vocab);
  // host:port[/path]
  std::string rest = selector;
  if (rest.rfind("http://", 0) == 0) rest = rest.substr(7);
  std::string path = "/score";
  if (auto slash = rest.find('/'); slash != std::string::npos) {
    path = rest.substr(slash);
    rest = rest.substr(0, slash);
  }
  const auto colon = rest.find(':');
  if (colon == std::string::npos)
    throw std::invalid_argument("judge endpoint must be host:port[/path], got '" + selector + "'");
  return std::make_unique<HttpJudge>(rest.substr(0, colon), std::stoi(rest.substr(colon + 1)),
                                     path);
}

std::vector<TokenSeq> generate_candidates(const ModelParams& p, const LoraAdapter* adapter,
                                          const TokenSeq& x, int k, const DecodeConfig& cfg,
                                          const JointCodebook& cb) {
  if (k < 2) throw std::invalid_argument("generate_candidates: k must be >= 2");
  DecodeConfig c = cfg;
  c.beam_width = k;
  std::vector<Hypothesis> hyps = beam_decode(p, adapter, x, c, cb);
  std::vector<TokenSeq> out;
  for (auto& h : hyps) {
    bool dup = false;
    for (const auto& seen : out)
      if (seen.ids == h.tokens.ids) {
        dup = true;
        break;
      }
    if (!dup && !h.tokens.empty()) out.push_back(std::move(h.tokens));
  }
  return out;
}

std::vector<double> score_candidates(Judge& judge, const std::string& reference,
                                     const std::vector<std::string>& candidates) {
  if (candidates.empty()) throw std::invalid_argument("score_candidates: no candidates");
  std::vector<double> scores = judge.score(reference, candidates);
  if (scores.size() != candidates.size())
    throw std::runtime_error("score_candidates: score count mismatch");
  for (double s : scores)
    if (!std::isfinite(s)) throw std::runtime_error("score_candidates: non-finite score");
  return scores;
}

std::vector<PreferencePair> build_pairs(const TokenSeq& x, const std::vector<TokenSeq>& candidates,
                                        const std::vector<double>& scores) {
  if (candidates.size() != scores.size() || candidates.size() < 2)
    throw std::invalid_argument("build_pairs: need matched candidates/scores, >= 2");
  size_t best = 0;
  for (size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  std::vector<PreferencePair> pairs;
  for (size_t i = 0; i < candidates.size(); ++i) {
    if (i == best) continue;
    if (scores[i] == scores[best]) continue;  // zero-margin pair carries no signal
    PreferencePair pp;
    pp.x = x;
    pp.chosen = candidates[best];
    pp.rejected = candidates[i];
    pp.chosen_score = scores[best];
    pp.rejected_score = scores[i];
    pairs.push_back(std::move(pp));
  }
  if (pairs.empty()) throw std::runtime_error("build_pairs: all scores equal, no usable pairs");
  return pairs;
}

namespace {

double log_sigmoid(double z) {
  // -log(1 + e^{-z}) computed stably
  if (z >= 0.0) return -std::log1p(std::exp(-z));
  return z - std::log1p(std::exp(z));
}

void check_finite(double lp, size_t pair_index, const char* which) {
  if (!std::isfinite(lp))
    throw std::runtime_error("dpo: non-finite " + std::string(which) + " logprob at pair " +
                             std::to_string(pair_index));
}

}  // namespace

double dpo_loss(const ModelParams& policy, const LoraAdapter& policy_adapter,
                const ModelParams& ref, const LoraAdapter& ref_adapter,
                const std::vector<PreferencePair>& pairs, double beta) {
  return dpo_grad(policy, policy_adapter, ref, ref_adapter, pairs, beta, nullptr, nullptr);
}

double dpo_grad(const ModelParams& policy, const LoraAdapter& policy_adapter,
                const ModelParams& ref, const LoraAdapter& ref_adapter,
                const std::vector<PreferencePair>& pairs, double beta,
                ModelParams* policy_grads, LoraAdapter* adapter_grads) {
  if (pairs.empty()) throw std::invalid_argument("dpo: empty pair list");
  if (beta <= 0.0) throw std::invalid_argument("dpo: beta must be > 0");
  const bool want_grad = policy_grads || adapter_grads;
  const double inv_n = 1.0 / pairs.size();
  double total = 0.0;
  for (size_t i = 0; i < pairs.size(); ++i) {
    const PreferencePair& pp = pairs[i];
    const double lp_c = sequence_logprob(policy, &policy_adapter, pp.x, pp.chosen);
    const double lp_r = sequence_logprob(policy, &policy_adapter, pp.x, pp.rejected);
    const double lr_c = sequence_logprob(ref, &ref_adapter, pp.x, pp.chosen);
    const double lr_r = sequence_logprob(ref, &ref_adapter, pp.x, pp.rejected);
    check_finite(lp_c, i, "policy chosen");
    check_finite(lp_r, i, "policy rejected");
    check_finite(lr_c, i, "reference chosen");
    check_finite(lr_r, i, "reference rejected");
    const double z = beta * ((lp_c - lr_c) - (lp_r - lr_r));
    total += -log_sigmoid(z) * inv_n;
    if (want_grad) {
      // d(-log sigma(z))/dz = sigma(z) - 1
      const double dz = (1.0 / (1.0 + std::exp(-z))) - 1.0;
      const double w = dz * beta * inv_n;
      sequence_logprob_grad(policy, &policy_adapter, pp.x, pp.chosen, w, policy_grads,
                            adapter_grads);
      sequence_logprob_grad(policy, &policy_adapter, pp.x, pp.rejected, -w, policy_grads,
                            adapter_grads);
    }
  }
  return total;
}

PoStats po_stats(const ModelParams& policy, const LoraAdapter& adapter,
                 const std::vector<PreferencePair>& pairs) {
  PoStats st;
  for (const auto& pp : pairs) {
    const double m = sequence_logprob(policy, &adapter, pp.x, pp.chosen) -
                     sequence_logprob(policy, &adapter, pp.x, pp.rejected);
    st.margin += m / pairs.size();
    if (m > 0.0) st.accuracy += 1.0 / pairs.size();
  }
  return st;
}

std::vector<PoStepRecord> train_po(const ModelParams& policy, LoraAdapter& adapter,
                                   const ModelParams& ref, const LoraAdapter& ref_adapter,
                                   const std::vector<PreferencePair>& pairs, const PoConfig& cfg) {
  cfg.validate();
  if (pairs.empty()) throw std::invalid_argument("train_po: empty pair dataset");
  std::vector<PoStepRecord> log;
  if (cfg.max_steps == 0) return log;

  Rng rng(cfg.seed);
  std::vector<size_t> order(pairs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  size_t pos = 0;

  auto params = collect_tensors(adapter);
  for (int step = 0; step < cfg.max_steps; ++step) {
    std::vector<PreferencePair> batch;
    for (int i = 0; i < cfg.batch_size; ++i) {
      if (pos == order.size()) {
        rng.shuffle(order);
        pos = 0;
      }
      batch.push_back(pairs[order[pos++]]);
    }
    LoraAdapter grads = zeros_like(adapter);
    const double loss = dpo_grad(policy, adapter, ref, ref_adapter, batch, cfg.beta, nullptr, &grads);
    if (!std::isfinite(loss)) throw std::runtime_error("train_po: non-finite loss");
    auto gts = collect_tensors(grads);
    for (size_t i = 0; i < params.size(); ++i)
      for (size_t j = 0; j < params[i].size; ++j)
        params[i].data[j] -= cfg.learning_rate * gts[i].data[j];
    PoStats st = po_stats(policy, adapter, batch);
    log.push_back({step, loss, st.margin, st.accuracy});
  }
  return log;
}

void write_po_metrics_jsonl(const std::vector<PoStepRecord>& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("metrics: cannot write " + path);
  for (const auto& r : log) {
    nlohmann::json j = {
        {"step", r.step}, {"loss", r.loss}, {"margin", r.margin}, {"accuracy", r.accuracy}};
    out << j.dump() << '\n';
  }
}

}  // namespace aligncap
