#include "aligncap/decode.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace aligncap {

namespace {

bool stops_generation(const JointCodebook& cb, int token) {
  return token == cb.special().eos || cb.token_contains_period(token);
}

int argmax_token(const std::vector<double>& probs) {
  int best = 0;
  double best_p = probs[0];
  for (int i = 1; i < static_cast<int>(probs.size()); ++i) {
    if (probs[i] > best_p) {
      best_p = probs[i];
      best = i;
    }
  }
  return best;
}

}  // namespace

TokenSeq greedy_decode(const ModelParams& p, const LoraAdapter* adapter, const TokenSeq& prefix,
                       const DecodeConfig& cfg, const JointCodebook& cb) {
  if (prefix.valid_count() == 0) throw std::invalid_argument("greedy_decode: empty prefix");
  TokenSeq out;
  TokenSeq ctx = prefix;
  for (int step = 0; step < cfg.max_len; ++step) {
    NextTokenDist dist = next_token_dist(p, adapter, ctx);
    const int tok = argmax_token(dist.probs);
    if (tok == cb.special().eos) break;
    out.push(tok);
    ctx.push(tok);
    if (cb.token_contains_period(tok)) break;
  }
  return out;
}

std::vector<Hypothesis> beam_decode(const ModelParams& p, const LoraAdapter* adapter,
                                    const TokenSeq& prefix, const DecodeConfig& cfg,
                                    const JointCodebook& cb) {
  if (cfg.beam_width < 1) throw std::invalid_argument("beam_decode: beam_width must be >= 1");
  const int k = cfg.beam_width;

  struct Candidate {
    int src = 0;
    int token = -1;
    double logprob = 0.0;
  };

  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<Hypothesis> finished;

  for (int step = 0; step < cfg.max_len && !live.empty(); ++step) {
    std::vector<Candidate> cands;
    for (int hi = 0; hi < static_cast<int>(live.size()); ++hi) {
      TokenSeq ctx = concat(prefix, live[hi].tokens);
      NextTokenDist dist = next_token_dist(p, adapter, ctx);
      for (int tok = 0; tok < static_cast<int>(dist.probs.size()); ++tok) {
        if (dist.probs[tok] <= 0.0) continue;  // PAD and numerically dead tokens
        cands.push_back({hi, tok, live[hi].logprob + std::log(dist.probs[tok])});
      }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      if (a.logprob != b.logprob) return a.logprob > b.logprob;
      if (a.token != b.token) return a.token < b.token;
      return a.src < b.src;
    });
    if (static_cast<int>(cands.size()) > k) cands.resize(k);

    std::vector<Hypothesis> next_live;
    for (const Candidate& cd : cands) {
      Hypothesis h = live[cd.src];
      h.logprob = cd.logprob;
      if (cd.token == cb.special().eos) {
        finished.push_back(std::move(h));  // EOS itself is not emitted
      } else {
        h.tokens.push(cd.token);
        if (cb.token_contains_period(cd.token)) {
          finished.push_back(std::move(h));
        } else {
          next_live.push_back(std::move(h));
        }
      }
    }
    live = std::move(next_live);
  }
  for (auto& h : live) finished.push_back(std::move(h));  // length bound reached

  std::stable_sort(finished.begin(), finished.end(), [](const Hypothesis& a, const Hypothesis& b) {
    if (a.logprob != b.logprob) return a.logprob > b.logprob;
    return a.tokens.ids < b.tokens.ids;
  });
  if (static_cast<int>(finished.size()) > k) finished.resize(k);
  return finished;
}

namespace {

// Index of the predicting position (last valid index strictly before pos).
int predictor_index(const TokenSeq& seq, int pos) {
  for (int i = pos - 1; i >= 0; --i)
    if (seq.mask[i]) return i;
  return -1;
}

}  // namespace

double sequence_logprob(const ModelParams& p, const LoraAdapter* adapter, const TokenSeq& context,
                        const TokenSeq& response) {
  return sequence_logprob_grad(p, adapter, context, response, 0.0, nullptr, nullptr);
}

double sequence_logprob_grad(const ModelParams& p, const LoraAdapter* adapter,
                             const TokenSeq& context, const TokenSeq& response, double weight,
                             ModelParams* base_grads, LoraAdapter* adapter_grads) {
  if (response.valid_count() == 0)
    throw std::invalid_argument("sequence_logprob: empty response");
  const bool want_grad = base_grads || adapter_grads;
  TokenSeq seq = concat(context, response);
  ForwardCache cache;
  Mat logits = forward_logits(p, adapter, seq, want_grad ? &cache : nullptr);

  const int ctx_len = static_cast<int>(context.size());
  Mat dlogits;
  if (want_grad) dlogits = Mat(logits.rows, logits.cols);

  double total = 0.0;
  for (int t = 0; t < static_cast<int>(response.size()); ++t) {
    if (!response.mask[t]) continue;
    const int pos = ctx_len + t;
    const int at = predictor_index(seq, pos);
    if (at < 0) throw std::invalid_argument("sequence_logprob: no context before response");
    std::vector<double> probs = dist_from_logits(logits.row(at), p.cfg.vocab, p.cfg.pad_id);
    const int y = response.ids[t];
    const double py = probs[y];
    if (!(py > 0.0) || !std::isfinite(py))
      throw std::runtime_error("sequence_logprob: zero probability at response token");
    total += std::log(py);
    if (want_grad) {
      for (int j = 0; j < p.cfg.vocab; ++j) {
        if (j == p.cfg.pad_id) continue;
        dlogits.at(at, j) += weight * ((j == y ? 1.0 : 0.0) - probs[j]);
      }
    }
  }
  if (want_grad) backward(p, adapter, seq, cache, dlogits, base_grads, adapter_grads);
  return total;
}

}  // namespace aligncap
