#pragma once

#include <utility>
#include <vector>

#include "aligncap/codebook.hpp"
#include "aligncap/model.hpp"

namespace aligncap {

struct DecodeConfig {
  int max_len = 16;
  int beam_width = 1;
  // Stops on EOS (excluded from the output) or on a token whose surface form
  // contains a period (included).
};

struct Hypothesis {
  TokenSeq tokens;  // response only, prefix excluded
  double logprob = 0.0;
};

// Per-step argmax decoding; ties break toward the smallest token id.
TokenSeq greedy_decode(const ModelParams& p, const LoraAdapter* adapter, const TokenSeq& prefix,
                       const DecodeConfig& cfg, const JointCodebook& cb);

// Length-bounded beam search over summed token log-probabilities. A
// hypothesis finishes only when its EOS/period expansion is admitted to the
// beam, so beam_width == 1 reproduces greedy_decode exactly. Results sorted
// by logprob descending, ties by token ids ascending.
std::vector<Hypothesis> beam_decode(const ModelParams& p, const LoraAdapter* adapter,
                                    const TokenSeq& prefix, const DecodeConfig& cfg,
                                    const JointCodebook& cb);

// Sum over response positions of log p(token | context + earlier response);
// response PAD positions are skipped.
double sequence_logprob(const ModelParams& p, const LoraAdapter* adapter, const TokenSeq& context,
                        const TokenSeq& response);

// As sequence_logprob, additionally accumulating weight * d(logprob)/d(params)
// into the gradient sinks.
double sequence_logprob_grad(const ModelParams& p, const LoraAdapter* adapter,
                             const TokenSeq& context, const TokenSeq& response, double weight,
                             ModelParams* base_grads, LoraAdapter* adapter_grads);

}  // namespace aligncap
