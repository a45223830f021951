#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "aligncap/codebook.hpp"
#include "aligncap/tensor.hpp"

namespace aligncap {

struct ModelConfig {
  int vocab = 0;
  int d_model = 32;
  int n_layers = 2;
  int n_heads = 2;
  int d_ff = 64;
  int max_seq = 128;
  int pad_id = -1;  // probability forced to zero in every distribution

  void validate() const;
  int head_dim() const { return d_model / n_heads; }
  bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
  Mat wq, wk, wv, wo;  // d_model x d_model
  Vec bq, bk, bv, bo;
  Vec norm1_g, norm2_g;  // rmsnorm gains
  Mat w1, w2;            // d_model x d_ff, d_ff x d_model
  Vec b1, b2;
};

// Dense parameter set of the tiny pre-norm decoder-only transformer.
struct ModelParams {
  ModelConfig cfg;
  Mat embed;  // vocab x d_model, one table over the joint token range
  Mat pos;    // max_seq x d_model
  std::vector<LayerParams> layers;
  Vec normf_g;
  Mat wout;  // d_model x vocab
  Vec bout;
};

ModelParams init_model(const ModelConfig& cfg, uint64_t seed);
ModelParams zeros_like(const ModelParams& p);
std::vector<TensorRef> collect_tensors(ModelParams& p);

// Low-rank delta for a weight W (in x out): effective weight is
// W + scale * A * B with A (in x r) gaussian and B (r x out) zero at init.
struct LoraPair {
  Mat a;  // in x r
  Mat b;  // r x out
};

struct LoraAdapter {
  int rank = 8;
  double scale = 2.0;
  struct LayerLora {
    LoraPair q, v;
  };
  std::vector<LayerLora> layers;
  LoraPair out;  // on the output projection

  bool empty() const { return layers.empty() && out.a.size() == 0; }
};

LoraAdapter init_adapter(const ModelConfig& cfg, int rank, double scale, uint64_t seed);
LoraAdapter zeros_like(const LoraAdapter& a);
std::vector<TensorRef> collect_tensors(LoraAdapter& a);

Mat effective_weight(const Mat& base, const LoraPair& lp, double scale);

// Per-call activation cache for backward.
struct ForwardCache {
  int n = 0;
  std::vector<bool> valid;
  Mat x;  // embeddings + positions
  struct LayerCache {
    Mat h_in, n1, q, k, v, ctx, h_mid, n2, f1, a1;
    std::vector<Mat> attn;  // per head, n x n probabilities
    Mat wq_eff, wv_eff;
  };
  std::vector<LayerCache> layers;
  Mat h_final, nf;
  Mat wout_eff;
};

// Logits at every position (n x vocab). Masked-false positions are excluded
// from attention and produce zero rows downstream.
Mat forward_logits(const ModelParams& p, const LoraAdapter* adapter, const TokenSeq& ctx,
                   ForwardCache* cache = nullptr);

struct NextTokenDist {
  std::vector<double> probs;  // vocab-length; PAD forced to 0
};

// Softmax over the logits at the final valid position.
NextTokenDist next_token_dist(const ModelParams& p, const LoraAdapter* adapter,
                              const TokenSeq& ctx);

// Softmax of one logits row with PAD excluded.
std::vector<double> dist_from_logits(const double* logits, int vocab, int pad_id);

// Accumulates d(loss)/d(params) given d(loss)/d(logits) for a cached forward.
// Gradients are added into base_grads / adapter_grads (either may be null).
void backward(const ModelParams& p, const LoraAdapter* adapter, const TokenSeq& ctx,
              const ForwardCache& cache, const Mat& dlogits, ModelParams* base_grads,
              LoraAdapter* adapter_grads);

}  // namespace aligncap
