#include "aligncap/model.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace aligncap {

namespace {

constexpr double kNormEps = 1e-8;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void fill_gaussian(Mat& m, Rng& rng, double scale) {
  for (double& x : m.v) x = scale * rng.gaussian();
}

void fill_gaussian(Vec& v, Rng& rng, double scale) {
  for (double& x : v) x = scale * rng.gaussian();
}

double rms(const double* x, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += x[i] * x[i];
  return std::sqrt(s / n + kNormEps);
}

Mat rmsnorm(const Mat& x, const Vec& g) {
  Mat out(x.rows, x.cols);
  for (int i = 0; i < x.rows; ++i) {
    const double r = rms(x.row(i), x.cols);
    for (int j = 0; j < x.cols; ++j) out.at(i, j) = g[j] * x.at(i, j) / r;
  }
  return out;
}

// dx returned; dg accumulated when non-null.
Mat rmsnorm_backward(const Mat& x, const Vec& g, const Mat& dy, Vec* dg) {
  Mat dx(x.rows, x.cols);
  const int n = x.cols;
  for (int i = 0; i < x.rows; ++i) {
    const double r = rms(x.row(i), n);
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += dy.at(i, j) * g[j] * x.at(i, j);
    for (int j = 0; j < n; ++j) {
      dx.at(i, j) = g[j] * dy.at(i, j) / r - x.at(i, j) * s / (n * r * r * r);
      if (dg) (*dg)[j] += dy.at(i, j) * x.at(i, j) / r;
    }
  }
  return dx;
}

void add_bias(Mat& m, const Vec& b) {
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) m.at(i, j) += b[j];
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab < 2) throw std::invalid_argument("model config: vocab must be >= 2");
  if (d_model < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1 || max_seq < 1)
    throw std::invalid_argument("model config: all dimensions must be positive");
  if (d_model % n_heads != 0)
    throw std::invalid_argument("model config: d_model must be divisible by n_heads");
  if (pad_id >= vocab) throw std::invalid_argument("model config: pad_id out of range");
}

ModelParams init_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ModelParams p;
  p.cfg = cfg;
  const double ws = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
  p.embed = Mat(cfg.vocab, cfg.d_model);
  fill_gaussian(p.embed, rng, 0.5);
  p.pos = Mat(cfg.max_seq, cfg.d_model);
  fill_gaussian(p.pos, rng, 0.1);
  p.layers.resize(cfg.n_layers);
  for (auto& l : p.layers) {
    l.wq = Mat(cfg.d_model, cfg.d_model);
    l.wk = Mat(cfg.d_model, cfg.d_model);
    l.wv = Mat(cfg.d_model, cfg.d_model);
    l.wo = Mat(cfg.d_model, cfg.d_model);
    fill_gaussian(l.wq, rng, ws);
    fill_gaussian(l.wk, rng, ws);
    fill_gaussian(l.wv, rng, ws);
    fill_gaussian(l.wo, rng, ws);
    l.bq.assign(cfg.d_model, 0.0);
    l.bk.assign(cfg.d_model, 0.0);
    l.bv.assign(cfg.d_model, 0.0);
    l.bo.assign(cfg.d_model, 0.0);
    l.norm1_g.assign(cfg.d_model, 1.0);
    l.norm2_g.assign(cfg.d_model, 1.0);
    l.w1 = Mat(cfg.d_model, cfg.d_ff);
    l.w2 = Mat(cfg.d_ff, cfg.d_model);
    fill_gaussian(l.w1, rng, ws);
    fill_gaussian(l.w2, rng, 1.0 / std::sqrt(static_cast<double>(cfg.d_ff)));
    l.b1.assign(cfg.d_ff, 0.0);
    l.b2.assign(cfg.d_model, 0.0);
  }
  p.normf_g.assign(cfg.d_model, 1.0);
  p.wout = Mat(cfg.d_model, cfg.vocab);
  fill_gaussian(p.wout, rng, ws);
  p.bout.assign(cfg.vocab, 0.0);
  return p;
}

ModelParams zeros_like(const ModelParams& p) {
  ModelParams z = p;
  z.embed.zero();
  z.pos.zero();
  for (auto& l : z.layers) {
    l.wq.zero();
    l.wk.zero();
    l.wv.zero();
    l.wo.zero();
    l.w1.zero();
    l.w2.zero();
    std::fill(l.bq.begin(), l.bq.end(), 0.0);
    std::fill(l.bk.begin(), l.bk.end(), 0.0);
    std::fill(l.bv.begin(), l.bv.end(), 0.0);
    std::fill(l.bo.begin(), l.bo.end(), 0.0);
    std::fill(l.b1.begin(), l.b1.end(), 0.0);
    std::fill(l.b2.begin(), l.b2.end(), 0.0);
    std::fill(l.norm1_g.begin(), l.norm1_g.end(), 0.0);
    std::fill(l.norm2_g.begin(), l.norm2_g.end(), 0.0);
  }
  std::fill(z.normf_g.begin(), z.normf_g.end(), 0.0);
  z.wout.zero();
  std::fill(z.bout.begin(), z.bout.end(), 0.0);
  return z;
}

namespace {

TensorRef ref_of(const std::string& name, Mat& m) {
  return {name, {m.rows, m.cols}, m.v.data(), m.v.size()};
}
TensorRef ref_of(const std::string& name, Vec& v) {
  return {name, {static_cast<int>(v.size())}, v.data(), v.size()};
}

}  // namespace

std::vector<TensorRef> collect_tensors(ModelParams& p) {
  std::vector<TensorRef> out;
  out.push_back(ref_of("embed", p.embed));
  out.push_back(ref_of("pos", p.pos));
  for (size_t i = 0; i < p.layers.size(); ++i) {
    auto& l = p.layers[i];
    const std::string pre = "layer" + std::to_string(i) + ".";
    out.push_back(ref_of(pre + "wq", l.wq));
    out.push_back(ref_of(pre + "wk", l.wk));
    out.push_back(ref_of(pre + "wv", l.wv));
    out.push_back(ref_of(pre + "wo", l.wo));
    out.push_back(ref_of(pre + "bq", l.bq));
    out.push_back(ref_of(pre + "bk", l.bk));
    out.push_back(ref_of(pre + "bv", l.bv));
    out.push_back(ref_of(pre + "bo", l.bo));
    out.push_back(ref_of(pre + "norm1_g", l.norm1_g));
    out.push_back(ref_of(pre + "norm2_g", l.norm2_g));
    out.push_back(ref_of(pre + "w1", l.w1));
    out.push_back(ref_of(pre + "w2", l.w2));
    out.push_back(ref_of(pre + "b1", l.b1));
    out.push_back(ref_of(pre + "b2", l.b2));
  }
  out.push_back(ref_of("normf_g", p.normf_g));
  out.push_back(ref_of("wout", p.wout));
  out.push_back(ref_of("bout", p.bout));
  return out;
}

LoraAdapter init_adapter(const ModelConfig& cfg, int rank, double scale, uint64_t seed) {
  if (rank < 1) throw std::invalid_argument("adapter: rank must be >= 1");
  Rng rng(seed);
  LoraAdapter a;
  a.rank = rank;
  a.scale = scale;
  const double init = 1.0 / std::sqrt(static_cast<double>(rank));
  auto make_pair = [&](int in, int out) {
    LoraPair lp;
    lp.a = Mat(in, rank);
    fill_gaussian(lp.a, rng, init);
    lp.b = Mat(rank, out);  // zero: adapter starts as identity
    return lp;
  };
  a.layers.resize(cfg.n_layers);
  for (auto& l : a.layers) {
    l.q = make_pair(cfg.d_model, cfg.d_model);
    l.v = make_pair(cfg.d_model, cfg.d_model);
  }
  a.out = make_pair(cfg.d_model, cfg.vocab);
  return a;
}

LoraAdapter zeros_like(const LoraAdapter& a) {
  LoraAdapter z = a;
  for (auto& l : z.layers) {
    l.q.a.zero();
    l.q.b.zero();
    l.v.a.zero();
    l.v.b.zero();
  }
  z.out.a.zero();
  z.out.b.zero();
  return z;
}

std::vector<TensorRef> collect_tensors(LoraAdapter& a) {
  std::vector<TensorRef> out;
  for (size_t i = 0; i < a.layers.size(); ++i) {
    const std::string pre = "adapter.layer" + std::to_string(i) + ".";
    out.push_back(ref_of(pre + "q.a", a.layers[i].q.a));
    out.push_back(ref_of(pre + "q.b", a.layers[i].q.b));
    out.push_back(ref_of(pre + "v.a", a.layers[i].v.a));
    out.push_back(ref_of(pre + "v.b", a.layers[i].v.b));
  }
  out.push_back(ref_of("adapter.out.a", a.out.a));
  out.push_back(ref_of("adapter.out.b", a.out.b));
  return out;
}

Mat effective_weight(const Mat& base, const LoraPair& lp, double scale) {
  Mat delta = matmul(lp.a, lp.b);
  Mat out = base;
  axpy(out, scale, delta);
  return out;
}

Mat forward_logits(const ModelParams& p, const LoraAdapter* adapter, const TokenSeq& ctx,
                   ForwardCache* cache) {
  const ModelConfig& cfg = p.cfg;
  const int n = static_cast<int>(ctx.size());
  if (n == 0) throw std::invalid_argument("forward: empty context");
  if (n > cfg.max_seq) throw std::invalid_argument("forward: context longer than max_seq");
  if (adapter && static_cast<int>(adapter->layers.size()) != cfg.n_layers)
    throw std::invalid_argument("forward: adapter layer count mismatch");

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.n = n;
  c.valid.assign(ctx.mask.begin(), ctx.mask.end());
  c.layers.assign(cfg.n_layers, {});

  Mat h(n, cfg.d_model);
  for (int i = 0; i < n; ++i) {
    const int id = ctx.ids[i];
    if (id < 0 || id >= cfg.vocab) throw std::invalid_argument("forward: token id out of range");
    for (int j = 0; j < cfg.d_model; ++j) h.at(i, j) = p.embed.at(id, j) + p.pos.at(i, j);
  }
  c.x = h;

  const int dh = cfg.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  for (int li = 0; li < cfg.n_layers; ++li) {
    const LayerParams& l = p.layers[li];
    auto& lc = c.layers[li];
    lc.h_in = h;
    lc.n1 = rmsnorm(h, l.norm1_g);

    lc.wq_eff = adapter ? effective_weight(l.wq, adapter->layers[li].q, adapter->scale) : l.wq;
    lc.wv_eff = adapter ? effective_weight(l.wv, adapter->layers[li].v, adapter->scale) : l.wv;
    lc.q = matmul(lc.n1, lc.wq_eff);
    add_bias(lc.q, l.bq);
    lc.k = matmul(lc.n1, l.wk);
    add_bias(lc.k, l.bk);
    lc.v = matmul(lc.n1, lc.wv_eff);
    add_bias(lc.v, l.bv);

    lc.ctx = Mat(n, cfg.d_model);
    lc.attn.assign(cfg.n_heads, Mat(n, n));
    for (int hh = 0; hh < cfg.n_heads; ++hh) {
      const int off = hh * dh;
      Mat& attn = lc.attn[hh];
      for (int i = 0; i < n; ++i) {
        if (!c.valid[i]) continue;  // probability row stays zero
        double mx = -std::numeric_limits<double>::infinity();
        std::vector<double> sc(i + 1, 0.0);
        for (int j = 0; j <= i; ++j) {
          if (!c.valid[j]) {
            sc[j] = -std::numeric_limits<double>::infinity();
            continue;
          }
          double s = 0.0;
          for (int k = 0; k < dh; ++k) s += lc.q.at(i, off + k) * lc.k.at(j, off + k);
          sc[j] = s * inv_sqrt_dh;
          mx = std::max(mx, sc[j]);
        }
        double z = 0.0;
        for (int j = 0; j <= i; ++j) {
          if (!std::isfinite(sc[j])) continue;
          sc[j] = std::exp(sc[j] - mx);
          z += sc[j];
        }
        for (int j = 0; j <= i; ++j) {
          if (!std::isfinite(sc[j]) || sc[j] == 0.0) continue;
          attn.at(i, j) = sc[j] / z;
        }
        for (int j = 0; j <= i; ++j) {
          const double pij = attn.at(i, j);
          if (pij == 0.0) continue;
          for (int k = 0; k < dh; ++k) lc.ctx.at(i, off + k) += pij * lc.v.at(j, off + k);
        }
      }
    }

    Mat attn_out = matmul(lc.ctx, l.wo);
    add_bias(attn_out, l.bo);
    add_inplace(h, attn_out);
    lc.h_mid = h;

    lc.n2 = rmsnorm(h, l.norm2_g);
    lc.f1 = matmul(lc.n2, l.w1);
    add_bias(lc.f1, l.b1);
    lc.a1 = Mat(n, cfg.d_ff);
    for (size_t i = 0; i < lc.f1.v.size(); ++i) {
      const double f = lc.f1.v[i];
      lc.a1.v[i] = f * sigmoid(f);
    }
    Mat f2 = matmul(lc.a1, l.w2);
    add_bias(f2, l.b2);
    add_inplace(h, f2);
  }

  c.h_final = h;
  c.nf = rmsnorm(h, p.normf_g);
  c.wout_eff = adapter ? effective_weight(p.wout, adapter->out, adapter->scale) : p.wout;
  Mat logits = matmul(c.nf, c.wout_eff);
  add_bias(logits, p.bout);
  return logits;
}

std::vector<double> dist_from_logits(const double* logits, int vocab, int pad_id) {
  double mx = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < vocab; ++i) {
    if (i == pad_id) continue;
    mx = std::max(mx, logits[i]);
  }
  std::vector<double> probs(vocab, 0.0);
  double z = 0.0;
  for (int i = 0; i < vocab; ++i) {
    if (i == pad_id) continue;
    probs[i] = std::exp(logits[i] - mx);
    z += probs[i];
  }
  for (double& x : probs) x /= z;
  return probs;
}

NextTokenDist next_token_dist(const ModelParams& p, const LoraAdapter* adapter,
                              const TokenSeq& ctx) {
  if (ctx.valid_count() == 0) throw std::invalid_argument("next_token_dist: empty context");
  Mat logits = forward_logits(p, adapter, ctx);
  int last = -1;
  for (int i = static_cast<int>(ctx.size()) - 1; i >= 0; --i) {
    if (ctx.mask[i]) {
      last = i;
      break;
    }
  }
  NextTokenDist out;
  out.probs = dist_from_logits(logits.row(last), p.cfg.vocab, p.cfg.pad_id);
  return out;
}

namespace {

// Splits a gradient on an effective weight into base and adapter gradients.
void split_eff_grad(const Mat& dw_eff, const Mat* base_w, const LoraPair* lp, double scale,
                    Mat* dbase, LoraPair* dlp) {
  (void)base_w;
  if (dbase) add_inplace(*dbase, dw_eff);
  if (dlp && lp) {
    // dA += s * dW_eff * B^T ; dB += s * A^T * dW_eff
    Mat da = matmul_bt(dw_eff, lp->b);
    axpy(dlp->a, scale, da);
    Mat db = matmul_at(lp->a, dw_eff);
    axpy(dlp->b, scale, db);
  }
}

void add_vec(Vec& a, const Vec& b) {
  for (size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

}  // namespace

void backward(const ModelParams& p, const LoraAdapter* adapter, const TokenSeq& ctx,
              const ForwardCache& c, const Mat& dlogits, ModelParams* base_grads,
              LoraAdapter* adapter_grads) {
  const ModelConfig& cfg = p.cfg;
  const int n = c.n;
  const int dh = cfg.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  // output head
  Mat dnf = matmul_bt(dlogits, c.wout_eff);
  Mat dwout_eff = matmul_at(c.nf, dlogits);
  split_eff_grad(dwout_eff, &p.wout, adapter ? &adapter->out : nullptr,
                 adapter ? adapter->scale : 0.0, base_grads ? &base_grads->wout : nullptr,
                 adapter_grads ? &adapter_grads->out : nullptr);
  if (base_grads) add_vec(base_grads->bout, col_sums(dlogits));

  Mat dh_ = rmsnorm_backward(c.h_final, p.normf_g, dnf, base_grads ? &base_grads->normf_g : nullptr);

  for (int li = cfg.n_layers - 1; li >= 0; --li) {
    const LayerParams& l = p.layers[li];
    const auto& lc = c.layers[li];
    LayerParams* gl = base_grads ? &base_grads->layers[li] : nullptr;
    LoraAdapter::LayerLora* al = adapter_grads ? &adapter_grads->layers[li] : nullptr;
    const LoraAdapter::LayerLora* ap = adapter ? &adapter->layers[li] : nullptr;

    // feed-forward sublayer: h = h_mid + silu(n2*W1+b1)*W2+b2
    const Mat& df2 = dh_;
    Mat da1 = matmul_bt(df2, l.w2);
    if (gl) {
      add_inplace(gl->w2, matmul_at(lc.a1, df2));
      add_vec(gl->b2, col_sums(df2));
    }
    Mat df1(n, cfg.d_ff);
    for (size_t i = 0; i < df1.v.size(); ++i) {
      const double f = lc.f1.v[i];
      const double s = sigmoid(f);
      df1.v[i] = da1.v[i] * s * (1.0 + f * (1.0 - s));
    }
    if (gl) {
      add_inplace(gl->w1, matmul_at(lc.n2, df1));
      add_vec(gl->b1, col_sums(df1));
    }
    Mat dn2 = matmul_bt(df1, l.w1);
    Mat dh_mid = dh_;  // residual branch
    add_inplace(dh_mid, rmsnorm_backward(lc.h_mid, l.norm2_g, dn2, gl ? &gl->norm2_g : nullptr));

    // attention sublayer: h_mid = h_in + ctx*Wo+bo
    const Mat& dattn_out = dh_mid;
    Mat dctx = matmul_bt(dattn_out, l.wo);
    if (gl) {
      add_inplace(gl->wo, matmul_at(lc.ctx, dattn_out));
      add_vec(gl->bo, col_sums(dattn_out));
    }

    Mat dq(n, cfg.d_model), dk(n, cfg.d_model), dv(n, cfg.d_model);
    for (int hh = 0; hh < cfg.n_heads; ++hh) {
      const int off = hh * dh;
      const Mat& attn = lc.attn[hh];
      for (int i = 0; i < n; ++i) {
        if (!c.valid[i]) continue;
        // dattn and dv from ctx_i = sum_j attn_ij v_j
        std::vector<double> dp(i + 1, 0.0);
        for (int j = 0; j <= i; ++j) {
          const double pij = attn.at(i, j);
          double d = 0.0;
          for (int k = 0; k < dh; ++k) d += dctx.at(i, off + k) * lc.v.at(j, off + k);
          dp[j] = d;
          if (pij != 0.0)
            for (int k = 0; k < dh; ++k) dv.at(j, off + k) += pij * dctx.at(i, off + k);
        }
        // softmax backward on row i
        double pdp = 0.0;
        for (int j = 0; j <= i; ++j) pdp += attn.at(i, j) * dp[j];
        for (int j = 0; j <= i; ++j) {
          const double pij = attn.at(i, j);
          if (pij == 0.0) continue;
          const double ds = pij * (dp[j] - pdp) * inv_sqrt_dh;
          for (int k = 0; k < dh; ++k) {
            dq.at(i, off + k) += ds * lc.k.at(j, off + k);
            dk.at(j, off + k) += ds * lc.q.at(i, off + k);
          }
        }
      }
    }

    Mat dn1 = matmul_bt(dq, lc.wq_eff);
    add_inplace(dn1, matmul_bt(dk, l.wk));
    add_inplace(dn1, matmul_bt(dv, lc.wv_eff));
    Mat dwq_eff = matmul_at(lc.n1, dq);
    Mat dwv_eff = matmul_at(lc.n1, dv);
    split_eff_grad(dwq_eff, &l.wq, ap ? &ap->q : nullptr, adapter ? adapter->scale : 0.0,
                   gl ? &gl->wq : nullptr, al ? &al->q : nullptr);
    split_eff_grad(dwv_eff, &l.wv, ap ? &ap->v : nullptr, adapter ? adapter->scale : 0.0,
                   gl ? &gl->wv : nullptr, al ? &al->v : nullptr);
    if (gl) {
      add_inplace(gl->wk, matmul_at(lc.n1, dk));
      add_vec(gl->bq, col_sums(dq));
      add_vec(gl->bk, col_sums(dk));
      add_vec(gl->bv, col_sums(dv));
    }

    Mat dh_in = dh_mid;  // residual branch
    add_inplace(dh_in, rmsnorm_backward(lc.h_in, l.norm1_g, dn1, gl ? &gl->norm1_g : nullptr));
    dh_ = dh_in;
  }

  if (base_grads) {
    for (int i = 0; i < n; ++i) {
      const int id = ctx.ids[i];
      for (int j = 0; j < cfg.d_model; ++j) {
        base_grads->embed.at(id, j) += dh_.at(i, j);
        base_grads->pos.at(i, j) += dh_.at(i, j);
      }
    }
  }
}

}  // namespace aligncap
