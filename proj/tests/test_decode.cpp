#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "aligncap/decode.hpp"
#include "aligncap/model.hpp"

using namespace aligncap;

namespace {

JointCodebook tiny_codebook() { return JointCodebook({"a", "b", "."}, 2); }

ModelConfig tiny_config(const JointCodebook& cb) {
  ModelConfig cfg;
  cfg.vocab = cb.vocab_size();
  cfg.d_model = 4;
  cfg.n_layers = 1;
  cfg.n_heads = 1;
  cfg.d_ff = 8;
  cfg.max_seq = 24;
  cfg.pad_id = cb.special().pad;
  return cfg;
}

double chain_logprob(const ModelParams& p, const TokenSeq& prefix, const std::vector<int>& resp) {
  TokenSeq ctx = prefix;
  double lp = 0.0;
  for (int tok : resp) {
    NextTokenDist d = next_token_dist(p, nullptr, ctx);
    lp += std::log(d.probs[tok]);
    ctx.push(tok);
  }
  return lp;
}

// Every reachable finished hypothesis under the stop rules: EOS finishes
// without being emitted, a period token finishes and is emitted, and the
// length bound finishes whatever is left.
void enumerate_finished(const ModelParams& p, const JointCodebook& cb, const TokenSeq& prefix,
                        std::vector<int>& cur, double lp, int max_len,
                        std::vector<Hypothesis>& out) {
  {
    TokenSeq ctx = prefix;
    for (int t : cur) ctx.push(t);
    NextTokenDist d = next_token_dist(p, nullptr, ctx);
    // EOS branch
    if (d.probs[cb.special().eos] > 0.0) {
      Hypothesis h;
      h.tokens = TokenSeq(cur);
      h.logprob = lp + std::log(d.probs[cb.special().eos]);
      out.push_back(h);
    }
    for (int tok = 0; tok < cb.vocab_size(); ++tok) {
      if (tok == cb.special().eos || d.probs[tok] <= 0.0) continue;
      const double nlp = lp + std::log(d.probs[tok]);
      cur.push_back(tok);
      if (cb.token_contains_period(tok) || static_cast<int>(cur.size()) == max_len) {
        Hypothesis h;
        h.tokens = TokenSeq(cur);
        h.logprob = nlp;
        out.push_back(h);
      } else {
        enumerate_finished(p, cb, prefix, cur, nlp, max_len, out);
      }
      cur.pop_back();
    }
  }
}

}  // namespace

TEST_CASE("greedy output respects the stop rules") {
  JointCodebook cb = tiny_codebook();
  DecodeConfig cfg;
  cfg.max_len = 6;
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    ModelParams p = init_model(tiny_config(cb), seed);
    TokenSeq prefix({cb.special().bos, cb.speech_token(0), cb.speech_token(1)});
    TokenSeq out = greedy_decode(p, nullptr, prefix, cfg, cb);
    CHECK(out.size() <= static_cast<size_t>(cfg.max_len));
    for (size_t i = 0; i < out.size(); ++i) {
      CHECK(out.ids[i] != cb.special().eos);
      CHECK(out.ids[i] != cb.special().pad);
      if (cb.token_contains_period(out.ids[i])) CHECK(i + 1 == out.size());
    }
    // each emitted token is the per-step argmax
    TokenSeq ctx = prefix;
    for (int tok : out.ids) {
      NextTokenDist d = next_token_dist(p, nullptr, ctx);
      for (int j = 0; j < cb.vocab_size(); ++j) CHECK(d.probs[tok] >= d.probs[j]);
      ctx.push(tok);
    }
  }
}

TEST_CASE("beam width 1 reproduces greedy decoding exactly") {
  JointCodebook cb = tiny_codebook();
  DecodeConfig cfg;
  cfg.max_len = 6;
  cfg.beam_width = 1;
  for (uint64_t seed = 100; seed < 140; ++seed) {
    ModelParams p = init_model(tiny_config(cb), seed);
    TokenSeq prefix({cb.special().bos, cb.speech_token(seed % 2)});
    TokenSeq greedy = greedy_decode(p, nullptr, prefix, cfg, cb);
    auto beams = beam_decode(p, nullptr, prefix, cfg, cb);
    REQUIRE(beams.size() == 1);
    CHECK(beams[0].tokens.ids == greedy.ids);
  }
}

TEST_CASE("wide beam matches exhaustive enumeration") {
  JointCodebook cb = tiny_codebook();
  DecodeConfig cfg;
  cfg.max_len = 3;
  cfg.beam_width = 4000;  // larger than the candidate space: exact search
  for (uint64_t seed = 7; seed < 13; ++seed) {
    ModelParams p = init_model(tiny_config(cb), seed);
    TokenSeq prefix({cb.special().bos, cb.speech_token(0)});

    std::vector<Hypothesis> all;
    std::vector<int> cur;
    enumerate_finished(p, cb, prefix, cur, 0.0, cfg.max_len, all);
    std::stable_sort(all.begin(), all.end(), [](const Hypothesis& a, const Hypothesis& b) {
      if (a.logprob != b.logprob) return a.logprob > b.logprob;
      return a.tokens.ids < b.tokens.ids;
    });

    auto beams = beam_decode(p, nullptr, prefix, cfg, cb);
    REQUIRE(beams.size() == all.size());
    for (size_t i = 0; i < all.size(); ++i) {
      CHECK(beams[i].tokens.ids == all[i].tokens.ids);
      CHECK(beams[i].logprob == doctest::Approx(all[i].logprob).epsilon(1e-9));
    }
  }
}

TEST_CASE("narrow beams return sorted, deduplicated-by-construction results") {
  JointCodebook cb = tiny_codebook();
  DecodeConfig cfg;
  cfg.max_len = 4;
  cfg.beam_width = 3;
  for (uint64_t seed = 50; seed < 60; ++seed) {
    ModelParams p = init_model(tiny_config(cb), seed);
    TokenSeq prefix({cb.special().bos, cb.speech_token(1)});
    auto beams = beam_decode(p, nullptr, prefix, cfg, cb);
    CHECK(!beams.empty());
    CHECK(beams.size() <= 3);
    for (size_t i = 1; i < beams.size(); ++i) CHECK(beams[i - 1].logprob >= beams[i].logprob);
    for (const auto& h : beams) {
      double want = chain_logprob(p, prefix, h.tokens.ids);
      if (h.tokens.empty() || !cb.token_contains_period(h.tokens.ids.back())) {
        // finished by EOS or by the length bound; EOS adds its own logprob
        if (h.tokens.size() < static_cast<size_t>(cfg.max_len)) {
          TokenSeq ctx = prefix;
          for (int t : h.tokens.ids) ctx.push(t);
          want += std::log(next_token_dist(p, nullptr, ctx).probs[cb.special().eos]);
        }
      }
      CHECK(h.logprob == doctest::Approx(want).epsilon(1e-9));
    }
  }
}

TEST_CASE("sequence_logprob equals the chained next-token log-probabilities") {
  JointCodebook cb = tiny_codebook();
  ModelParams p = init_model(tiny_config(cb), 77);
  TokenSeq ctx({cb.special().bos, cb.speech_token(0), cb.speech_token(1)});
  std::vector<int> resp_ids = {*cb.text_id("a"), *cb.text_id("b"), *cb.text_id(".")};
  TokenSeq resp(resp_ids);

  const double got = sequence_logprob(p, nullptr, ctx, resp);
  double want = 0.0;
  TokenSeq chain = ctx;
  for (int tok : resp_ids) {
    want += std::log(next_token_dist(p, nullptr, chain).probs[tok]);
    chain.push(tok);
  }
  CHECK(got == doctest::Approx(want).epsilon(1e-10));
  CHECK(got < 0.0);
}

TEST_CASE("padded response positions are skipped in scoring") {
  JointCodebook cb = tiny_codebook();
  ModelParams p = init_model(tiny_config(cb), 78);
  TokenSeq ctx({cb.special().bos, cb.speech_token(1)});
  TokenSeq resp({*cb.text_id("a"), *cb.text_id("b")});
  TokenSeq padded = resp;
  padded.push(cb.special().pad, false);
  padded.push(cb.special().pad, false);
  CHECK(sequence_logprob(p, nullptr, ctx, padded) ==
        doctest::Approx(sequence_logprob(p, nullptr, ctx, resp)).epsilon(1e-12));
}

TEST_CASE("sequence_logprob_grad matches finite differences on the adapter") {
  JointCodebook cb = tiny_codebook();
  ModelConfig cfg = tiny_config(cb);
  ModelParams p = init_model(cfg, 80);
  LoraAdapter adapter = init_adapter(cfg, 2, 2.0, 81);
  Rng r(82);
  for (double& x : adapter.out.b.v) x = 0.2 * r.gaussian();
  for (double& x : adapter.layers[0].q.b.v) x = 0.2 * r.gaussian();

  TokenSeq ctx({cb.special().bos, cb.speech_token(0)});
  TokenSeq resp({*cb.text_id("a"), *cb.text_id(".")});

  LoraAdapter grads = zeros_like(adapter);
  const double weight = 1.7;
  sequence_logprob_grad(p, &adapter, ctx, resp, weight, nullptr, &grads);

  const double eps = 1e-6;
  Rng pick(83);
  auto live = collect_tensors(adapter);
  auto gref = collect_tensors(grads);
  for (size_t t = 0; t < live.size(); ++t) {
    for (int c = 0; c < 3; ++c) {
      const size_t idx = pick.uniform_int(0, static_cast<int>(live[t].size) - 1);
      const double keep = live[t].data[idx];
      live[t].data[idx] = keep + eps;
      const double up = sequence_logprob(p, &adapter, ctx, resp);
      live[t].data[idx] = keep - eps;
      const double dn = sequence_logprob(p, &adapter, ctx, resp);
      live[t].data[idx] = keep;
      const double fd = weight * (up - dn) / (2.0 * eps);
      CHECK(gref[t].data[idx] == doctest::Approx(fd).epsilon(1e-4));
    }
  }
}

TEST_CASE("decode input validation") {
  JointCodebook cb = tiny_codebook();
  ModelParams p = init_model(tiny_config(cb), 5);
  DecodeConfig cfg;
  CHECK_THROWS(greedy_decode(p, nullptr, TokenSeq{}, cfg, cb));
  DecodeConfig bad;
  bad.beam_width = 0;
  CHECK_THROWS(beam_decode(p, nullptr, TokenSeq({cb.special().bos}), bad, cb));
  CHECK_THROWS(sequence_logprob(p, nullptr, TokenSeq({cb.special().bos}), TokenSeq{}));
}
