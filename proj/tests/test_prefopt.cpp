#include <doctest.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "aligncap/prefopt.hpp"

using namespace aligncap;

namespace {

ClueVocabulary judge_vocab() {
  return ClueVocabulary({{"sad", ClueCategory::Adjective},
                         {"low tone", ClueCategory::Tone},
                         {"slow rhythm", ClueCategory::Rhythm}});
}

JointCodebook tiny_codebook() { return JointCodebook({"a", "b", "c", "."}, 3); }

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

std::vector<PreferencePair> tiny_pairs(const JointCodebook& cb) {
  std::vector<PreferencePair> pairs;
  PreferencePair a;
  a.x = TokenSeq({cb.special().bos, cb.speech_token(0)});
  a.chosen = TokenSeq({*cb.text_id("a"), *cb.text_id(".")});
  a.rejected = TokenSeq({*cb.text_id("b"), *cb.text_id(".")});
  a.chosen_score = 9.0;
  a.rejected_score = 2.0;
  pairs.push_back(a);
  PreferencePair b;
  b.x = TokenSeq({cb.special().bos, cb.speech_token(2)});
  b.chosen = TokenSeq({*cb.text_id("c"), *cb.text_id(".")});
  b.rejected = TokenSeq({*cb.text_id("b"), *cb.text_id("a"), *cb.text_id(".")});
  b.chosen_score = 8.0;
  b.rejected_score = 1.0;
  pairs.push_back(b);
  return pairs;
}

}  // namespace

TEST_CASE("mock judge scores clue overlap on a 0-10 scale") {
  MockJudge judge(judge_vocab());
  const std::string ref = "a sad voice with a low tone";  // clues: sad, low tone
  auto scores = judge.score(ref, {"a sad voice with a low tone", "sounding sad today",
                                  "bright and cheerful", "sad with low tone and slow rhythm"});
  REQUIRE(scores.size() == 4);
  CHECK(scores[0] == doctest::Approx(10.0).epsilon(1e-12));
  // precision 1, recall 1/2 -> F1 = 2/3
  CHECK(scores[1] == doctest::Approx(10.0 * 2.0 / 3.0).epsilon(1e-12));
  CHECK(scores[2] == 0.0);
  // precision 2/3, recall 1 -> F1 = 4/5
  CHECK(scores[3] == doctest::Approx(8.0).epsilon(1e-12));

  // no clues on either side: vacuously perfect agreement
  CHECK(judge.score("plain speech", {"more plain speech"})[0] == doctest::Approx(10.0));
  // reference has clues, candidate none
  CHECK(judge.score(ref, {"plain speech"})[0] == 0.0);
}

TEST_CASE("score prompt lists the reference and numbered candidates") {
  std::string p = build_score_prompt("a sad voice", {"first cap", "second cap"});
  CHECK(p.find("\"a sad voice\"") != std::string::npos);
  CHECK(p.find("Candidate 1: \"first cap\"") != std::string::npos);
  CHECK(p.find("Candidate 2: \"second cap\"") != std::string::npos);
  CHECK(p.find("0 to 10") != std::string::npos);
}

TEST_CASE("judge selector parsing") {
  ClueVocabulary v = judge_vocab();
  CHECK(dynamic_cast<MockJudge*>(make_judge("mock", v).get()) != nullptr);
  CHECK(dynamic_cast<HttpJudge*>(make_judge("localhost:9000", v).get()) != nullptr);
  CHECK(dynamic_cast<HttpJudge*>(make_judge("http://localhost:9000/judge", v).get()) != nullptr);
  CHECK_THROWS(make_judge("localhost", v));
}

TEST_CASE("http judge speaks the wire protocol with auth and retries") {
  httplib::Server server;
  std::atomic<int> calls{0};
  nlohmann::json seen_body;
  std::string seen_auth;

  server.Post("/score", [&](const httplib::Request& req, httplib::Response& res) {
    const int call = ++calls;
    seen_auth = req.get_header_value("Authorization");
    seen_body = nlohmann::json::parse(req.body);
    if (call == 1) {  // first attempt fails; the client must retry
      res.status = 500;
      return;
    }
    const auto n = seen_body["candidates"].size();
    nlohmann::json reply = {{"scores", std::vector<double>(n, 7.5)}};
    res.set_content(reply.dump(), "application/json");
  });

  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  setenv("ALIGNCAP_JUDGE_TOKEN", "sekrit-token", 1);
  HttpJudge judge("127.0.0.1", port);
  auto scores = judge.score("a sad voice", {"cap one", "cap two"});
  unsetenv("ALIGNCAP_JUDGE_TOKEN");

  CHECK(calls == 2);
  CHECK(scores == std::vector<double>{7.5, 7.5});
  CHECK(seen_auth == "Bearer sekrit-token");
  CHECK(seen_body["candidates"] == nlohmann::json({"cap one", "cap two"}));
  CHECK(seen_body["prompt"].get<std::string>().find("a sad voice") != std::string::npos);

  server.stop();
  th.join();
}

TEST_CASE("http judge rejects malformed responses by name") {
  httplib::Server server;
  server.Post("/score", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content("{\"totally\": \"wrong\"}", "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  HttpJudge judge("127.0.0.1", port);
  bool threw = false;
  try {
    judge.score("r", {"c"});
  } catch (const std::runtime_error& e) {
    threw = true;
    CHECK(std::string(e.what()).find("scores") != std::string::npos);
  }
  CHECK(threw);

  server.stop();
  th.join();
}

TEST_CASE("pair construction takes the earliest best candidate and drops ties") {
  JointCodebook cb = tiny_codebook();
  TokenSeq x({cb.special().bos, cb.speech_token(0)});
  std::vector<TokenSeq> cands = {TokenSeq({0}), TokenSeq({1}), TokenSeq({2}), TokenSeq({3})};

  auto pairs = build_pairs(x, cands, {3.0, 9.0, 9.0, 4.0});
  // earliest argmax is index 1; index 2 ties with it and is dropped
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].chosen.ids == std::vector<int>{1});
  CHECK(pairs[0].rejected.ids == std::vector<int>{0});
  CHECK(pairs[1].rejected.ids == std::vector<int>{3});
  CHECK(pairs[0].chosen_score == 9.0);
  CHECK(pairs[0].rejected_score == 3.0);

  CHECK_THROWS(build_pairs(x, cands, {5.0, 5.0, 5.0, 5.0}));
  CHECK_THROWS(build_pairs(x, {TokenSeq({0})}, {1.0}));
}

TEST_CASE("policy equal to reference gives exactly log 2") {
  JointCodebook cb = tiny_codebook();
  ModelConfig cfg = tiny_config(cb);
  ModelParams m = init_model(cfg, 7);
  LoraAdapter a = init_adapter(cfg, 2, 2.0, 8);
  auto pairs = tiny_pairs(cb);
  for (double beta : {0.05, 0.1, 1.0}) {
    CHECK(dpo_loss(m, a, m, a, pairs, beta) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-14));
  }
}

TEST_CASE("dpo loss matches a by-hand recomputation") {
  JointCodebook cb = tiny_codebook();
  ModelConfig cfg = tiny_config(cb);
  ModelParams policy = init_model(cfg, 11);
  ModelParams ref = init_model(cfg, 12);
  LoraAdapter pa = init_adapter(cfg, 2, 2.0, 13);
  LoraAdapter ra = init_adapter(cfg, 2, 2.0, 14);
  Rng r(15);
  for (double& x : pa.out.b.v) x = 0.3 * r.gaussian();
  auto pairs = tiny_pairs(cb);
  const double beta = 0.37;

  double want = 0.0;
  for (const auto& pp : pairs) {
    const double z = beta * ((sequence_logprob(policy, &pa, pp.x, pp.chosen) -
                              sequence_logprob(ref, &ra, pp.x, pp.chosen)) -
                             (sequence_logprob(policy, &pa, pp.x, pp.rejected) -
                              sequence_logprob(ref, &ra, pp.x, pp.rejected)));
    want += std::log1p(std::exp(-z)) / pairs.size();
  }
  CHECK(dpo_loss(policy, pa, ref, ra, pairs, beta) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("dpo gradient matches finite differences") {
  JointCodebook cb = tiny_codebook();
  ModelConfig cfg = tiny_config(cb);
  ModelParams policy = init_model(cfg, 21);
  ModelParams ref = init_model(cfg, 22);
  LoraAdapter pa = init_adapter(cfg, 2, 2.0, 23);
  LoraAdapter ra = init_adapter(cfg, 2, 2.0, 24);
  Rng r(25);
  for (double& x : pa.out.b.v) x = 0.2 * r.gaussian();
  auto pairs = tiny_pairs(cb);
  const double beta = 0.5;

  LoraAdapter grads = zeros_like(pa);
  dpo_grad(policy, pa, ref, ra, pairs, beta, nullptr, &grads);

  const double eps = 1e-6;
  Rng pick(26);
  auto live = collect_tensors(pa);
  auto gref = collect_tensors(grads);
  for (size_t t = 0; t < live.size(); ++t) {
    for (int c = 0; c < 3; ++c) {
      const size_t idx = pick.uniform_int(0, static_cast<int>(live[t].size) - 1);
      const double keep = live[t].data[idx];
      live[t].data[idx] = keep + eps;
      const double up = dpo_loss(policy, pa, ref, ra, pairs, beta);
      live[t].data[idx] = keep - eps;
      const double dn = dpo_loss(policy, pa, ref, ra, pairs, beta);
      live[t].data[idx] = keep;
      CHECK(gref[t].data[idx] == doctest::Approx((up - dn) / (2.0 * eps)).epsilon(1e-4));
    }
  }
}

TEST_CASE("preference training raises the margin and leaves the reference alone") {
  JointCodebook cb = tiny_codebook();
  ModelConfig cfg = tiny_config(cb);
  ModelParams policy = init_model(cfg, 31);
  LoraAdapter adapter = init_adapter(cfg, 2, 2.0, 32);
  LoraAdapter ref_adapter = adapter;  // frozen copy
  auto pairs = tiny_pairs(cb);

  PoConfig pc;
  pc.beta = 0.5;
  pc.learning_rate = 0.5;
  pc.max_steps = 40;
  pc.batch_size = 2;
  pc.seed = 9;

  PoStats before = po_stats(policy, adapter, pairs);
  auto log = train_po(policy, adapter, policy, ref_adapter, pairs, pc);
  REQUIRE(log.size() == 40);
  PoStats after = po_stats(policy, adapter, pairs);
  CHECK(after.margin > before.margin);
  CHECK(after.accuracy == 1.0);
  CHECK(dpo_loss(policy, adapter, policy, ref_adapter, pairs, pc.beta) < std::log(2.0));

  // reference adapter bytes untouched
  LoraAdapter pristine = init_adapter(cfg, 2, 2.0, 32);
  auto ra = collect_tensors(ref_adapter);
  auto pr = collect_tensors(pristine);
  for (size_t i = 0; i < ra.size(); ++i)
    for (size_t j = 0; j < ra[i].size; ++j) CHECK(ra[i].data[j] == pr[i].data[j]);

  // deterministic rerun
  LoraAdapter adapter2 = init_adapter(cfg, 2, 2.0, 32);
  ModelParams policy2 = init_model(cfg, 31);
  auto log2 = train_po(policy2, adapter2, policy2, ref_adapter, pairs, pc);
  for (size_t i = 0; i < log.size(); ++i) {
    CHECK(log[i].loss == log2[i].loss);
    CHECK(log[i].margin == log2[i].margin);
  }
}

TEST_CASE("candidate generation dedups and needs at least two beams") {
  JointCodebook cb = tiny_codebook();
  ModelConfig cfg = tiny_config(cb);
  ModelParams p = init_model(cfg, 41);
  TokenSeq x({cb.special().bos, cb.speech_token(1)});
  DecodeConfig dc;
  dc.max_len = 4;
  auto cands = generate_candidates(p, nullptr, x, 6, dc, cb);
  CHECK(!cands.empty());
  for (size_t i = 0; i < cands.size(); ++i) {
    CHECK(!cands[i].empty());
    for (size_t j = i + 1; j < cands.size(); ++j) CHECK(cands[i].ids != cands[j].ids);
  }
  CHECK_THROWS(generate_candidates(p, nullptr, x, 1, dc, cb));
}

TEST_CASE("po config validation and metrics output") {
  PoConfig pc;
  CHECK_NOTHROW(pc.validate());
  pc.beta = 0.0;
  CHECK_THROWS(pc.validate());
  pc = PoConfig{};
  pc.batch_size = 0;
  CHECK_THROWS(pc.validate());
}
