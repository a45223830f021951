#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>

#include "aligncap/datastore.hpp"
#include "aligncap/emoparse.hpp"

using namespace aligncap;

namespace {

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) {
    path = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

void expect_error_containing(const std::function<void()>& fn, const std::string& needle) {
  bool threw = false;
  try {
    fn();
  } catch (const std::exception& e) {
    threw = true;
    CHECK(std::string(e.what()).find(needle) != std::string::npos);
  }
  CHECK(threw);
}

}  // namespace

TEST_CASE("speech-caption pairs round-trip through jsonl") {
  TempDir tmp("aligncap_ds_pairs");
  SynthSpec spec;
  spec.n_items = 10;
  spec.seed = 4;
  SynthData data = synth_dataset(spec);

  std::vector<SpeechCaptionPair> pairs = data.pairs;
  pairs[0].transcript = "what a day";
  save_pairs(pairs, tmp.file("pairs.jsonl"));
  auto loaded = load_pairs(tmp.file("pairs.jsonl"), data.codebook);
  REQUIRE(loaded.size() == pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    CHECK(loaded[i].id == pairs[i].id);
    CHECK(loaded[i].speech_tokens == pairs[i].speech_tokens);
    CHECK(loaded[i].caption == pairs[i].caption);
    CHECK(loaded[i].transcript == pairs[i].transcript);
  }
}

TEST_CASE("pair loading errors name the line and the field") {
  TempDir tmp("aligncap_ds_badpairs");
  SynthSpec spec;
  spec.n_items = 2;
  SynthData data = synth_dataset(spec);

  {
    std::ofstream out(tmp.file("bad.jsonl"));
    out << R"({"id":"x","speech_tokens":[)" << data.codebook.speech_token(0)
        << R"(],"caption":"fine ."})" << "\n";
    out << R"({"id":"y","speech_tokens":[1],"caption":"oops ."})" << "\n";  // 1 is a text id
  }
  expect_error_containing([&] { load_pairs(tmp.file("bad.jsonl"), data.codebook); },
                          "speech_tokens");
  expect_error_containing([&] { load_pairs(tmp.file("bad.jsonl"), data.codebook); }, ":2:");

  {
    std::ofstream out(tmp.file("empty_caption.jsonl"));
    out << R"({"id":"x","speech_tokens":[)" << data.codebook.speech_token(0)
        << R"(],"caption":""})" << "\n";
  }
  expect_error_containing([&] { load_pairs(tmp.file("empty_caption.jsonl"), data.codebook); },
                          "caption");

  {
    std::ofstream out(tmp.file("missing.jsonl"));
    out << R"({"id":"x","caption":"hello ."})" << "\n";
  }
  expect_error_containing([&] { load_pairs(tmp.file("missing.jsonl"), data.codebook); },
                          "speech_tokens");

  {
    std::ofstream out(tmp.file("garbage.jsonl"));
    out << "this is not json\n";
  }
  expect_error_containing([&] { load_pairs(tmp.file("garbage.jsonl"), data.codebook); },
                          "parse error");
}

TEST_CASE("synthetic corpus is deterministic and well-formed") {
  SynthSpec spec;
  spec.n_items = 50;
  spec.seed = 11;
  SynthData a = synth_dataset(spec);
  SynthData b = synth_dataset(spec);

  REQUIRE(a.pairs.size() == 50);
  CHECK(a.train.size() == 40);
  CHECK(a.val.size() == 5);
  CHECK(a.test.size() == 5);
  for (size_t i = 0; i < a.pairs.size(); ++i) {
    CHECK(a.pairs[i].caption == b.pairs[i].caption);
    CHECK(a.pairs[i].speech_tokens == b.pairs[i].speech_tokens);
  }
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);

  for (const auto& p : a.pairs) {
    CHECK(p.caption.size() >= 2);
    CHECK(p.caption.substr(p.caption.size() - 2) == " .");
    for (int id : p.speech_tokens) CHECK(a.codebook.is_speech(id));
    // every caption carries an adjective plus two acoustic clue phrases
    auto clues = extract_clues(a.clues, p.caption);
    CHECK(clues.size() == 3);
    // all caption words are in the text vocabulary
    for (const auto& w : normalize_words(p.caption)) CHECK(a.codebook.text_id(w).has_value());
  }

  // different seed, different corpus
  spec.seed = 12;
  SynthData c = synth_dataset(spec);
  bool differs = false;
  for (size_t i = 0; i < a.pairs.size(); ++i)
    differs |= a.pairs[i].speech_tokens != c.pairs[i].speech_tokens;
  CHECK(differs);

  // the split partitions every index exactly once
  std::vector<bool> seen(a.pairs.size(), false);
  for (auto part : {&a.train, &a.val, &a.test})
    for (size_t idx : *part) {
      CHECK(!seen[idx]);
      seen[idx] = true;
    }
  for (bool s : seen) CHECK(s);
}

TEST_CASE("synthetic corpus directory round-trips") {
  TempDir tmp("aligncap_ds_dir");
  SynthSpec spec;
  spec.n_items = 20;
  spec.seed = 3;
  SynthData data = synth_dataset(spec);
  save_synth_dir(data, tmp.path.string());
  SynthData loaded = load_synth_dir(tmp.path.string());

  CHECK(loaded.codebook.text_vocab() == data.codebook.text_vocab());
  CHECK(loaded.codebook.speech_size() == data.codebook.speech_size());
  CHECK(loaded.clues.size() == data.clues.size());
  REQUIRE(loaded.pairs.size() == data.pairs.size());
  for (size_t i = 0; i < data.pairs.size(); ++i) {
    CHECK(loaded.pairs[i].caption == data.pairs[i].caption);
    CHECK(loaded.pairs[i].speech_tokens == data.pairs[i].speech_tokens);
  }
  CHECK(loaded.train == data.train);
  CHECK(loaded.val == data.val);
  CHECK(loaded.test == data.test);
}

TEST_CASE("checkpoints round-trip base and adapter bit-exactly") {
  TempDir tmp("aligncap_ds_ckpt");
  ModelConfig cfg;
  cfg.vocab = 12;
  cfg.d_model = 8;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.max_seq = 20;
  cfg.pad_id = 4;
  ModelParams params = init_model(cfg, 55);
  LoraAdapter adapter = init_adapter(cfg, 3, 1.5, 56);
  Rng r(57);
  for (double& x : adapter.out.b.v) x = r.gaussian();

  SUBCASE("base plus adapter") {
    save_checkpoint(&params, &adapter, tmp.file("both.ckpt"));
    Checkpoint ck = load_checkpoint(tmp.file("both.ckpt"));
    REQUIRE(ck.params.has_value());
    REQUIRE(ck.adapter.has_value());
    CHECK(ck.cfg == cfg);
    CHECK(ck.adapter->rank == 3);
    CHECK(ck.adapter->scale == 1.5);
    auto want = collect_tensors(params);
    auto got = collect_tensors(*ck.params);
    REQUIRE(want.size() == got.size());
    for (size_t i = 0; i < want.size(); ++i) {
      CHECK(want[i].name == got[i].name);
      CHECK(std::memcmp(want[i].data, got[i].data, want[i].size * sizeof(double)) == 0);
    }
    auto wa = collect_tensors(adapter);
    auto ga = collect_tensors(*ck.adapter);
    for (size_t i = 0; i < wa.size(); ++i)
      CHECK(std::memcmp(wa[i].data, ga[i].data, wa[i].size * sizeof(double)) == 0);
  }

  SUBCASE("adapter only") {
    save_checkpoint(nullptr, &adapter, tmp.file("adapter.ckpt"));
    Checkpoint ck = load_checkpoint(tmp.file("adapter.ckpt"));
    CHECK(!ck.params.has_value());
    REQUIRE(ck.adapter.has_value());
    check_adapter_compatible(*ck.adapter, cfg);
  }

  SUBCASE("base only") {
    save_checkpoint(&params, nullptr, tmp.file("base.ckpt"));
    Checkpoint ck = load_checkpoint(tmp.file("base.ckpt"));
    REQUIRE(ck.params.has_value());
    CHECK(!ck.adapter.has_value());
  }

  SUBCASE("neither is an error") {
    CHECK_THROWS(save_checkpoint(nullptr, nullptr, tmp.file("none.ckpt")));
  }
}

TEST_CASE("checkpoint corruption is reported") {
  TempDir tmp("aligncap_ds_ckpt_bad");
  {
    std::ofstream out(tmp.file("bad_magic.ckpt"), std::ios::binary);
    out << "SOMETHING-ELSE v9\n10\n{}";
  }
  expect_error_containing([&] { load_checkpoint(tmp.file("bad_magic.ckpt")); }, "version");

  // truncated data section
  ModelConfig cfg;
  cfg.vocab = 8;
  cfg.d_model = 4;
  cfg.n_layers = 1;
  cfg.n_heads = 1;
  cfg.d_ff = 8;
  cfg.max_seq = 8;
  cfg.pad_id = 0;
  ModelParams params = init_model(cfg, 1);
  save_checkpoint(&params, nullptr, tmp.file("full.ckpt"));
  const auto full_size = std::filesystem::file_size(tmp.file("full.ckpt"));
  {
    std::ifstream in(tmp.file("full.ckpt"), std::ios::binary);
    std::vector<char> buf(full_size / 2);
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    std::ofstream out(tmp.file("truncated.ckpt"), std::ios::binary);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  expect_error_containing([&] { load_checkpoint(tmp.file("truncated.ckpt")); }, "truncated");
}

TEST_CASE("adapter compatibility checks name the offending array") {
  ModelConfig cfg;
  cfg.vocab = 10;
  cfg.d_model = 6;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_ff = 12;
  cfg.max_seq = 16;
  cfg.pad_id = 2;
  LoraAdapter ok = init_adapter(cfg, 2, 2.0, 9);
  CHECK_NOTHROW(check_adapter_compatible(ok, cfg));

  LoraAdapter wrong_layers = ok;
  wrong_layers.layers.pop_back();
  expect_error_containing([&] { check_adapter_compatible(wrong_layers, cfg); }, "layer count");

  LoraAdapter wrong_shape = ok;
  wrong_shape.layers[1].v.a = Mat(3, 2);
  expect_error_containing([&] { check_adapter_compatible(wrong_shape, cfg); },
                          "adapter.layer1.v.a");

  LoraAdapter wrong_out = ok;
  wrong_out.out.b = Mat(2, 5);
  expect_error_containing([&] { check_adapter_compatible(wrong_out, cfg); }, "adapter.out.b");
}

TEST_CASE("config json parsing applies defaults and validates") {
  TrainConfig tc = train_config_from_json(R"({"learning_rate": 0.25, "max_steps": 7})");
  CHECK(tc.learning_rate == 0.25);
  CHECK(tc.max_steps == 7);
  CHECK(tc.batch_size == 16);   // default
  CHECK(tc.warmup_steps == 400);
  CHECK_THROWS(train_config_from_json(R"({"learning_rate": -1})"));

  PoConfig pc = po_config_from_json(R"({"beta": 0.3, "seed": 5})");
  CHECK(pc.beta == 0.3);
  CHECK(pc.seed == 5);
  CHECK(pc.max_steps == 1000);
  CHECK_THROWS(po_config_from_json(R"({"beta": 0})"));

  DecodeConfig dc = decode_config_from_json(R"({"beam_width": 4})");
  CHECK(dc.beam_width == 4);
  CHECK(dc.max_len == 16);

  SynthSpec sp = synth_spec_from_json(R"({"n_items": 33, "noise_rate": 0.2})");
  CHECK(sp.n_items == 33);
  CHECK(sp.noise_rate == 0.2);
  CHECK_THROWS(synth_spec_from_json(R"({"noise_rate": 1.5})"));
}

TEST_CASE("preference pairs round-trip and enforce their invariants") {
  TempDir tmp("aligncap_ds_prefs");
  SynthSpec spec;
  spec.n_items = 4;
  SynthData data = synth_dataset(spec);
  const JointCodebook& cb = data.codebook;

  std::vector<PreferencePair> pairs;
  PreferencePair p;
  p.x = TokenSeq({cb.special().bos, cb.speech_token(0), cb.speech_token(1)});
  p.chosen = cb.encode_text("a sad voice with low tone and slow rhythm .");
  p.rejected = cb.encode_text("a happy voice with warm tone and rising intonation .");
  p.chosen_score = 9.5;
  p.rejected_score = 1.0;
  pairs.push_back(p);

  save_pref_pairs(pairs, cb, tmp.file("prefs.jsonl"));
  auto loaded = load_pref_pairs(tmp.file("prefs.jsonl"), cb);
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].x.ids == pairs[0].x.ids);
  CHECK(loaded[0].chosen.ids == pairs[0].chosen.ids);
  CHECK(loaded[0].rejected.ids == pairs[0].rejected.ids);
  CHECK(loaded[0].chosen_score == 9.5);
  CHECK(loaded[0].rejected_score == 1.0);

  {
    std::ofstream out(tmp.file("equal.jsonl"));
    out << R"({"x":[0],"chosen":"sad .","rejected":"sad .","chosen_score":5,"rejected_score":1})"
        << "\n";
  }
  expect_error_containing([&] { load_pref_pairs(tmp.file("equal.jsonl"), cb); }, "chosen");

  {
    std::ofstream out(tmp.file("inverted.jsonl"));
    out << R"({"x":[0],"chosen":"sad .","rejected":"happy .","chosen_score":1,"rejected_score":5})"
        << "\n";
  }
  expect_error_containing([&] { load_pref_pairs(tmp.file("inverted.jsonl"), cb); },
                          "chosen_score");
}
