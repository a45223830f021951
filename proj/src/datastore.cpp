#include "aligncap/datastore.hpp"

#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace aligncap {

namespace {

using nlohmann::json;

[[noreturn]] void line_error(const std::string& path, int line, const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

std::vector<SpeechCaptionPair> load_pairs(const std::string& path, const JointCodebook& cb) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("pairs: cannot read " + path);
  std::vector<SpeechCaptionPair> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      line_error(path, lineno, std::string("parse error: ") + e.what());
    }
    SpeechCaptionPair p;
    try {
      p.id = j.at("id").get<std::string>();
      p.speech_tokens = j.at("speech_tokens").get<std::vector<int>>();
      p.caption = j.at("caption").get<std::string>();
      if (j.contains("transcript") && !j["transcript"].is_null())
        p.transcript = j["transcript"].get<std::string>();
    } catch (const std::exception& e) {
      line_error(path, lineno, std::string("bad record: ") + e.what());
    }
    if (p.caption.empty()) line_error(path, lineno, "field \"caption\" must be non-empty");
    if (p.speech_tokens.empty())
      line_error(path, lineno, "field \"speech_tokens\" must be non-empty");
    for (int id : p.speech_tokens)
      if (!cb.is_speech(id))
        line_error(path, lineno,
                   "field \"speech_tokens\": id " + std::to_string(id) + " not in speech range");
    out.push_back(std::move(p));
  }
  return out;
}

void save_pairs(const std::vector<SpeechCaptionPair>& pairs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("pairs: cannot write " + path);
  for (const auto& p : pairs) {
    json j = {{"id", p.id}, {"speech_tokens", p.speech_tokens}, {"caption", p.caption}};
    if (p.transcript) j["transcript"] = *p.transcript;
    out << j.dump() << '\n';
  }
}

void SynthSpec::validate() const {
  if (n_items < 1 || speech_size < 2 || n_archetypes < 1 || speech_len < 1)
    throw std::invalid_argument("synth spec: counts must be positive");
  if (noise_rate < 0.0 || noise_rate > 1.0)
    throw std::invalid_argument("synth spec: noise_rate must be in [0,1]");
}

namespace {

struct Archetype {
  std::string adjective;
  std::string clue_a;
  std::string clue_b;
};

const std::vector<Archetype>& archetype_table() {
  static const std::vector<Archetype> table = {
      {"sad", "low tone", "slow rhythm"},        {"angry", "sharp tone", "loud volume"},
      {"happy", "warm tone", "rising intonation"}, {"calm", "flat tone", "steady rhythm"},
      {"fearful", "high pitch", "fast rhythm"},  {"excited", "bright tone", "loud volume"},
      {"tired", "low pitch", "slow rhythm"},     {"tense", "sharp tone", "fast rhythm"},
  };
  return table;
}

std::string make_caption(const Archetype& a, int variant) {
  switch (variant % 3) {
    case 0:
      return "the speaker sounds " + a.adjective + " with a " + a.clue_a + " and a " + a.clue_b +
             " .";
    case 1:
      return "a " + a.adjective + " voice with " + a.clue_a + " and " + a.clue_b + " .";
    default:
      return "the voice feels " + a.adjective + " showing " + a.clue_a + " and a " + a.clue_b +
             " .";
  }
}

}  // namespace

ClueVocabulary builtin_clue_vocabulary() {
  std::vector<ClueEntry> entries = {
      {"low tone", ClueCategory::Tone},          {"warm tone", ClueCategory::Tone},
      {"sharp tone", ClueCategory::Tone},        {"flat tone", ClueCategory::Tone},
      {"bright tone", ClueCategory::Tone},       {"rising intonation", ClueCategory::Intonation},
      {"falling intonation", ClueCategory::Intonation}, {"high pitch", ClueCategory::Pitch},
      {"low pitch", ClueCategory::Pitch},        {"slow rhythm", ClueCategory::Rhythm},
      {"fast rhythm", ClueCategory::Rhythm},     {"steady rhythm", ClueCategory::Rhythm},
      {"soft volume", ClueCategory::Volume},     {"loud volume", ClueCategory::Volume},
      {"sad", ClueCategory::Adjective},          {"angry", ClueCategory::Adjective},
      {"happy", ClueCategory::Adjective},        {"calm", ClueCategory::Adjective},
      {"fearful", ClueCategory::Adjective},      {"excited", ClueCategory::Adjective},
      {"tired", ClueCategory::Adjective},        {"tense", ClueCategory::Adjective},
  };
  return ClueVocabulary(std::move(entries));
}

SynthData synth_dataset(const SynthSpec& spec) {
  spec.validate();
  ClueVocabulary clues = builtin_clue_vocabulary();
  const auto& archetypes = archetype_table();
  const int n_arch = std::min<int>(spec.n_archetypes, static_cast<int>(archetypes.size()));

  // Text vocabulary: every word any caption or prompt can contain.
  std::set<std::string> words = {".", "describe", "the", "emotion", "in", "speech",
                                 "feeling", "and"};
  for (int a = 0; a < n_arch; ++a)
    for (int v = 0; v < 3; ++v) {
      std::istringstream ss(make_caption(archetypes[a], v));
      std::string w;
      while (ss >> w) words.insert(w);
    }
  for (const auto& e : clues.entries()) {
    std::istringstream ss(e.phrase);
    std::string w;
    while (ss >> w) words.insert(w);
  }

  SynthData data{JointCodebook(std::vector<std::string>(words.begin(), words.end()),
                               spec.speech_size),
                 std::move(clues),
                 {},
                 {},
                 {},
                 {}};

  // Archetype-conditioned emission pattern over speech tokens.
  Rng pattern_rng(spec.seed ^ 0xa17c5eedull);
  std::vector<std::vector<int>> patterns(n_arch);
  for (int a = 0; a < n_arch; ++a)
    for (int i = 0; i < spec.speech_len; ++i)
      patterns[a].push_back(pattern_rng.uniform_int(0, spec.speech_size - 1));

  Rng rng(spec.seed);
  for (int i = 0; i < spec.n_items; ++i) {
    const int arch = rng.uniform_int(0, n_arch - 1);
    const int variant = rng.uniform_int(0, 2);
    SpeechCaptionPair p;
    p.id = "synth-" + std::to_string(i);
    p.caption = make_caption(archetypes[arch], variant);
    for (int t = 0; t < spec.speech_len; ++t) {
      int centroid = patterns[arch][t];
      if (rng.uniform() < spec.noise_rate) centroid = rng.uniform_int(0, spec.speech_size - 1);
      p.speech_tokens.push_back(data.codebook.speech_token(centroid));
    }
    data.pairs.push_back(std::move(p));
  }

  std::vector<size_t> order(data.pairs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng split_rng(spec.seed + 1);
  split_rng.shuffle(order);
  const size_t n = order.size();
  const size_t n_train = n * 8 / 10;
  const size_t n_val = n * 9 / 10 - n_train;
  for (size_t i = 0; i < n; ++i) {
    if (i < n_train)
      data.train.push_back(order[i]);
    else if (i < n_train + n_val)
      data.val.push_back(order[i]);
    else
      data.test.push_back(order[i]);
  }
  return data;
}

void save_synth_dir(const SynthData& data, const std::string& dir) {
  data.codebook.save(dir + "/codebook.json");
  data.clues.save(dir + "/clues.tsv");
  save_pairs(data.pairs, dir + "/pairs.jsonl");
  json splits = {{"train", data.train}, {"val", data.val}, {"test", data.test}};
  std::ofstream out(dir + "/splits.json");
  if (!out) throw std::runtime_error("synth: cannot write " + dir + "/splits.json");
  out << splits.dump(2) << '\n';
}

SynthData load_synth_dir(const std::string& dir) {
  JointCodebook cb = JointCodebook::load(dir + "/codebook.json");
  ClueVocabulary clues = ClueVocabulary::load(dir + "/clues.tsv");
  std::vector<SpeechCaptionPair> pairs = load_pairs(dir + "/pairs.jsonl", cb);
  json splits = json::parse(read_text_file(dir + "/splits.json"));
  SynthData data{std::move(cb), std::move(clues), std::move(pairs),
                 splits.at("train").get<std::vector<size_t>>(),
                 splits.at("val").get<std::vector<size_t>>(),
                 splits.at("test").get<std::vector<size_t>>()};
  return data;
}

namespace {

constexpr char kCkptMagic[] = "ALIGNCAP-CKPT v1";

json config_to_json(const ModelConfig& cfg) {
  return {{"vocab", cfg.vocab},     {"d_model", cfg.d_model}, {"n_layers", cfg.n_layers},
          {"n_heads", cfg.n_heads}, {"d_ff", cfg.d_ff},       {"max_seq", cfg.max_seq},
          {"pad_id", cfg.pad_id}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.vocab = j.at("vocab").get<int>();
  cfg.d_model = j.at("d_model").get<int>();
  cfg.n_layers = j.at("n_layers").get<int>();
  cfg.n_heads = j.at("n_heads").get<int>();
  cfg.d_ff = j.at("d_ff").get<int>();
  cfg.max_seq = j.at("max_seq").get<int>();
  cfg.pad_id = j.at("pad_id").get<int>();
  return cfg;
}

}  // namespace

void save_checkpoint(const ModelParams* params, const LoraAdapter* adapter,
                     const std::string& path) {
  if (!params && !adapter) throw std::invalid_argument("checkpoint: nothing to save");
  json manifest;
  manifest["has_base"] = params != nullptr;
  manifest["has_adapter"] = adapter != nullptr;
  if (params) manifest["config"] = config_to_json(params->cfg);
  if (adapter)
    manifest["adapter"] = {{"rank", adapter->rank},
                           {"scale", adapter->scale},
                           {"layers", adapter->layers.size()}};

  std::vector<TensorRef> refs;
  // collect_tensors needs mutable access; the data is only read here
  if (params) {
    auto r = collect_tensors(*const_cast<ModelParams*>(params));
    refs.insert(refs.end(), r.begin(), r.end());
  }
  if (adapter) {
    auto r = collect_tensors(*const_cast<LoraAdapter*>(adapter));
    refs.insert(refs.end(), r.begin(), r.end());
  }
  size_t offset = 0;
  manifest["arrays"] = json::array();
  for (const auto& r : refs) {
    manifest["arrays"].push_back({{"name", r.name}, {"shape", r.shape}, {"offset", offset}});
    offset += r.size * sizeof(double);
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  const std::string m = manifest.dump();
  out << kCkptMagic << '\n' << m.size() << '\n' << m;
  for (const auto& r : refs)
    out.write(reinterpret_cast<const char*>(r.data), r.size * sizeof(double));
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot read " + path);
  std::string magic;
  std::getline(in, magic);
  if (magic != kCkptMagic)
    throw std::runtime_error("checkpoint: version mismatch in " + path + " (got \"" + magic +
                             "\")");
  std::string len_line;
  std::getline(in, len_line);
  size_t mlen = 0;
  try {
    mlen = std::stoul(len_line);
  } catch (...) {
    throw std::runtime_error("checkpoint: corrupt manifest length in " + path);
  }
  std::string mtext(mlen, '\0');
  in.read(mtext.data(), static_cast<std::streamsize>(mlen));
  if (!in) throw std::runtime_error("checkpoint: truncated manifest in " + path);
  json manifest = json::parse(mtext);

  Checkpoint ck;
  const bool has_base = manifest.at("has_base").get<bool>();
  const bool has_adapter = manifest.at("has_adapter").get<bool>();
  if (manifest.contains("config")) ck.cfg = config_from_json(manifest["config"]);

  std::vector<TensorRef> refs;
  if (has_base) {
    ck.params = init_model(ck.cfg, 0);  // shapes only; data overwritten below
    auto r = collect_tensors(*ck.params);
    refs.insert(refs.end(), r.begin(), r.end());
  }
  if (has_adapter) {
    const auto& am = manifest.at("adapter");
    LoraAdapter a;
    a.rank = am.at("rank").get<int>();
    a.scale = am.at("scale").get<double>();
    a.layers.resize(am.at("layers").get<size_t>());
    // allocate from manifest shapes
    ck.adapter = std::move(a);
  }

  std::vector<json> entries(manifest.at("arrays").begin(), manifest.at("arrays").end());
  auto find_entry = [&](const std::string& name) -> const json& {
    for (const auto& e : entries)
      if (e.at("name").get<std::string>() == name) return e;
    throw std::runtime_error("checkpoint: array \"" + name + "\" missing from " + path);
  };

  if (has_adapter) {
    // size adapter tensors from the manifest before collecting refs
    auto size_pair = [&](const std::string& base, LoraPair& lp) {
      for (Mat* m : {&lp.a, &lp.b}) {
        const std::string name = base + (m == &lp.a ? ".a" : ".b");
        const auto& e = find_entry(name);
        auto shape = e.at("shape").get<std::vector<int>>();
        if (shape.size() != 2)
          throw std::runtime_error("checkpoint: array \"" + name + "\" has bad shape");
        *m = Mat(shape[0], shape[1]);
      }
    };
    for (size_t i = 0; i < ck.adapter->layers.size(); ++i) {
      const std::string pre = "adapter.layer" + std::to_string(i) + ".";
      size_pair(pre + "q", ck.adapter->layers[i].q);
      size_pair(pre + "v", ck.adapter->layers[i].v);
    }
    size_pair("adapter.out", ck.adapter->out);
    auto r = collect_tensors(*ck.adapter);
    refs.insert(refs.end(), r.begin(), r.end());
  }

  const std::streampos data_start = in.tellg();
  for (auto& r : refs) {
    const auto& e = find_entry(r.name);
    auto shape = e.at("shape").get<std::vector<int>>();
    if (shape != r.shape)
      throw std::runtime_error("checkpoint: shape mismatch for array \"" + r.name + "\" in " +
                               path);
    in.seekg(data_start + static_cast<std::streamoff>(e.at("offset").get<size_t>()));
    in.read(reinterpret_cast<char*>(r.data), static_cast<std::streamsize>(r.size * sizeof(double)));
    if (!in)
      throw std::runtime_error("checkpoint: truncated data for array \"" + r.name + "\" in " +
                               path);
  }
  return ck;
}

void check_adapter_compatible(const LoraAdapter& adapter, const ModelConfig& cfg) {
  if (static_cast<int>(adapter.layers.size()) != cfg.n_layers)
    throw std::runtime_error("adapter: layer count " + std::to_string(adapter.layers.size()) +
                             " does not match base n_layers " + std::to_string(cfg.n_layers));
  auto check_pair = [&](const std::string& name, const LoraPair& lp, int in, int out) {
    if (lp.a.rows != in || lp.a.cols != adapter.rank)
      throw std::runtime_error("adapter: shape mismatch for array \"" + name + ".a\"");
    if (lp.b.rows != adapter.rank || lp.b.cols != out)
      throw std::runtime_error("adapter: shape mismatch for array \"" + name + ".b\"");
  };
  for (size_t i = 0; i < adapter.layers.size(); ++i) {
    const std::string pre = "adapter.layer" + std::to_string(i) + ".";
    check_pair(pre + "q", adapter.layers[i].q, cfg.d_model, cfg.d_model);
    check_pair(pre + "v", adapter.layers[i].v, cfg.d_model, cfg.d_model);
  }
  check_pair("adapter.out", adapter.out, cfg.d_model, cfg.vocab);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TrainConfig train_config_from_json(const std::string& text) {
  json j = json::parse(text);
  TrainConfig c;
  if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"].get<double>();
  if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int>();
  if (j.contains("warmup_steps")) c.warmup_steps = j["warmup_steps"].get<int>();
  if (j.contains("grad_accum")) c.grad_accum = j["grad_accum"].get<int>();
  if (j.contains("max_steps")) c.max_steps = j["max_steps"].get<int>();
  if (j.contains("eval_interval")) c.eval_interval = j["eval_interval"].get<int>();
  if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
  c.validate();
  return c;
}

PoConfig po_config_from_json(const std::string& text) {
  json j = json::parse(text);
  PoConfig c;
  if (j.contains("beta")) c.beta = j["beta"].get<double>();
  if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"].get<double>();
  if (j.contains("max_steps")) c.max_steps = j["max_steps"].get<int>();
  if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int>();
  if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
  c.validate();
  return c;
}

DecodeConfig decode_config_from_json(const std::string& text) {
  json j = json::parse(text);
  DecodeConfig c;
  if (j.contains("max_len")) c.max_len = j["max_len"].get<int>();
  if (j.contains("beam_width")) c.beam_width = j["beam_width"].get<int>();
  return c;
}

SynthSpec synth_spec_from_json(const std::string& text) {
  json j = json::parse(text);
  SynthSpec s;
  if (j.contains("n_items")) s.n_items = j["n_items"].get<int>();
  if (j.contains("speech_size")) s.speech_size = j["speech_size"].get<int>();
  if (j.contains("n_archetypes")) s.n_archetypes = j["n_archetypes"].get<int>();
  if (j.contains("speech_len")) s.speech_len = j["speech_len"].get<int>();
  if (j.contains("noise_rate")) s.noise_rate = j["noise_rate"].get<double>();
  if (j.contains("seed")) s.seed = j["seed"].get<uint64_t>();
  s.validate();
  return s;
}

void save_pref_pairs(const std::vector<PreferencePair>& pairs, const JointCodebook& cb,
                     const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("prefs: cannot write " + path);
  for (const auto& p : pairs) {
    json j = {{"x", p.x.ids},
              {"chosen", cb.decode_text(p.chosen)},
              {"rejected", cb.decode_text(p.rejected)},
              {"chosen_score", p.chosen_score},
              {"rejected_score", p.rejected_score}};
    out << j.dump() << '\n';
  }
}

std::vector<PreferencePair> load_pref_pairs(const std::string& path, const JointCodebook& cb) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("prefs: cannot read " + path);
  std::vector<PreferencePair> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      line_error(path, lineno, std::string("parse error: ") + e.what());
    }
    PreferencePair p;
    try {
      p.x = TokenSeq(j.at("x").get<std::vector<int>>());
      p.chosen = cb.encode_text(j.at("chosen").get<std::string>());
      p.rejected = cb.encode_text(j.at("rejected").get<std::string>());
      p.chosen_score = j.at("chosen_score").get<double>();
      p.rejected_score = j.at("rejected_score").get<double>();
    } catch (const std::exception& e) {
      line_error(path, lineno, std::string("bad record: ") + e.what());
    }
    if (p.chosen_score < p.rejected_score)
      line_error(path, lineno, "field \"chosen_score\" below \"rejected_score\"");
    if (p.chosen.ids == p.rejected.ids)
      line_error(path, lineno, "field \"chosen\" equals \"rejected\"");
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace aligncap
