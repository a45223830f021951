#include "aligncap/pipeline.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace aligncap {

ModelConfig PipelineOptions::model_config(const JointCodebook& cb) const {
  ModelConfig cfg;
  cfg.vocab = cb.vocab_size();
  cfg.d_model = d_model;
  cfg.n_layers = n_layers;
  cfg.n_heads = n_heads;
  cfg.d_ff = d_ff;
  cfg.max_seq = max_seq;
  cfg.pad_id = cb.special().pad;
  return cfg;
}

TokenSeq teacher_context(const SpeechCaptionPair& pair, const SynthData& data,
                         const PipelineOptions& opts) {
  PrefixPrompt p;
  if (opts.use_acoustic_prompt) {
    AcousticPrompt ap = render_acoustic_prompt(extract_clues(data.clues, pair.caption));
    ap.rendered = normalize_text(ap.rendered);  // word-level codebook has no punctuation
    p.acoustic = ap;
  }
  p.semantic = pair.caption;
  p.instruct = opts.instruct;
  return assemble_prefix(p, data.codebook);
}

TokenSeq student_context(const SpeechCaptionPair& pair, const SynthData& data,
                         const PipelineOptions& opts) {
  TokenSeq out;
  out.push(data.codebook.special().bos);
  for (int id : pair.speech_tokens) out.push(id);
  if (opts.include_instruct) {
    TokenSeq instr = data.codebook.encode_text(opts.instruct);
    if (!instr.empty()) {
      out.push(data.codebook.special().sep);
      for (int id : instr.ids) out.push(id);
    }
  }
  return out;
}

TokenSeq caption_target(const SpeechCaptionPair& pair, const JointCodebook& cb) {
  return cb.encode_text(pair.caption);
}

KdBatch build_kd_items(const SynthData& data, const std::vector<size_t>& indices,
                       const PipelineOptions& opts) {
  KdBatch batch;
  for (size_t i : indices) {
    const auto& pair = data.pairs[i];
    batch.push_back({teacher_context(pair, data, opts), student_context(pair, data, opts),
                     caption_target(pair, data.codebook)});
  }
  return batch;
}

std::vector<MleItem> build_mle_items(const SynthData& data, const std::vector<size_t>& indices,
                                     const PipelineOptions& opts) {
  std::vector<MleItem> items;
  for (size_t i : indices) {
    const auto& pair = data.pairs[i];
    items.push_back({teacher_context(pair, data, opts), caption_target(pair, data.codebook)});
  }
  return items;
}

ModelParams prepare_teacher(const SynthData& data, const PipelineOptions& opts, uint64_t seed) {
  ModelParams teacher = init_model(opts.model_config(data.codebook), seed);
  TrainConfig cfg = opts.mle;
  cfg.seed = seed + 17;
  train_mle(teacher, build_mle_items(data, data.train, opts), cfg);
  return teacher;
}

namespace {

std::set<std::string> clue_word_set(const ClueVocabulary& clues) {
  std::set<std::string> words;
  for (const auto& e : clues.entries())
    for (const auto& w : normalize_words(e.phrase)) words.insert(w);
  return words;
}

}  // namespace

std::vector<PreferencePair> corrupted_pref_pairs(const SynthData& data,
                                                 const std::vector<size_t>& indices,
                                                 const PipelineOptions& opts, int min_pairs,
                                                 uint64_t seed) {
  if (indices.empty()) throw std::invalid_argument("corrupted_pref_pairs: no items");
  MockJudge judge(data.clues);
  const JointCodebook& cb = data.codebook;
  std::set<std::string> clue_words = clue_word_set(data.clues);
  Rng rng(seed);
  std::vector<PreferencePair> out;

  size_t cursor = 0;
  int guard = 0;
  while (static_cast<int>(out.size()) < min_pairs) {
    if (++guard > 50 * min_pairs)
      throw std::runtime_error("corrupted_pref_pairs: unable to build enough pairs");
    const auto& pair = data.pairs[indices[cursor]];
    cursor = (cursor + 1) % indices.size();

    TokenSeq chosen = caption_target(pair, cb);
    TokenSeq rejected = chosen;
    bool hit_clue = false;
    for (size_t t = 0; t < rejected.size(); ++t) {
      const int id = rejected.ids[t];
      if (!cb.is_text(id)) continue;
      const bool is_clue = clue_words.count(cb.word(id)) > 0;
      const bool corrupt = rng.uniform() < 0.3 || (is_clue && !hit_clue && t + 1 == rejected.size());
      if (corrupt) {
        int repl = rng.uniform_int(0, cb.text_size() - 1);
        if (repl == id) repl = (repl + 1) % cb.text_size();
        rejected.ids[t] = repl;
        if (is_clue) hit_clue = true;
      }
    }
    if (!hit_clue) {
      // force one clue-word corruption so the judge sees a difference
      for (size_t t = 0; t < rejected.size(); ++t) {
        const int id = chosen.ids[t];
        if (cb.is_text(id) && clue_words.count(cb.word(id))) {
          int repl = rng.uniform_int(0, cb.text_size() - 1);
          if (repl == id) repl = (repl + 1) % cb.text_size();
          rejected.ids[t] = repl;
          break;
        }
      }
    }
    if (rejected.ids == chosen.ids) continue;

    const std::string ref = pair.caption;
    std::vector<double> scores = score_candidates(
        judge, ref, {cb.decode_text(chosen), cb.decode_text(rejected)});
    if (scores[0] <= scores[1]) continue;  // corruption missed every clue
    PreferencePair pp;
    pp.x = student_context(pair, data, opts);
    pp.chosen = chosen;
    pp.rejected = rejected;
    pp.chosen_score = scores[0];
    pp.rejected_score = scores[1];
    out.push_back(std::move(pp));
  }
  return out;
}

std::string generate_caption(const ModelParams& params, const LoraAdapter* adapter,
                             const SpeechCaptionPair& pair, const SynthData& data,
                             const PipelineOptions& opts) {
  TokenSeq ctx = student_context(pair, data, opts);
  TokenSeq response = greedy_decode(params, adapter, ctx, opts.decode, data.codebook);
  return data.codebook.decode_text(response);
}

EvalCorpus build_eval_corpus(const SynthData& data, const std::vector<size_t>& indices,
                             const std::vector<std::string>& candidates) {
  if (indices.size() != candidates.size())
    throw std::invalid_argument("build_eval_corpus: size mismatch");
  EvalCorpus corpus;
  for (size_t i = 0; i < indices.size(); ++i)
    corpus.items.push_back({candidates[i], {data.pairs[indices[i]].caption}});
  return corpus;
}

PipelineResult run_pipeline(const SynthData& data, const PipelineOptions& opts, bool run_kd_stage,
                            bool run_po_stage, uint64_t seed) {
  PipelineResult result{prepare_teacher(data, opts, seed),
                        LoraAdapter{},
                        {},
                        {},
                        {}};
  const ModelConfig cfg = opts.model_config(data.codebook);
  result.adapter = init_adapter(cfg, opts.lora_rank, opts.lora_scale, seed + 5);

  if (run_kd_stage) {
    TrainConfig kd_cfg = opts.kd;
    kd_cfg.seed = seed + 29;
    KdBatch train_items = build_kd_items(data, data.train, opts);
    KdBatch val_items = build_kd_items(data, data.val, opts);
    result.kd_log = train_kd(result.teacher, result.teacher, result.adapter, train_items,
                             val_items, kd_cfg);
  }
  if (run_po_stage) {
    std::vector<PreferencePair> pairs =
        corrupted_pref_pairs(data, data.train, opts, opts.po.max_steps > 0 ? 200 : 1, seed + 41);
    PoConfig po_cfg = opts.po;
    po_cfg.seed = seed + 53;
    const LoraAdapter ref_adapter = result.adapter;  // frozen deep snapshot
    result.po_log =
        train_po(result.teacher, result.adapter, result.teacher, ref_adapter, pairs, po_cfg);
  }

  std::vector<std::string> captions;
  for (size_t i : data.test)
    captions.push_back(
        generate_caption(result.teacher, &result.adapter, data.pairs[i], data, opts));
  result.report = evaluate_corpus(build_eval_corpus(data, data.test, captions));
  return result;
}

namespace {

nlohmann::json metrics_json(const MetricReport& r) {
  return {{"bleu4", r.bleu4}, {"meteor", r.meteor}, {"rouge_l", r.rouge_l}, {"cider", r.cider}};
}

}  // namespace

std::string run_ablation_json(const SynthData& data, const PipelineOptions& opts, uint64_t seed) {
  struct Row {
    std::string name;
    PipelineOptions o;
    bool kd, po;
  };
  PipelineOptions base = opts;
  PipelineOptions no_pact = opts;
  no_pact.use_acoustic_prompt = false;
  std::vector<Row> rows = {{"full", base, true, true},
                           {"-P_act", no_pact, true, true},
                           {"-L_KL", base, false, true},
                           {"-L_PO", base, true, false}};

  nlohmann::json out = nlohmann::json::array();
  MetricReport full_report;
  for (size_t i = 0; i < rows.size(); ++i) {
    PipelineResult res = run_pipeline(data, rows[i].o, rows[i].kd, rows[i].po, seed);
    if (i == 0) full_report = res.report;
    nlohmann::json row = {{"name", rows[i].name}, {"metrics", metrics_json(res.report)}};
    row["delta"] = {{"bleu4", res.report.bleu4 - full_report.bleu4},
                    {"meteor", res.report.meteor - full_report.meteor},
                    {"rouge_l", res.report.rouge_l - full_report.rouge_l},
                    {"cider", res.report.cider - full_report.cider}};
    out.push_back(row);
  }
  return out.dump(2);
}

std::string run_pref_sweep_json(const SynthData& data, const PipelineOptions& opts,
                                const std::vector<int>& sizes, uint64_t seed) {
  ModelParams teacher = prepare_teacher(data, opts, seed);
  const ModelConfig cfg = opts.model_config(data.codebook);
  LoraAdapter kd_adapter = init_adapter(cfg, opts.lora_rank, opts.lora_scale, seed + 5);
  TrainConfig kd_cfg = opts.kd;
  kd_cfg.seed = seed + 29;
  train_kd(teacher, teacher, kd_adapter, build_kd_items(data, data.train, opts),
           build_kd_items(data, data.val, opts), kd_cfg);

  const int max_size = *std::max_element(sizes.begin(), sizes.end());
  std::vector<PreferencePair> all_pairs =
      max_size > 0 ? corrupted_pref_pairs(data, data.train, opts, max_size, seed + 41)
                   : std::vector<PreferencePair>{};

  nlohmann::json curve = nlohmann::json::array();
  for (int size : sizes) {
    LoraAdapter adapter = kd_adapter;
    if (size > 0) {
      std::vector<PreferencePair> pairs(all_pairs.begin(), all_pairs.begin() + size);
      PoConfig po_cfg = opts.po;
      po_cfg.seed = seed + 53;
      const LoraAdapter ref_adapter = adapter;
      train_po(teacher, adapter, teacher, ref_adapter, pairs, po_cfg);
    }
    std::vector<std::string> captions;
    for (size_t i : data.test)
      captions.push_back(generate_caption(teacher, &adapter, data.pairs[i], data, opts));
    MetricReport rep = evaluate_corpus(build_eval_corpus(data, data.test, captions));
    curve.push_back({{"size", size}, {"metrics", metrics_json(rep)}});
  }
  return curve.dump(2);
}

}  // namespace aligncap
