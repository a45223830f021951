#pragma once

#include <string>
#include <vector>

#include "aligncap/datastore.hpp"
#include "aligncap/decode.hpp"
#include "aligncap/evalkit.hpp"
#include "aligncap/kdalign.hpp"
#include "aligncap/prefopt.hpp"

namespace aligncap {

// Wiring shared by the CLI harnesses and the experiment sweeps: prompt
// construction, teacher preparation, KD/PO stage runners, caption generation
// and evaluation over a corpus.
struct PipelineOptions {
  int d_model = 32;
  int n_layers = 2;
  int n_heads = 2;
  int d_ff = 64;
  int max_seq = 96;
  int lora_rank = 8;
  double lora_scale = 2.0;

  bool use_acoustic_prompt = true;   // P_act in the teacher prefix
  bool include_instruct = true;      // instruct prompt in the student context
  std::string instruct = "describe the emotion in the speech .";

  TrainConfig mle;  // teacher preparation (gold-token cross-entropy)
  TrainConfig kd;
  PoConfig po;
  DecodeConfig decode;

  PipelineOptions() {
    mle.learning_rate = 0.5;
    mle.batch_size = 8;
    mle.grad_accum = 1;
    mle.warmup_steps = 20;
    mle.max_steps = 300;
    kd.learning_rate = 0.1;
    kd.batch_size = 8;
    kd.grad_accum = 1;
    kd.warmup_steps = 20;
    kd.max_steps = 500;
    po.learning_rate = 0.002;
    po.max_steps = 100;
    decode.max_len = 16;
  }

  ModelConfig model_config(const JointCodebook& cb) const;
};

// Teacher prefix: P_act (rendered from extracted clues, normalized to the
// word-level codebook) + P_sem (caption) + P_instruct.
TokenSeq teacher_context(const SpeechCaptionPair& pair, const SynthData& data,
                         const PipelineOptions& opts);

// Student context: BOS + speech tokens + SEP + instruct tokens.
TokenSeq student_context(const SpeechCaptionPair& pair, const SynthData& data,
                         const PipelineOptions& opts);

TokenSeq caption_target(const SpeechCaptionPair& pair, const JointCodebook& cb);

KdBatch build_kd_items(const SynthData& data, const std::vector<size_t>& indices,
                       const PipelineOptions& opts);
std::vector<MleItem> build_mle_items(const SynthData& data, const std::vector<size_t>& indices,
                                     const PipelineOptions& opts);

// init + gold-token fitting of the frozen teacher.
ModelParams prepare_teacher(const SynthData& data, const PipelineOptions& opts, uint64_t seed);

// Synthetic preference pairs: chosen = ground-truth caption, rejected = a
// clue-corrupted copy, scored by the mock judge. Produces at least
// min_pairs pairs by cycling the given items with fresh corruptions.
std::vector<PreferencePair> corrupted_pref_pairs(const SynthData& data,
                                                 const std::vector<size_t>& indices,
                                                 const PipelineOptions& opts, int min_pairs,
                                                 uint64_t seed);

std::string generate_caption(const ModelParams& params, const LoraAdapter* adapter,
                             const SpeechCaptionPair& pair, const SynthData& data,
                             const PipelineOptions& opts);

EvalCorpus build_eval_corpus(const SynthData& data, const std::vector<size_t>& indices,
                             const std::vector<std::string>& candidates);

struct PipelineResult {
  ModelParams teacher;
  LoraAdapter adapter;
  MetricReport report;
  std::vector<StepRecord> kd_log;
  std::vector<PoStepRecord> po_log;
};

// Full run: teacher MLE -> KD -> PO -> generate on the test split -> metrics.
// Stages toggle for the ablation harness.
PipelineResult run_pipeline(const SynthData& data, const PipelineOptions& opts, bool run_kd_stage,
                            bool run_po_stage, uint64_t seed);

// Component ablation: rows full / -P_act / -L_KL / -L_PO with metric deltas.
std::string run_ablation_json(const SynthData& data, const PipelineOptions& opts, uint64_t seed);

// Metrics as a function of preference-pair count.
std::string run_pref_sweep_json(const SynthData& data, const PipelineOptions& opts,
                                const std::vector<int>& sizes, uint64_t seed);

}  // namespace aligncap
