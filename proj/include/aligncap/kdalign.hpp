#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aligncap/codebook.hpp"
#include "aligncap/model.hpp"

namespace aligncap {

// One distillation item: the teacher conditions on the text prefix prompt,
// the student on the speech-token context; both score the same response.
struct KdItem {
  TokenSeq teacher_ctx;
  TokenSeq student_ctx;
  TokenSeq target;
};

using KdBatch = std::vector<KdItem>;

struct TrainConfig {
  double learning_rate = 1e-5;
  int batch_size = 16;
  int warmup_steps = 400;
  int grad_accum = 8;
  int max_steps = 0;
  int eval_interval = 50;
  uint64_t seed = 0;

  void validate() const;
};

struct KdEval {
  double loss = 0.0;      // mean cross-entropy against the teacher
  double kl = 0.0;        // mean KL(teacher || student)
  long clamp_count = 0;   // positions where the student prob hit the floor
  long positions = 0;
};

// Mean over items and response positions of
//   -sum_y p_teacher(y | p_n, y_<n) * log p_student(y | x_n, y_<n).
// Student probabilities are floored at 1e-12 (counted, not fatal).
double kd_loss(const ModelParams& teacher, const ModelParams& student, const LoraAdapter& adapter,
               const KdBatch& batch, long* clamp_count = nullptr);

KdEval kd_eval(const ModelParams& teacher, const ModelParams& student, const LoraAdapter& adapter,
               const KdBatch& batch);

// Mean KL(teacher || student) per response position.
double eval_alignment(const ModelParams& teacher, const ModelParams& student,
                      const LoraAdapter& adapter, const KdBatch& batch);

// Analytic gradient of kd_loss. Teacher is a constant; gradients accumulate
// into the student base (optional) and the adapter.
double kd_grad(const ModelParams& teacher, const ModelParams& student, const LoraAdapter& adapter,
               const KdBatch& batch, ModelParams* student_grads, LoraAdapter* adapter_grads);

struct StepRecord {
  int step = 0;
  double loss = 0.0;
  double kl = 0.0;
  double lr = 0.0;
};

// Adapter-only SGD with linear warmup and gradient accumulation. Deterministic
// for a fixed seed; throws if the loss goes non-finite.
std::vector<StepRecord> train_kd(const ModelParams& teacher, const ModelParams& student,
                                 LoraAdapter& adapter, const KdBatch& dataset,
                                 const KdBatch& heldout, const TrainConfig& cfg);

// Maximum-likelihood item for fitting the teacher on the text task.
struct MleItem {
  TokenSeq context;
  TokenSeq target;
};

// Full-parameter SGD on gold-token cross-entropy. Used to prepare the frozen
// teacher before distillation.
std::vector<StepRecord> train_mle(ModelParams& params, const std::vector<MleItem>& dataset,
                                  const TrainConfig& cfg);

void write_metrics_jsonl(const std::vector<StepRecord>& log, const std::string& path);

}  // namespace aligncap
