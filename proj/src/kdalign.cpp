#include "aligncap/kdalign.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace aligncap {

namespace {

constexpr double kProbFloor = 1e-12;

int predictor_index(const TokenSeq& seq, int pos) {
  for (int i = pos - 1; i >= 0; --i)
    if (seq.mask[i]) return i;
  return -1;
}

long count_positions(const KdBatch& batch) {
  long m = 0;
  for (const auto& it : batch) m += it.target.valid_count();
  return m;
}

void check_item(const KdItem& it) {
  if (it.teacher_ctx.valid_count() == 0 || it.student_ctx.valid_count() == 0)
    throw std::invalid_argument("kd: item with empty context");
  if (it.target.valid_count() == 0)
    throw std::invalid_argument("kd: item with empty target");
}

// Shared core: accumulates loss/kl and, when grads requested, backprops the
// cross-entropy through the student.
KdEval kd_core(const ModelParams& teacher, const ModelParams& student, const LoraAdapter& adapter,
               const KdBatch& batch, ModelParams* student_grads, LoraAdapter* adapter_grads) {
  if (batch.empty()) throw std::invalid_argument("kd: empty batch");
  const long m = count_positions(batch);
  const bool want_grad = student_grads || adapter_grads;
  KdEval ev;
  ev.positions = m;

  for (const auto& item : batch) {
    check_item(item);
    TokenSeq t_seq = concat(item.teacher_ctx, item.target);
    TokenSeq s_seq = concat(item.student_ctx, item.target);
    Mat t_logits = forward_logits(teacher, nullptr, t_seq);
    ForwardCache s_cache;
    Mat s_logits = forward_logits(student, &adapter, s_seq, want_grad ? &s_cache : nullptr);

    Mat dlogits;
    if (want_grad) dlogits = Mat(s_logits.rows, s_logits.cols);

    const int t_ctx = static_cast<int>(item.teacher_ctx.size());
    const int s_ctx = static_cast<int>(item.student_ctx.size());
    for (int t = 0; t < static_cast<int>(item.target.size()); ++t) {
      if (!item.target.mask[t]) continue;
      const int t_at = predictor_index(t_seq, t_ctx + t);
      const int s_at = predictor_index(s_seq, s_ctx + t);
      std::vector<double> pt =
          dist_from_logits(t_logits.row(t_at), teacher.cfg.vocab, teacher.cfg.pad_id);
      std::vector<double> ps =
          dist_from_logits(s_logits.row(s_at), student.cfg.vocab, student.cfg.pad_id);
      for (int y = 0; y < student.cfg.vocab; ++y) {
        if (pt[y] <= 0.0) continue;
        double psy = ps[y];
        if (psy < kProbFloor) {
          psy = kProbFloor;
          ++ev.clamp_count;
        }
        ev.loss += -pt[y] * std::log(psy) / m;
        ev.kl += pt[y] * (std::log(pt[y]) - std::log(psy)) / m;
      }
      if (want_grad) {
        for (int y = 0; y < student.cfg.vocab; ++y) {
          if (y == student.cfg.pad_id) continue;
          dlogits.at(s_at, y) += (ps[y] - pt[y]) / m;
        }
      }
    }
    if (want_grad)
      backward(student, &adapter, s_seq, s_cache, dlogits, student_grads, adapter_grads);
  }
  return ev;
}

}  // namespace

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw std::invalid_argument("train config: learning_rate <= 0");
  if (batch_size < 1 || warmup_steps < 1 || grad_accum < 1 || eval_interval < 1)
    throw std::invalid_argument("train config: counts must be positive");
  if (max_steps < 0) throw std::invalid_argument("train config: max_steps < 0");
}

double kd_loss(const ModelParams& teacher, const ModelParams& student, const LoraAdapter& adapter,
               const KdBatch& batch, long* clamp_count) {
  KdEval ev = kd_core(teacher, student, adapter, batch, nullptr, nullptr);
  if (clamp_count) *clamp_count = ev.clamp_count;
  return ev.loss;
}

KdEval kd_eval(const ModelParams& teacher, const ModelParams& student, const LoraAdapter& adapter,
               const KdBatch& batch) {
  return kd_core(teacher, student, adapter, batch, nullptr, nullptr);
}

double eval_alignment(const ModelParams& teacher, const ModelParams& student,
                      const LoraAdapter& adapter, const KdBatch& batch) {
  return kd_core(teacher, student, adapter, batch, nullptr, nullptr).kl;
}

double kd_grad(const ModelParams& teacher, const ModelParams& student, const LoraAdapter& adapter,
               const KdBatch& batch, ModelParams* student_grads, LoraAdapter* adapter_grads) {
  return kd_core(teacher, student, adapter, batch, student_grads, adapter_grads).loss;
}

namespace {

void sgd_update(std::vector<TensorRef> params, std::vector<TensorRef> grads, double lr) {
  for (size_t i = 0; i < params.size(); ++i)
    for (size_t j = 0; j < params[i].size; ++j) params[i].data[j] -= lr * grads[i].data[j];
}

class BatchCursor {
 public:
  BatchCursor(size_t n, uint64_t seed) : rng_(seed), order_(n) {
    for (size_t i = 0; i < n; ++i) order_[i] = i;
    rng_.shuffle(order_);
  }

  std::vector<size_t> next(int count) {
    std::vector<size_t> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
      if (pos_ == order_.size()) {
        rng_.shuffle(order_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  Rng rng_;
  std::vector<size_t> order_;
  size_t pos_ = 0;
};

double warmup_lr(const TrainConfig& cfg, int step) {
  const double frac = std::min(1.0, static_cast<double>(step + 1) / cfg.warmup_steps);
  return cfg.learning_rate * frac;
}

}  // namespace

std::vector<StepRecord> train_kd(const ModelParams& teacher, const ModelParams& student,
                                 LoraAdapter& adapter, const KdBatch& dataset,
                                 const KdBatch& heldout, const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train_kd: empty dataset");
  std::vector<StepRecord> log;
  if (cfg.max_steps == 0) return log;

  BatchCursor cursor(dataset.size(), cfg.seed);
  double last_kl = heldout.empty() ? 0.0 : eval_alignment(teacher, student, adapter, heldout);

  for (int step = 0; step < cfg.max_steps; ++step) {
    LoraAdapter grads = zeros_like(adapter);
    double step_loss = 0.0;
    for (int micro = 0; micro < cfg.grad_accum; ++micro) {
      KdBatch batch;
      for (size_t idx : cursor.next(cfg.batch_size)) batch.push_back(dataset[idx]);
      step_loss += kd_grad(teacher, student, adapter, batch, nullptr, &grads) / cfg.grad_accum;
    }
    if (!std::isfinite(step_loss)) throw std::runtime_error("train_kd: non-finite loss");
    const double lr = warmup_lr(cfg, step);
    sgd_update(collect_tensors(adapter), collect_tensors(grads), lr / cfg.grad_accum);
    if (!heldout.empty() && ((step + 1) % cfg.eval_interval == 0 || step + 1 == cfg.max_steps))
      last_kl = eval_alignment(teacher, student, adapter, heldout);
    log.push_back({step, step_loss, last_kl, lr});
  }
  return log;
}

std::vector<StepRecord> train_mle(ModelParams& params, const std::vector<MleItem>& dataset,
                                  const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train_mle: empty dataset");
  std::vector<StepRecord> log;
  if (cfg.max_steps == 0) return log;

  BatchCursor cursor(dataset.size(), cfg.seed);
  for (int step = 0; step < cfg.max_steps; ++step) {
    ModelParams grads = zeros_like(params);
    double step_loss = 0.0;
    for (int micro = 0; micro < cfg.grad_accum; ++micro) {
      long m = 0;
      std::vector<size_t> idxs = cursor.next(cfg.batch_size);
      for (size_t idx : idxs) m += dataset[idx].target.valid_count();
      double micro_loss = 0.0;
      for (size_t idx : idxs) {
        const MleItem& item = dataset[idx];
        TokenSeq seq = concat(item.context, item.target);
        ForwardCache cache;
        Mat logits = forward_logits(params, nullptr, seq, &cache);
        Mat dlogits(logits.rows, logits.cols);
        const int ctx_len = static_cast<int>(item.context.size());
        for (int t = 0; t < static_cast<int>(item.target.size()); ++t) {
          if (!item.target.mask[t]) continue;
          const int at = predictor_index(seq, ctx_len + t);
          std::vector<double> ps =
              dist_from_logits(logits.row(at), params.cfg.vocab, params.cfg.pad_id);
          const int y = item.target.ids[t];
          micro_loss += -std::log(std::max(ps[y], kProbFloor)) / m;
          for (int j = 0; j < params.cfg.vocab; ++j) {
            if (j == params.cfg.pad_id) continue;
            dlogits.at(at, j) += (ps[j] - (j == y ? 1.0 : 0.0)) / m;
          }
        }
        backward(params, nullptr, seq, cache, dlogits, &grads, nullptr);
      }
      step_loss += micro_loss / cfg.grad_accum;
    }
    if (!std::isfinite(step_loss)) throw std::runtime_error("train_mle: non-finite loss");
    const double lr = warmup_lr(cfg, step);
    sgd_update(collect_tensors(params), collect_tensors(grads), lr / cfg.grad_accum);
    log.push_back({step, step_loss, 0.0, lr});
  }
  return log;
}

void write_metrics_jsonl(const std::vector<StepRecord>& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("metrics: cannot write " + path);
  for (const auto& r : log) {
    nlohmann::json j = {{"step", r.step}, {"loss", r.loss}, {"kl", r.kl}, {"lr", r.lr}};
    out << j.dump() << '\n';
  }
}

}  // namespace aligncap
