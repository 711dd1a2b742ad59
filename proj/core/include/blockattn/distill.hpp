#pragma once

#include <cstdint>
#include <vector>

#include "blockattn/mask.hpp"
#include "blockattn/model.hpp"
#include "blockattn/optimizer.hpp"

namespace blockattn {

struct SinkLayout {
  int sink_token_id = 0;
  int sinks_per_block = 4;
};

struct AugmentedSequence {
  std::vector<int> tokens;
  BlockPartition partition;
};

// {bls*k, B_1, bls*k, B_2, ..., bls*k, B_n}; every block, including the
// final one, is prefixed by exactly sinks_per_block sink tokens.
AugmentedSequence insert_sink_tokens(const std::vector<int>& tokens,
                                     const BlockPartition& partition, const SinkLayout& layout);
std::vector<int> strip_sink_tokens(const AugmentedSequence& augmented, const SinkLayout& layout);

// Per-position next-token cross entropy; entry i scores the prediction of
// token i+1, so the vector has n-1 entries.
Vec per_token_ce(const Mat& logits, const std::vector<int>& tokens);

struct TokenWeights {
  double alpha = 0.0;
  double beta = 0.0;
  Vec w;
};

// w = max(ce_block - ce_full, 0) * alpha + beta, elementwise, no
// normalization across tokens.
TokenWeights token_weights(const Vec& teacher_ce_block, const Vec& teacher_ce_full,
                           double alpha, double beta);

// Mean per-token KL(teacher || student) over the vocabulary, averaged over
// token positions NOT in corrupted blocks. When dlogits_student is non-null
// it receives d(kl)/d(student logits).
double block_dropout_kl(const Mat& teacher_logits, const Mat& student_dropout_logits,
                        const BlockPartition& partition, const DropoutPlan& plan,
                        Mat* dlogits_student = nullptr);

struct DistillationBatch {
  std::vector<int> tokens;  // sink-augmented sequence
  BlockPartition partition;
  DropoutPlan plan;
  Mat teacher_full_logits;
  Vec teacher_ce_block;
  Mat student_block_logits;
  Mat student_dropout_logits;
};

struct LossBreakdown {
  double weighted_ce = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

LossBreakdown distillation_loss(const DistillationBatch& batch, const TokenWeights& weights);

struct DistillConfig {
  double alpha = 0.2;
  double beta = 0.1;
  double dropout_rate = 0.6;
  int sinks_per_block = 4;
  int sink_token_id = 0;
};

struct StepMetrics {
  double teacher_full_ce = 0.0;
  double teacher_block_ce = 0.0;
  double student_block_ce = 0.0;
  double weighted_ce = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

// Teacher per-sample quantities are deterministic under frozen parameters,
// so callers may compute them once and reuse across epochs.
struct TeacherCache {
  Mat full_logits;
  Vec ce_full;
  Vec ce_block;
};

TeacherCache teacher_pass(const Model& teacher, const AugmentedSequence& sample);

// One next-token cross-entropy step under full causal attention; returns the
// mean CE before the update. Used to pretrain teachers and backbones.
double lm_train_step(Model& model, const std::vector<int>& tokens, Adam& optimizer, double lr);

// One distillation step: teacher full + block passes, student block pass for
// the weighted CE, student dropout pass for the KL, gradient update of the
// student only.
StepMetrics train_step(Model& student, const Model& teacher, const AugmentedSequence& sample,
                       const DropoutPlan& plan, const DistillConfig& cfg, Adam& optimizer,
                       double lr, const TeacherCache* cached = nullptr);

// Loss + student gradients without the optimizer update (used by the
// gradient checks).
StepMetrics distill_forward_backward(const Model& student, const Model& teacher,
                                     const AugmentedSequence& sample, const DropoutPlan& plan,
                                     const DistillConfig& cfg, Params* grads,
                                     const TeacherCache* cached = nullptr);

}  // namespace blockattn
