#include "blockattn/distill.hpp"

#include <algorithm>
#include <cmath>

namespace blockattn {

namespace {

void accumulate(Params& into, const Params& from) {
  std::vector<std::vector<double>*> dst;
  for_each_tensor(into, [&dst](const std::string&, std::vector<double>& v) { dst.push_back(&v); });
  std::size_t k = 0;
  for_each_tensor(from, [&dst, &k](const std::string&, const std::vector<double>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) (*dst[k])[i] += v[i];
    ++k;
  });
}

double mean(const Vec& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

AugmentedSequence insert_sink_tokens(const std::vector<int>& tokens,
                                     const BlockPartition& partition, const SinkLayout& layout) {
  partition.validate();
  if (partition.total_len() != static_cast<int>(tokens.size()))
    throw ContractError("partition does not cover the token sequence");
  if (layout.sinks_per_block < 0) throw ContractError("negative sink count");
  if (layout.sinks_per_block > 0) {
    for (int t : tokens)
      if (t == layout.sink_token_id)
        throw ContractError("sink token id collides with sequence content");
  }

  AugmentedSequence out;
  int cursor = 0;
  for (const auto& [lo, hi] : partition.ranges) {
    const int start = cursor;
    for (int s = 0; s < layout.sinks_per_block; ++s) out.tokens.push_back(layout.sink_token_id);
    out.tokens.insert(out.tokens.end(), tokens.begin() + lo, tokens.begin() + hi);
    cursor = static_cast<int>(out.tokens.size());
    out.partition.ranges.emplace_back(start, cursor);
  }
  return out;
}

std::vector<int> strip_sink_tokens(const AugmentedSequence& augmented, const SinkLayout& layout) {
  augmented.partition.validate();
  std::vector<int> out;
  for (const auto& [lo, hi] : augmented.partition.ranges) {
    if (hi - lo < layout.sinks_per_block)
      throw ContractError("block shorter than its sink prefix");
    for (int i = lo; i < lo + layout.sinks_per_block; ++i)
      if (augmented.tokens[i] != layout.sink_token_id)
        throw ContractError("block does not start with the sink prefix");
    out.insert(out.end(), augmented.tokens.begin() + lo + layout.sinks_per_block,
               augmented.tokens.begin() + hi);
  }
  return out;
}

Vec per_token_ce(const Mat& logits, const std::vector<int>& tokens) {
  const int n = static_cast<int>(tokens.size());
  if (logits.rows != n) throw ContractError("logits rows do not match tokens");
  Vec ce(std::max(0, n - 1));
  for (int i = 0; i + 1 < n; ++i) {
    const double* row = logits.row(i);
    ce[i] = log_sum_exp(row, logits.cols) - row[tokens[i + 1]];
  }
  return ce;
}

TokenWeights token_weights(const Vec& teacher_ce_block, const Vec& teacher_ce_full,
                           double alpha, double beta) {
  if (teacher_ce_block.size() != teacher_ce_full.size())
    throw ContractError("CE vectors must have equal length");
  if (alpha < 0.0 || beta < 0.0) throw ContractError("alpha and beta must be non-negative");
  TokenWeights tw;
  tw.alpha = alpha;
  tw.beta = beta;
  tw.w.resize(teacher_ce_block.size());
  for (std::size_t i = 0; i < tw.w.size(); ++i)
    tw.w[i] = std::max(teacher_ce_block[i] - teacher_ce_full[i], 0.0) * alpha + beta;
  return tw;
}

double block_dropout_kl(const Mat& teacher_logits, const Mat& student_dropout_logits,
                        const BlockPartition& partition, const DropoutPlan& plan,
                        Mat* dlogits_student) {
  if (!teacher_logits.same_shape(student_dropout_logits))
    throw ContractError("teacher/student logits shape mismatch");
  partition.validate();
  if (partition.total_len() != teacher_logits.rows)
    throw ContractError("partition does not cover the logits");
  if (plan.corrupted.count(partition.parallel_degree() - 1))
    throw ContractError("dropout plan must not corrupt the final block");

  const int n = teacher_logits.rows;
  const int vocab = teacher_logits.cols;
  std::vector<int> included;
  for (int i = 0; i < n; ++i)
    if (!plan.corrupted.count(partition.block_of(i))) included.push_back(i);
  if (included.empty()) throw ContractError("all tokens corrupted; KL undefined");

  if (dlogits_student) {
    *dlogits_student = Mat(n, vocab);
  }
  const double inv_count = 1.0 / static_cast<double>(included.size());

  Vec pt(vocab), ps(vocab);
  double kl = 0.0;
  for (int i : included) {
    softmax_row(teacher_logits.row(i), vocab, pt.data());
    softmax_row(student_dropout_logits.row(i), vocab, ps.data());
    double row_kl = 0.0;
    for (int v = 0; v < vocab; ++v)
      if (pt[v] > 0.0) row_kl += pt[v] * (std::log(pt[v]) - std::log(ps[v]));
    kl += row_kl;
    if (dlogits_student) {
      double* d = dlogits_student->row(i);
      for (int v = 0; v < vocab; ++v) d[v] = (ps[v] - pt[v]) * inv_count;
    }
  }
  return kl * inv_count;
}

LossBreakdown distillation_loss(const DistillationBatch& batch, const TokenWeights& weights) {
  const int n = static_cast<int>(batch.tokens.size());
  if (static_cast<int>(weights.w.size()) != n - 1)
    throw ContractError("weight vector must have n-1 entries");
  const Vec ce = per_token_ce(batch.student_block_logits, batch.tokens);
  LossBreakdown lb;
  for (int i = 0; i + 1 < n; ++i) lb.weighted_ce += weights.w[i] * ce[i];
  lb.weighted_ce /= static_cast<double>(n - 1);
  lb.kl = block_dropout_kl(batch.teacher_full_logits, batch.student_dropout_logits,
                           batch.partition, batch.plan);
  lb.total = lb.weighted_ce + lb.kl;
  return lb;
}

TeacherCache teacher_pass(const Model& teacher, const AugmentedSequence& sample) {
  TeacherCache tc;
  auto full = forward_causal(teacher, sample.tokens);
  tc.full_logits = std::move(full.logits);
  tc.ce_full = per_token_ce(tc.full_logits, sample.tokens);

  const int n = static_cast<int>(sample.tokens.size());
  std::vector<int> positions(n);
  for (int i = 0; i < n; ++i) positions[i] = i;
  auto block = forward(teacher, sample.tokens, build_block_mask(sample.partition), positions);
  tc.ce_block = per_token_ce(block.logits, sample.tokens);
  return tc;
}

double lm_train_step(Model& model, const std::vector<int>& tokens, Adam& optimizer, double lr) {
  const int n = static_cast<int>(tokens.size());
  if (n < 2) throw ContractError("LM step needs at least two tokens");
  const int vocab = model.config().vocab_size;
  ForwardTrace trace;
  auto out = forward_causal(model, tokens, &trace);

  Mat dlogits(n, vocab);
  Vec probs(vocab);
  double ce = 0.0;
  const double inv = 1.0 / static_cast<double>(n - 1);
  for (int i = 0; i + 1 < n; ++i) {
    const double* row = out.logits.row(i);
    ce += log_sum_exp(row, vocab) - row[tokens[i + 1]];
    softmax_row(row, vocab, probs.data());
    double* d = dlogits.row(i);
    for (int v = 0; v < vocab; ++v) d[v] = probs[v] * inv;
    d[tokens[i + 1]] -= inv;
  }
  const Params grads = backward(model, trace, dlogits);

  Params& p = model.mutable_params();
  std::vector<std::vector<double>*> pv;
  for_each_tensor(p, [&pv](const std::string&, std::vector<double>& v) { pv.push_back(&v); });
  std::vector<const std::vector<double>*> gv;
  for_each_tensor(static_cast<const Params&>(grads),
                  [&gv](const std::string&, const std::vector<double>& v) { gv.push_back(&v); });
  std::vector<std::pair<std::vector<double>*, const std::vector<double>*>> tensors;
  for (std::size_t k = 0; k < pv.size(); ++k) tensors.emplace_back(pv[k], gv[k]);
  optimizer.step(tensors, lr);
  return ce * inv;
}

StepMetrics distill_forward_backward(const Model& student, const Model& teacher,
                                     const AugmentedSequence& sample, const DropoutPlan& plan,
                                     const DistillConfig& cfg, Params* grads,
                                     const TeacherCache* cached) {
  {
    // the two models must agree structurally; init seeds may differ
    const auto& s = student.config();
    const auto& t = teacher.config();
    if (s.num_layers != t.num_layers || s.num_heads != t.num_heads ||
        s.head_dim != t.head_dim || s.hidden_dim != t.hidden_dim ||
        s.vocab_size != t.vocab_size || s.rope_base != t.rope_base)
      throw ContractError("teacher and student must share an architecture");
  }
  const int n = static_cast<int>(sample.tokens.size());
  const int vocab = student.config().vocab_size;

  TeacherCache local;
  const TeacherCache* tc = cached;
  if (!tc) {
    local = teacher_pass(teacher, sample);
    tc = &local;
  }

  TokenWeights tw = token_weights(tc->ce_block, tc->ce_full, cfg.alpha, cfg.beta);
  if (cfg.sinks_per_block > 0) {
    // positions whose target is a sink token carry no meaningful signal
    for (int i = 0; i + 1 < n; ++i)
      if (sample.tokens[i + 1] == cfg.sink_token_id) tw.w[i] = cfg.beta;
  }

  std::vector<int> positions(n);
  for (int i = 0; i < n; ++i) positions[i] = i;

  // student block-attention pass -> weighted CE
  ForwardTrace block_trace;
  auto block_out = forward(student, sample.tokens, build_block_mask(sample.partition),
                           positions, grads ? &block_trace : nullptr);
  const Vec ce_s = per_token_ce(block_out.logits, sample.tokens);

  StepMetrics m;
  m.teacher_full_ce = mean(tc->ce_full);
  m.teacher_block_ce = mean(tc->ce_block);
  m.student_block_ce = mean(ce_s);
  for (int i = 0; i + 1 < n; ++i) m.weighted_ce += tw.w[i] * ce_s[i];
  m.weighted_ce /= static_cast<double>(n - 1);

  // student dropout pass -> KL against the teacher's full pass
  ForwardTrace drop_trace;
  auto drop_out = forward(student, sample.tokens, build_dropout_mask(sample.partition, plan),
                          positions, grads ? &drop_trace : nullptr);

  if (grads) {
    Mat dlogits_block(n, vocab);
    Vec probs(vocab);
    const double inv = 1.0 / static_cast<double>(n - 1);
    for (int i = 0; i + 1 < n; ++i) {
      softmax_row(block_out.logits.row(i), vocab, probs.data());
      double* d = dlogits_block.row(i);
      const double scale = tw.w[i] * inv;
      for (int v = 0; v < vocab; ++v) d[v] = probs[v] * scale;
      d[sample.tokens[i + 1]] -= scale;
    }
    Mat dlogits_drop;
    m.kl = block_dropout_kl(tc->full_logits, drop_out.logits, sample.partition, plan,
                            &dlogits_drop);
    *grads = backward(student, block_trace, dlogits_block);
    accumulate(*grads, backward(student, drop_trace, dlogits_drop));
  } else {
    m.kl = block_dropout_kl(tc->full_logits, drop_out.logits, sample.partition, plan);
  }
  m.total = m.weighted_ce + m.kl;
  return m;
}

StepMetrics train_step(Model& student, const Model& teacher, const AugmentedSequence& sample,
                       const DropoutPlan& plan, const DistillConfig& cfg, Adam& optimizer,
                       double lr, const TeacherCache* cached) {
  Params grads = zero_like(student.params());
  StepMetrics m = distill_forward_backward(student, teacher, sample, plan, cfg, &grads, cached);

  Params& p = student.mutable_params();
  std::vector<std::vector<double>*> pv;
  for_each_tensor(p, [&pv](const std::string&, std::vector<double>& v) { pv.push_back(&v); });
  std::vector<const std::vector<double>*> gv;
  for_each_tensor(static_cast<const Params&>(grads),
                  [&gv](const std::string&, const std::vector<double>& v) { gv.push_back(&v); });
  std::vector<std::pair<std::vector<double>*, const std::vector<double>*>> tensors;
  for (std::size_t k = 0; k < pv.size(); ++k) tensors.emplace_back(pv[k], gv[k]);
  optimizer.step(tensors, lr);
  return m;
}

}  // namespace blockattn
