#include "blockattn/segment.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

namespace blockattn {

namespace tok {

std::vector<int> encode_text(const std::string& text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(static_cast<int>(c));
  return ids;
}

std::string decode_text(const std::vector<int>& tokens) {
  std::string s;
  s.reserve(tokens.size());
  for (int t : tokens) {
    if (t < 0 || t > 255) throw ContractError("cannot decode non-byte token");
    s.push_back(static_cast<char>(t));
  }
  return s;
}

}  // namespace tok

namespace {

bool rule_matches(InsertionRule rule, int token) {
  switch (rule) {
    case InsertionRule::kNewline:
      return token == '\n';
    case InsertionRule::kSpace:
      return token == ' ';
    case InsertionRule::kSentencePunctuation:
      return token == '.' || token == '!' || token == '?';
  }
  return false;
}

// Original-text offset of candidate k at augmented position q: exactly k
// candidate tokens precede it.
int candidate_orig_offset(const CandidateCutSet& cands, int k) {
  return cands.positions[k] - k;
}

}  // namespace

InsertionRule parse_rule(const std::string& name) {
  if (name == "newline") return InsertionRule::kNewline;
  if (name == "space") return InsertionRule::kSpace;
  if (name == "punctuation" || name == "sentence_punctuation")
    return InsertionRule::kSentencePunctuation;
  throw ContractError("unknown insertion rule: " + name);
}

AugmentedText insert_candidates(const std::vector<int>& text_tokens, InsertionRule rule) {
  if (text_tokens.empty()) throw ContractError("cannot segment empty text");
  AugmentedText out;
  out.candidates.rule = rule;
  out.tokens.push_back(tok::kCandidateToken);  // C_0
  out.candidates.positions.push_back(0);
  for (std::size_t i = 0; i < text_tokens.size(); ++i) {
    out.tokens.push_back(text_tokens[i]);
    const bool last = (i + 1 == text_tokens.size());
    if (rule_matches(rule, text_tokens[i]) && !last) {
      out.candidates.positions.push_back(static_cast<int>(out.tokens.size()));
      out.tokens.push_back(tok::kCandidateToken);
    }
  }
  out.candidates.positions.push_back(static_cast<int>(out.tokens.size()));
  out.tokens.push_back(tok::kCandidateToken);  // C_m, the literal last token
  return out;
}

std::vector<int> strip_candidates(const std::vector<int>& augmented) {
  std::vector<int> out;
  out.reserve(augmented.size());
  for (int t : augmented)
    if (t != tok::kCandidateToken) out.push_back(t);
  return out;
}

CutHead CutHead::init(int hidden_dim, std::uint64_t seed) {
  CutHead h;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(static_cast<double>(hidden_dim)));
  h.w1 = Mat(hidden_dim, hidden_dim);
  for (auto& v : h.w1.a) v = nd(rng);
  h.b1.assign(hidden_dim, 0.0);
  h.w2.assign(hidden_dim, 0.0);
  for (auto& v : h.w2) v = nd(rng);
  h.b2 = 0.0;
  return h;
}

double CutHead::score(const double* hidden, int hidden_dim) const {
  double logit = b2;
  for (int r = 0; r < hidden_dim; ++r) {
    double z = b1[r];
    const double* wr = w1.row(r);
    for (int c = 0; c < hidden_dim; ++c) z += wr[c] * hidden[c];
    if (z > 0.0) logit += w2[r] * z;
  }
  return 1.0 / (1.0 + std::exp(-logit));
}

std::vector<double> score_candidates_neural(const Model& model, const CutHead& head,
                                            const AugmentedText& aug) {
  const int m = aug.candidates.candidate_count();
  std::vector<double> probs;
  if (m <= 2) return probs;
  auto out = forward_causal(model, aug.tokens);
  const int h = model.config().hidden_dim;
  probs.reserve(m - 2);
  // C_i is scored from the hidden vector at C_{i+1}'s position
  for (int i = 1; i <= m - 2; ++i) {
    const int next_pos = aug.candidates.positions[i + 1];
    probs.push_back(head.score(out.hidden.row(next_pos), h));
  }
  return probs;
}

std::vector<double> score_candidates_average(const CandidateCutSet& candidates,
                                             int parallel_degree) {
  const int m = candidates.internal_count();
  if (parallel_degree < 1) throw ContractError("parallel degree must be positive");
  if (parallel_degree - 1 > m) throw ContractError("parallel degree exceeds candidates + 1");
  std::vector<double> probs(m, 0.0);
  for (int k = 1; k < parallel_degree; ++k) {
    const int idx = static_cast<int>(static_cast<long long>(k) * m / parallel_degree);
    probs[std::min(idx, m - 1)] = 1.0;
  }
  return probs;
}

BlockPartition decide_cuts(const std::vector<double>& probabilities,
                           const CandidateCutSet& candidates, double threshold, int text_len) {
  if (threshold <= 0.0 || threshold >= 1.0) throw ContractError("threshold outside (0,1)");
  if (static_cast<int>(probabilities.size()) != candidates.internal_count())
    throw ContractError("probability count does not match internal candidates");
  std::set<int> cuts;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    if (probabilities[i] >= threshold) {
      const int off = candidate_orig_offset(candidates, static_cast<int>(i) + 1);
      if (off > 0 && off < text_len) cuts.insert(off);
    }
  }
  return BlockPartition::from_boundaries({cuts.begin(), cuts.end()}, text_len);
}

void SegmenterConfig::validate() const {
  if (recursion_depth < 1) throw ContractError("recursion depth must be >= 1");
  if (static_cast<int>(thresholds.size()) != recursion_depth)
    throw ContractError("thresholds length must equal recursion depth");
  for (std::size_t i = 0; i + 1 < thresholds.size(); ++i)
    if (thresholds[i] > thresholds[i + 1])
      throw ContractError("thresholds must be non-decreasing across levels");
  for (double t : thresholds)
    if (t <= 0.0 || t >= 1.0) throw ContractError("threshold outside (0,1)");
  if (min_blocks < 1) throw ContractError("min_blocks must be >= 1");
  if (max_candidates_per_block < 1) throw ContractError("max_candidates_per_block must be >= 1");
}

namespace {

// Evenly subsample internal candidates down to the cap; C_0/C_m always kept.
CandidateCutSet cap_candidates(const CandidateCutSet& cands, int cap,
                               std::vector<int>* internal_index_map) {
  const int m = cands.internal_count();
  internal_index_map->clear();
  if (m <= cap) {
    for (int i = 0; i < m; ++i) internal_index_map->push_back(i);
    return cands;
  }
  CandidateCutSet out;
  out.rule = cands.rule;
  out.positions.push_back(cands.positions.front());
  for (int k = 0; k < cap; ++k) {
    const int idx = static_cast<int>(static_cast<long long>(k) * m / cap);
    internal_index_map->push_back(idx);
    out.positions.push_back(cands.positions[idx + 1]);
  }
  out.positions.push_back(cands.positions.back());
  return out;
}

}  // namespace

BlockPartition recursive_segment(const Model& model, const CutHead& head,
                                 const std::vector<int>& text_tokens,
                                 const SegmenterConfig& config) {
  config.validate();
  const int n = static_cast<int>(text_tokens.size());
  std::set<int> boundaries;

  auto segment_span = [&](int lo, int hi, double threshold, bool enforce_min) {
    std::vector<int> span(text_tokens.begin() + lo, text_tokens.begin() + hi);
    AugmentedText aug = insert_candidates(span, config.rule);
    std::vector<int> index_map;
    // NOTE: scoring positions follow the capped candidate set, so the hidden
    // vector used for C_i is the next SURVIVING candidate.
    aug.candidates =
        cap_candidates(aug.candidates, config.max_candidates_per_block, &index_map);
    if (aug.candidates.internal_count() == 0) return;
    std::vector<double> probs = score_candidates_neural(model, head, aug);
    std::vector<char> accept(probs.size(), 0);
    for (std::size_t i = 0; i < probs.size(); ++i) accept[i] = probs[i] >= threshold;
    if (enforce_min) {
      int have = 0;
      for (char a : accept) have += a;
      std::vector<std::size_t> order(probs.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::stable_sort(order.begin(), order.end(),
                       [&probs](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
      for (std::size_t k = 0; k < order.size() && have + 1 < config.min_blocks; ++k) {
        if (!accept[order[k]]) {
          accept[order[k]] = 1;
          ++have;
        }
      }
    }
    for (std::size_t i = 0; i < accept.size(); ++i) {
      if (!accept[i]) continue;
      const int off = lo + candidate_orig_offset(aug.candidates, static_cast<int>(i) + 1);
      if (off > lo && off < hi) boundaries.insert(off);
    }
  };

  segment_span(0, n, config.thresholds[0], /*enforce_min=*/true);
  for (int level = 1; level < config.recursion_depth; ++level) {
    std::vector<int> cuts = {boundaries.begin(), boundaries.end()};
    int prev = 0;
    for (std::size_t b = 0; b <= cuts.size(); ++b) {
      const int hi = b < cuts.size() ? cuts[b] : n;
      segment_span(prev, hi, config.thresholds[level], false);
      prev = hi;
    }
  }
  return BlockPartition::from_boundaries({boundaries.begin(), boundaries.end()}, n);
}

HeuristicMethod parse_heuristic(const std::string& name) {
  if (name == "random") return HeuristicMethod::kRandom;
  if (name == "average") return HeuristicMethod::kAverage;
  if (name == "punctuation") return HeuristicMethod::kPunctuation;
  if (name == "random_candidate") return HeuristicMethod::kRandomCandidate;
  if (name == "average_candidate") return HeuristicMethod::kAverageCandidate;
  throw ContractError("unknown heuristic method: " + name);
}

BlockPartition heuristic_segment(const std::vector<int>& text_tokens, HeuristicMethod method,
                                 int parallel_degree, std::uint64_t rng_seed) {
  if (text_tokens.empty()) throw ContractError("cannot segment empty text");
  const int n = static_cast<int>(text_tokens.size());
  if (parallel_degree < 1) throw ContractError("parallel degree must be positive");

  // candidate cut offsets (block-start positions) for each method family
  std::vector<int> offsets;
  auto collect_rule_offsets = [&](InsertionRule rule) {
    for (int i = 0; i + 1 < n; ++i)
      if (rule_matches(rule, text_tokens[i])) offsets.push_back(i + 1);
  };
  switch (method) {
    case HeuristicMethod::kRandom:
    case HeuristicMethod::kAverage:
      collect_rule_offsets(InsertionRule::kSpace);
      break;
    case HeuristicMethod::kPunctuation:
      collect_rule_offsets(InsertionRule::kSentencePunctuation);
      break;
    case HeuristicMethod::kRandomCandidate:
    case HeuristicMethod::kAverageCandidate: {
      AugmentedText aug = insert_candidates(text_tokens, InsertionRule::kNewline);
      for (int k = 1; k <= aug.candidates.candidate_count() - 2; ++k)
        offsets.push_back(candidate_orig_offset(aug.candidates, k));
      break;
    }
  }
  offsets.erase(std::unique(offsets.begin(), offsets.end()), offsets.end());

  std::set<int> cuts;
  if (method == HeuristicMethod::kPunctuation) {
    cuts.insert(offsets.begin(), offsets.end());
  } else {
    const int m = static_cast<int>(offsets.size());
    if (parallel_degree - 1 > m)
      throw ContractError("parallel degree infeasible for available candidates");
    if (method == HeuristicMethod::kAverage || method == HeuristicMethod::kAverageCandidate) {
      for (int k = 1; k < parallel_degree; ++k)
        cuts.insert(offsets[static_cast<long long>(k) * m / parallel_degree]);
    } else {
      std::mt19937_64 rng(rng_seed);
      std::vector<int> pool = offsets;
      std::shuffle(pool.begin(), pool.end(), rng);
      for (int k = 0; k < parallel_degree - 1; ++k) cuts.insert(pool[k]);
    }
  }
  return BlockPartition::from_boundaries({cuts.begin(), cuts.end()}, n);
}

std::vector<int> chunked_topk(const std::vector<double>& scores, int chunks) {
  const int m = static_cast<int>(scores.size());
  std::vector<int> picks;
  if (chunks < 1 || m == 0) return picks;
  chunks = std::min(chunks, m);
  for (int c = 0; c < chunks; ++c) {
    const int lo = static_cast<int>(static_cast<long long>(c) * m / chunks);
    const int hi = static_cast<int>(static_cast<long long>(c + 1) * m / chunks);
    int best = lo;
    for (int i = lo + 1; i < hi; ++i)
      if (scores[i] > scores[best]) best = i;  // leftmost maximum
    picks.push_back(best);
  }
  return picks;
}

double distribution_entropy(const double* logits, int vocab) {
  std::vector<double> probs(vocab);
  softmax_row(logits, vocab, probs.data());
  double ent = 0.0;
  for (double p : probs)
    if (p > 0.0) ent -= p * std::log(p);
  return ent;
}

Vec next_token_scores(const Model& model, const std::vector<int>& text_tokens,
                      StatisticalMethod method) {
  const int n = static_cast<int>(text_tokens.size());
  if (n < 2) return {};
  auto out = forward_causal(model, text_tokens);
  const int vocab = model.config().vocab_size;
  Vec scores(n - 1);
  for (int t = 0; t + 1 < n; ++t) {
    const double* row = out.logits.row(t);
    if (method == StatisticalMethod::kLoss) {
      scores[t] = log_sum_exp(row, vocab) - row[text_tokens[t + 1]];
    } else {
      scores[t] = distribution_entropy(row, vocab);
    }
  }
  return scores;
}

BlockPartition statistical_segment(const Model& model, const std::vector<int>& text_tokens,
                                   StatisticalMethod method, int parallel_degree) {
  if (text_tokens.empty()) throw ContractError("cannot segment empty text");
  const int n = static_cast<int>(text_tokens.size());
  if (parallel_degree <= 1 || n < 2) return BlockPartition::single(n);

  const Vec scores = next_token_scores(model, text_tokens, method);

  std::set<int> cuts;
  for (int pick : chunked_topk(scores, parallel_degree - 1)) cuts.insert(pick + 1);
  return BlockPartition::from_boundaries({cuts.begin(), cuts.end()}, n);
}

double cut_rate(const SegmentationExample& example) {
  if (example.gold_cuts.empty()) throw ContractError("cut rate undefined with zero candidates");
  long accepted = 0;
  for (int g : example.gold_cuts) accepted += g != 0;
  return static_cast<double>(accepted) / static_cast<double>(example.gold_cuts.size());
}

CutHeadTrainResult train_cut_head(Model& model, CutHead& head,
                                  const std::vector<SegmentationExample>& corpus,
                                  const CutHeadTrainConfig& config) {
  const int h = model.config().hidden_dim;
  std::vector<AugmentedText> augmented;
  long total_candidates = 0;
  for (const auto& ex : corpus) {
    AugmentedText aug = insert_candidates(ex.text_tokens, ex.rule);
    if (aug.candidates.internal_count() != static_cast<int>(ex.gold_cuts.size()))
      throw ContractError("gold labels do not match internal candidate count");
    total_candidates += aug.candidates.internal_count();
    augmented.push_back(std::move(aug));
  }
  if (total_candidates == 0) throw ContractError("corpus has zero candidates");

  Adam head_opt, backbone_opt;
  CutHeadTrainResult result;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double epoch_loss = 0.0;
    long epoch_count = 0;
    for (std::size_t e = 0; e < corpus.size(); ++e) {
      const AugmentedText& aug = augmented[e];
      const int m = aug.candidates.internal_count();
      if (m == 0) continue;

      ForwardTrace trace;
      ForwardTrace* tr = config.freeze_backbone ? nullptr : &trace;
      auto out = config.freeze_backbone ? forward_causal(model, aug.tokens)
                                        : forward_causal(model, aug.tokens, tr);

      CutHead grad;
      grad.w1 = Mat(h, h);
      grad.b1.assign(h, 0.0);
      grad.w2.assign(h, 0.0);
      grad.b2 = 0.0;
      Mat dhidden(out.hidden.rows, h);

      double loss = 0.0;
      for (int i = 1; i <= m; ++i) {
        const int pos = aug.candidates.positions[i + 1];
        const double* hid = out.hidden.row(pos);
        // forward through the head, keeping pre-activations
        Vec z(h), r(h);
        double logit = head.b2;
        for (int rr = 0; rr < h; ++rr) {
          double zz = head.b1[rr];
          const double* wr = head.w1.row(rr);
          for (int c = 0; c < h; ++c) zz += wr[c] * hid[c];
          z[rr] = zz;
          r[rr] = zz > 0.0 ? zz : 0.0;
          logit += head.w2[rr] * r[rr];
        }
        const double p = 1.0 / (1.0 + std::exp(-logit));
        const double y = corpus[e].gold_cuts[i - 1] != 0 ? 1.0 : 0.0;
        const double eps = 1e-12;
        loss += -(y * std::log(p + eps) + (1.0 - y) * std::log(1.0 - p + eps));

        const double dlogit = (p - y) / m;
        grad.b2 += dlogit;
        for (int rr = 0; rr < h; ++rr) {
          grad.w2[rr] += dlogit * r[rr];
          const double dz = z[rr] > 0.0 ? dlogit * head.w2[rr] : 0.0;
          if (dz == 0.0) continue;
          grad.b1[rr] += dz;
          double* gw = grad.w1.row(rr);
          const double* wr = head.w1.row(rr);
          for (int c = 0; c < h; ++c) {
            gw[c] += dz * hid[c];
            if (!config.freeze_backbone) dhidden(pos, c) += dz * wr[c];
          }
        }
      }
      epoch_loss += loss;
      epoch_count += m;

      head_opt.step({{&head.w1.a, &grad.w1.a},
                     {&head.b1, &grad.b1},
                     {&head.w2, &grad.w2}},
                    config.lr);
      // b2 is scalar; fold it in by hand with plain SGD
      head.b2 -= config.lr * grad.b2;

      if (!config.freeze_backbone) {
        Mat dlogits(out.logits.rows, out.logits.cols);
        Params g = backward(model, trace, dlogits, &dhidden);
        Params& p = model.mutable_params();
        std::vector<std::pair<std::vector<double>*, const std::vector<double>*>> tensors;
        std::vector<std::vector<double>*> pv;
        for_each_tensor(p, [&pv](const std::string&, std::vector<double>& v) {
          pv.push_back(&v);
        });
        std::vector<const std::vector<double>*> gv;
        for_each_tensor(static_cast<const Params&>(g),
                        [&gv](const std::string&, const std::vector<double>& v) {
                          gv.push_back(&v);
                        });
        for (std::size_t k = 0; k < pv.size(); ++k) tensors.emplace_back(pv[k], gv[k]);
        backbone_opt.step(tensors, config.backbone_lr);
      }
    }
    const double mean_loss = epoch_loss / std::max<long>(1, epoch_count);
    if (epoch == 0) result.initial_loss = mean_loss;
    result.epoch_losses.push_back(mean_loss);
    result.final_loss = mean_loss;
  }
  return result;
}

BoundaryScore score_boundaries(const std::vector<int>& predicted, const std::vector<int>& gold) {
  if (predicted.size() != gold.size()) throw ContractError("label length mismatch");
  long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const bool p = predicted[i] != 0, g = gold[i] != 0;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  BoundaryScore s;
  s.precision = (tp + fp) == 0 ? 1.0 : static_cast<double>(tp) / (tp + fp);
  s.recall = (tp + fn) == 0 ? 1.0 : static_cast<double>(tp) / (tp + fn);
  s.f1 = (s.precision + s.recall) == 0.0 ? 0.0
                                         : 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

}  // namespace blockattn
