#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "blockattn/mask.hpp"
#include "blockattn/model.hpp"
#include "blockattn/optimizer.hpp"

namespace blockattn {

// Byte-level text tokens plus reserved ids for the scaffold tokens.
namespace tok {
constexpr int kCandidateToken = 256;  // candidate cut token
constexpr int kSinkToken = 257;       // block sink token
constexpr int kReservedVocab = 258;   // minimum vocab for text models

std::vector<int> encode_text(const std::string& text);
std::string decode_text(const std::vector<int>& tokens);
}  // namespace tok

enum class InsertionRule { kNewline, kSpace, kSentencePunctuation };

InsertionRule parse_rule(const std::string& name);

// Candidate cut tokens C_0..C_m inserted into the text. positions[] are
// indices into the augmented token stream; C_0 precedes all text and C_m
// follows all text, both unconditional boundaries.
struct CandidateCutSet {
  std::vector<int> positions;
  InsertionRule rule = InsertionRule::kNewline;

  int candidate_count() const { return static_cast<int>(positions.size()); }
  int internal_count() const { return std::max(0, candidate_count() - 2); }
};

struct AugmentedText {
  std::vector<int> tokens;  // text tokens with candidate tokens spliced in
  CandidateCutSet candidates;
};

AugmentedText insert_candidates(const std::vector<int>& text_tokens, InsertionRule rule);
std::vector<int> strip_candidates(const std::vector<int>& augmented);

// Two linear layers with an intermediate ReLU, sigmoid output. Scores the
// boundary probability of candidate C_i from the hidden vector at C_{i+1}.
struct CutHead {
  Mat w1;  // hidden x hidden
  Vec b1;
  Vec w2;  // hidden
  double b2 = 0.0;

  static CutHead init(int hidden_dim, std::uint64_t seed);
  double score(const double* hidden, int hidden_dim) const;
};

// Boundary probabilities for internal candidates C_1..C_{m-1}.
std::vector<double> score_candidates_neural(const Model& model, const CutHead& head,
                                            const AugmentedText& aug);

// Heuristic scorer: probability 1 at the degree-1 evenly spaced internal
// candidates, 0 elsewhere.
std::vector<double> score_candidates_average(const CandidateCutSet& candidates,
                                             int parallel_degree);

// Spans between accepted cuts (p >= threshold), candidate tokens stripped.
// The returned partition indexes the ORIGINAL text tokens.
BlockPartition decide_cuts(const std::vector<double>& probabilities,
                           const CandidateCutSet& candidates, double threshold,
                           int text_len);

struct SegmenterConfig {
  int recursion_depth = 1;
  std::vector<double> thresholds{0.5};
  int min_blocks = 1;
  int max_candidates_per_block = 350;
  InsertionRule rule = InsertionRule::kNewline;

  void validate() const;
};

// Recursive segmentation: level k re-scores each existing block independently
// with thresholds[k]. Boundaries only ever split, never merge.
BlockPartition recursive_segment(const Model& model, const CutHead& head,
                                 const std::vector<int>& text_tokens,
                                 const SegmenterConfig& config);

enum class HeuristicMethod { kRandom, kAverage, kPunctuation, kRandomCandidate, kAverageCandidate };

HeuristicMethod parse_heuristic(const std::string& name);

BlockPartition heuristic_segment(const std::vector<int>& text_tokens, HeuristicMethod method,
                                 int parallel_degree, std::uint64_t rng_seed);

enum class StatisticalMethod { kLoss, kEntropy };

// Chunked top-k over per-position scores: the index range is divided into
// `chunks` equal chunks and the leftmost maximum of each chunk is selected.
std::vector<int> chunked_topk(const std::vector<double>& scores, int chunks);

double distribution_entropy(const double* logits, int vocab);

// scores[t] scores a boundary before token t+1: next-token cross entropy
// against the actual token, or entropy of the predicted distribution, both
// under full attention.
Vec next_token_scores(const Model& model, const std::vector<int>& text_tokens,
                      StatisticalMethod method);

BlockPartition statistical_segment(const Model& model, const std::vector<int>& text_tokens,
                                   StatisticalMethod method, int parallel_degree);

struct SegmentationExample {
  std::vector<int> text_tokens;
  InsertionRule rule = InsertionRule::kNewline;
  std::vector<int> gold_cuts;  // 0/1 per internal candidate
  std::string category;
};

// authenticated cut tokens / candidate cut tokens
double cut_rate(const SegmentationExample& example);

struct CutHeadTrainConfig {
  int epochs = 30;
  double lr = 1e-2;
  double backbone_lr = 1e-3;
  bool freeze_backbone = true;
  std::uint64_t seed = 0;
};

struct CutHeadTrainResult {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> epoch_losses;
};

// Binary cross-entropy on internal-candidate decisions, read from
// next-candidate hidden vectors. Mutates the head (and the backbone when
// unfrozen).
CutHeadTrainResult train_cut_head(Model& model, CutHead& head,
                                  const std::vector<SegmentationExample>& corpus,
                                  const CutHeadTrainConfig& config);

// Precision/recall/F1 of thresholded head decisions against gold labels.
struct BoundaryScore {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};
BoundaryScore score_boundaries(const std::vector<int>& predicted, const std::vector<int>& gold);

}  // namespace blockattn
