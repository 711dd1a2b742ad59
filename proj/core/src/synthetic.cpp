#include "blockattn/synthetic.hpp"

#include <cmath>
#include <random>

namespace blockattn {

namespace {

BlockPartition equal_blocks(int seq_len, int block_len) {
  BlockPartition p;
  int lo = 0;
  while (lo + block_len < seq_len) {
    p.ranges.emplace_back(lo, lo + block_len);
    lo += block_len;
  }
  p.ranges.emplace_back(lo, seq_len);
  p.validate();
  return p;
}

}  // namespace

MarkovCorpus make_markov_corpus(int content_vocab, int seq_len, int block_len, int train_n,
                                int held_n, std::uint64_t seed) {
  if (content_vocab < 2 || seq_len < 2 || block_len < 1)
    throw ContractError("markov corpus dimensions out of range");
  std::mt19937_64 rng(seed);

  // Peaked transition table: each state prefers a handful of successors.
  std::vector<std::vector<double>> trans(content_vocab, std::vector<double>(content_vocab));
  std::uniform_int_distribution<int> pick(0, content_vocab - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int s = 0; s < content_vocab; ++s) {
    double z = 0.0;
    for (int t = 0; t < content_vocab; ++t) {
      trans[s][t] = 0.05 + u(rng);
    }
    for (int k = 0; k < 3; ++k) trans[s][pick(rng)] += 6.0;
    for (int t = 0; t < content_vocab; ++t) z += trans[s][t];
    for (int t = 0; t < content_vocab; ++t) trans[s][t] /= z;
  }

  auto sample_seq = [&](std::mt19937_64& r) {
    std::vector<int> seq(seq_len);
    seq[0] = pick(r);
    for (int i = 1; i < seq_len; ++i) {
      double x = u(r);
      int t = 0;
      while (t + 1 < content_vocab && (x -= trans[seq[i - 1]][t]) > 0.0) ++t;
      seq[i] = t;
    }
    return seq;
  };

  MarkovCorpus c;
  c.content_vocab = content_vocab;
  c.partition = equal_blocks(seq_len, block_len);
  for (int i = 0; i < train_n; ++i) c.train.push_back(sample_seq(rng));
  for (int i = 0; i < held_n; ++i) c.held_out.push_back(sample_seq(rng));
  return c;
}

std::vector<SegmentationExample> make_planted_segmentation_corpus(int num_examples,
                                                                  int segments_per_example,
                                                                  double mark_rate,
                                                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> seg_len(3, 7);
  std::uniform_int_distribution<int> letter('a', 'z');
  std::uniform_real_distribution<double> u(0.0, 1.0);

  std::vector<SegmentationExample> corpus;
  for (int e = 0; e < num_examples; ++e) {
    SegmentationExample ex;
    ex.rule = InsertionRule::kNewline;
    ex.category = "planted";
    std::vector<char> marked;
    for (int s = 0; s < segments_per_example; ++s) {
      const int len = seg_len(rng);
      for (int i = 0; i < len; ++i) ex.text_tokens.push_back(letter(rng));
      const bool mark = u(rng) < mark_rate;
      marked.push_back(mark);
      if (mark) ex.text_tokens.back() = '#';
      ex.text_tokens.push_back('\n');
    }
    // Internal candidate C_i sits after segment i's newline and is scored
    // from C_{i+1}'s hidden vector, which follows segment i+1; the gold cut
    // is planted exactly when segment i+1 carries the marker.
    for (int i = 1; i < segments_per_example; ++i) ex.gold_cuts.push_back(marked[i] ? 1 : 0);
    corpus.push_back(std::move(ex));
  }
  return corpus;
}

std::vector<RetrievalExample> make_retrieval_corpus(const RetrievalTaskConfig& cfg, int count,
                                                    std::uint64_t seed) {
  if (cfg.num_paragraphs < 2 || cfg.content_vocab < 2 * cfg.num_paragraphs)
    throw ContractError("retrieval task needs at least two paragraphs and distinct topics");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick_para(0, cfg.num_paragraphs - 1);

  // Disjoint topic slices of the content vocabulary keep snippets unambiguous.
  const int slice = cfg.content_vocab / cfg.num_paragraphs;
  auto topic_token = [&](int paragraph, std::mt19937_64& r) {
    std::uniform_int_distribution<int> d(paragraph * slice, (paragraph + 1) * slice - 1);
    return d(r);
  };

  std::vector<RetrievalExample> corpus;
  for (int e = 0; e < count; ++e) {
    RetrievalExample ex;
    for (int p = 0; p < cfg.num_paragraphs; ++p) {
      const int lo = static_cast<int>(ex.tokens.size());
      ex.tokens.push_back(cfg.tag_token(p));
      for (int i = 0; i < cfg.body_len - 1; ++i) ex.tokens.push_back(topic_token(p, rng));
      ex.partition.ranges.emplace_back(lo, static_cast<int>(ex.tokens.size()));
    }
    const int target = pick_para(rng);
    const int lo = static_cast<int>(ex.tokens.size());
    for (int i = 0; i < cfg.snippet_len; ++i) ex.tokens.push_back(topic_token(target, rng));
    ex.query_pos = static_cast<int>(ex.tokens.size());
    ex.tokens.push_back(cfg.question_token());
    ex.tokens.push_back(cfg.tag_token(target));
    ex.partition.ranges.emplace_back(lo, static_cast<int>(ex.tokens.size()));
    ex.answer = cfg.tag_token(target);
    corpus.push_back(std::move(ex));
  }
  return corpus;
}

}  // namespace blockattn
