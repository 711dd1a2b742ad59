#pragma once

#include <cstdint>
#include <vector>

#include "blockattn/distill.hpp"
#include "blockattn/mask.hpp"
#include "blockattn/segment.hpp"

namespace blockattn {

// Seeded toy corpora for the desk-scale experiments.

// First-order Markov sequences over a content vocabulary, all with the same
// equal-block partition. The final block doubles as the query block.
struct MarkovCorpus {
  std::vector<std::vector<int>> train;
  std::vector<std::vector<int>> held_out;
  BlockPartition partition;
  int content_vocab = 0;
};

MarkovCorpus make_markov_corpus(int content_vocab, int seq_len, int block_len, int train_n,
                                int held_n, std::uint64_t seed);

// Newline-delimited letter segments; a '#' planted at the end of a segment
// marks the gold boundary at the preceding candidate. Labels are known by
// construction.
std::vector<SegmentationExample> make_planted_segmentation_corpus(int num_examples,
                                                                  int segments_per_example,
                                                                  double mark_rate,
                                                                  std::uint64_t seed);

// Retrieve-the-paragraph-tag task: each paragraph block opens with its tag
// token, the query block carries a snippet from one paragraph's topic plus a
// question token, and the answer is that paragraph's tag.
struct RetrievalExample {
  std::vector<int> tokens;
  BlockPartition partition;
  int query_pos = 0;  // position whose next-token prediction is the answer
  int answer = 0;
};

struct RetrievalTaskConfig {
  int num_paragraphs = 4;
  int body_len = 10;
  int snippet_len = 4;
  int content_vocab = 24;

  int tag_token(int paragraph) const { return content_vocab + paragraph; }
  int question_token() const { return content_vocab + num_paragraphs; }
  int sink_token() const { return content_vocab + num_paragraphs + 1; }
  int vocab_size() const { return content_vocab + num_paragraphs + 2; }
};

std::vector<RetrievalExample> make_retrieval_corpus(const RetrievalTaskConfig& cfg, int count,
                                                    std::uint64_t seed);

}  // namespace blockattn
