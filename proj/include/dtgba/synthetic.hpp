#pragma once

#include "dtgba/tag.hpp"

#include <cstdint>
#include <vector>

namespace dtgba {

/// Planted-partition text-attributed graph with template node texts.
/// Each class owns a topical vocabulary; every text mixes topical words with a
/// shared academic vocabulary, and a fraction of nodes borrow words from a
/// second class so that the classes are not trivially separable.
struct SyntheticTagConfig {
  int num_nodes = 200;
  int num_classes = 4;  // 2..6
  double average_degree = 3.0;
  /// Fraction of edges that join two nodes of the same class.
  double edge_homophily = 0.85;
  int sentences_per_text = 10;
  int words_per_sentence = 9;
  /// Probability that a word is drawn from the node's topical vocabulary.
  double topic_word_rate = 0.3;
  /// Fraction of nodes whose topical words are partly drawn from another class.
  double mixed_node_rate = 0.2;
  /// For mixed nodes, share of topical words drawn from the other class.
  double mixed_share = 0.4;
  std::uint64_t seed = 7;
};

struct SyntheticTag {
  TextAttributedGraph graph;
  std::vector<LabelRecord> labels;
};

SyntheticTag make_synthetic_tag(const SyntheticTagConfig& config);

}  // namespace dtgba
