#pragma once

// Struct-level triggers: a learned attribute map ranks text-pool entries
// against the (text-triggered) victim, an edge scorer wires the selected
// trigger nodes, and the most similar trigger node bridges to the victim.

#include "dtgba/autodiff.hpp"
#include "dtgba/gfm.hpp"
#include "dtgba/prompt_tuning.hpp"
#include "dtgba/tag.hpp"
#include "dtgba/text_trigger.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace dtgba {

struct TriggerGeneratorParams {
  // Attribute map d -> d_h -> d_h (tanh hidden layer, linear output).
  Eigen::MatrixXd map_w1, map_b1, map_w2, map_b2;
  // Edge scorer [h_victim | h_t1 | h_t2] (3 d_h) -> 1, sigmoid output.
  Eigen::MatrixXd edge_w, edge_b;
  double edge_threshold = 0.5;  // tau_e
  int trigger_size = 3;         // k
  double homophily_margin = 0.5;  // gamma

  static TriggerGeneratorParams xavier(int input_dim, int latent_dim, int trigger_size, std::uint64_t seed,
                                       double edge_threshold = 0.5, double homophily_margin = 0.5);

  int input_dim() const noexcept { return static_cast<int>(map_w1.rows()); }
  int latent_dim() const noexcept { return static_cast<int>(map_w2.cols()); }
  /// Throws ValidationError on non-finite weights or out-of-range settings.
  void validate() const;
  std::uint64_t checksum() const;
};

struct BoundGenerator {
  ad::Var map_w1, map_b1, map_w2, map_b2, edge_w, edge_b;
};

BoundGenerator bind_generator(ad::Tape& tape, const TriggerGeneratorParams& params, bool trainable);

/// Row-wise latent map h = tanh(x W1 + b1) W2 + b2. Throws ShapeError on a
/// dimension mismatch.
Eigen::MatrixXd map_attributes(const TriggerGeneratorParams& params, const Eigen::MatrixXd& x);
ad::Var map_attributes(const BoundGenerator& g, const ad::Var& x);

/// Sigmoid edge score for the ordered pair (t1, t2).
double edge_score(const TriggerGeneratorParams& params, const Eigen::RowVectorXd& h_victim,
                  const Eigen::RowVectorXd& h_t1, const Eigen::RowVectorXd& h_t2);

struct StructTrigger {
  /// Selected pool positions, ascending.
  std::vector<int> nodes;
  /// Cosine of each selected latent to the victim latent, aligned with `nodes`.
  std::vector<double> scores;
  /// Every pair (i, j), i < j, over positions in `nodes`, with its edge score.
  std::vector<ad::EdgeIndex> pairs;
  std::vector<double> pair_scores;
  /// Pairs whose score exceeds tau_e, as positions in `nodes`.
  std::vector<ad::EdgeIndex> edges;
  /// Position in `nodes` of the bridge node.
  int bridge = 0;

  bool empty() const noexcept { return nodes.empty(); }
  int bridge_pool_index() const { return nodes.at(static_cast<std::size_t>(bridge)); }
};

struct Selection {
  std::vector<int> nodes;      // pool positions by descending score, ties to lower index
  std::vector<double> scores;  // aligned with nodes
};

/// Hard top-k of cosine(h_victim, map(pool)) excluding `exclude`. Throws
/// BoundsError when fewer than k candidates remain.
Selection select_trigger_nodes(const TriggerGeneratorParams& params, const Eigen::RowVectorXd& h_victim,
                               const TextPool& pool, std::optional<int> exclude);
/// Same, over precomputed pool latents.
Selection select_top_k(const Eigen::RowVectorXd& h_victim, const Eigen::MatrixXd& pool_latents, int k,
                       std::optional<int> exclude);

/// Hard edge set over `selected` latents: pair (i, j), i < j, kept iff its
/// score exceeds tau_e.
std::vector<ad::EdgeIndex> score_edges(const TriggerGeneratorParams& params, const Eigen::RowVectorXd& h_victim,
                                       const Eigen::MatrixXd& selected_latents, std::vector<double>* scores = nullptr);

/// Argmax cosine to the victim latent; ties to the lower position.
int select_bridge(const Eigen::RowVectorXd& h_victim, const Eigen::MatrixXd& selected_latents);

/// Builds the trigger over pool positions chosen elsewhere (scores, edges and
/// bridge are computed from the latents).
StructTrigger trigger_from_selection(const TriggerGeneratorParams& params, const Eigen::RowVectorXd& h_victim,
                                     const Eigen::MatrixXd& pool_latents, std::span<const int> nodes);

/// Full hard trigger for a victim whose (triggered) attribute is `victim_attribute`.
/// `pool_latents` may be passed to reuse map(pool) across victims.
StructTrigger generate_struct_trigger(const TriggerGeneratorParams& params, const Eigen::RowVectorXd& victim_attribute,
                                      const TextPool& pool, std::optional<int> exclude,
                                      const Eigen::MatrixXd* pool_latents = nullptr);

/// An ego graph with the text trigger applied to its center and the struct
/// trigger appended: base nodes keep their positions, trigger node j sits at
/// base_size + j, and one edge joins the center to the bridge.
struct PoisonedEgoGraph {
  EgoGraph base;
  TriggeredText text;
  StructTrigger trigger;
  /// Text of each trigger node, verbatim from the pool.
  std::vector<std::string> trigger_texts;
  /// Graph node id behind each trigger node.
  std::vector<NodeIndex> trigger_sources;
  std::vector<LocalEdge> edges;
  Eigen::MatrixXd attributes;

  int base_size() const noexcept { return static_cast<int>(base.nodes.size()); }
  int num_nodes() const noexcept { return base_size() + static_cast<int>(trigger.nodes.size()); }
  /// Local position of the bridge (-1 without a struct trigger).
  int bridge_position() const noexcept { return trigger.empty() ? -1 : base_size() + trigger.bridge; }
  GraphView view() const { return GraphView{num_nodes(), edges, &attributes}; }
};

/// Throws ValidationError when a trigger node is outside the pool.
PoisonedEgoGraph inject_trigger(const EgoGraph& ego, const TriggeredText& text, const StructTrigger& trigger,
                                const TextPool& pool, const FrozenGfm& gfm);

/// Throws ValidationError unless the poisoned graph has exactly k trigger
/// nodes (when `k` > 0), exactly one base-trigger edge at the center, and
/// trigger attributes identical to their pool entries.
void check_poisoned(const PoisonedEgoGraph& g, const TextPool& pool, int k);
/// Same check against the source graph: every trigger node carries the exact
/// text and attribute of the graph node it was drawn from.
void check_poisoned(const PoisonedEgoGraph& g, const TextAttributedGraph& graph, int k);

/// Straight-through pieces of a trigger on a tape. Forward values equal the
/// hard trigger; gradients reach the generator through the retained scores.
struct RelaxedTrigger {
  /// k x 1 multipliers on trigger-node contributions: s / s0 (forward 1).
  ad::Var node_scale;
  /// m x 1 weights over trigger.pairs: I(s0 > tau) + s - s0 (forward 0/1).
  ad::Var pair_weights;
};

RelaxedTrigger relax_trigger(ad::Tape& tape, const BoundGenerator& g, const TriggerGeneratorParams& params,
                             const PoisonedEgoGraph& poisoned);

/// Prompted embedding of a poisoned ego through the relaxed trigger path.
ad::Var relaxed_poisoned_embedding(ad::Tape& tape, const BoundWeights& w, const FrozenGfm& gfm,
                                   const PoisonedEgoGraph& poisoned, const RelaxedTrigger& relaxed,
                                   const ad::Var& prompt_projected);

/// Hinge terms of the homophily loss for one poisoned graph, each weighted by
/// the relaxed edge weight and endpoint multipliers. Returns the summed terms
/// (1 x 1) and adds the number of hard edges to `edge_count`.
ad::Var homophily_terms(ad::Tape& tape, const PoisonedEgoGraph& poisoned, const RelaxedTrigger& relaxed,
                        double margin, int& edge_count);

void save_generator(const TriggerGeneratorParams& params, const std::filesystem::path& path);
TriggerGeneratorParams load_generator(const std::filesystem::path& path);

}  // namespace dtgba
