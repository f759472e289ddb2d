#pragma once

// Defenses against prompt backdoors: similarity-based edge pruning at
// inference and prompt fine-tuning on clean few-shot data.

#include "dtgba/gfm.hpp"
#include "dtgba/prompt_tuning.hpp"
#include "dtgba/struct_trigger.hpp"
#include "dtgba/tag.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <span>
#include <vector>

namespace dtgba {

struct DefenseConfig {
  /// Edges whose endpoint attribute cosine falls below this are removed.
  double prune_threshold = 0.2;
  int finetune_shots = 10;
  int finetune_epochs = 100;
  double finetune_lr = 0.01;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static DefenseConfig from_json(const nlohmann::json& j);
};

/// Edges of `view` whose endpoint raw-attribute cosine is at least
/// `threshold` (clamped to [-1, 1]). Identical attribute rows count as
/// cosine 1; a zero row has cosine 0 with everything.
std::vector<LocalEdge> surviving_edges(const GraphView& view, double threshold);

/// Removes every edge whose endpoints are dissimilar; all nodes are kept.
EgoGraph prune_edges(const EgoGraph& ego, double threshold);
/// Same on a poisoned graph. Trigger metadata is kept, so a pruned graph may
/// no longer pass check_poisoned.
PoisonedEgoGraph prune_edges(const PoisonedEgoGraph& ego, double threshold);

/// Clean few-shot split for the defender: `shots` per class drawn from nodes
/// outside `attack_tune_nodes`.
FewShotSplit defender_split(const TextAttributedGraph& graph, int shots, std::uint64_t seed,
                            std::span<const NodeIndex> attack_tune_nodes);

/// Continues prompt tuning from `prompt` on the clean split's tune set.
/// Throws ValidationError when that set shares a node with
/// `attack_tune_nodes`; the GFM checksum is verified afterwards.
Prompt fine_tune_prompt(const FrozenGfm& gfm, const TextAttributedGraph& graph, const Prompt& prompt,
                        const FewShotSplit& clean, std::span<const LabelDescription> labels,
                        const DefenseConfig& config, int hops, std::span<const NodeIndex> attack_tune_nodes);

}  // namespace dtgba
