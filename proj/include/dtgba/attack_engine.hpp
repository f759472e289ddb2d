#pragma once

// Backdoor losses, the alternating trigger/prompt optimization and its
// hardened variant with prompt perturbation and structure augmentation.

#include "dtgba/autodiff.hpp"
#include "dtgba/gfm.hpp"
#include "dtgba/optim.hpp"
#include "dtgba/prompt_tuning.hpp"
#include "dtgba/struct_trigger.hpp"
#include "dtgba/tag.hpp"
#include "dtgba/text_trigger.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <vector>

namespace dtgba {

/// Where trigger-node candidates come from.
enum class TriggerSelection {
  Pool,        // learned top-k over the text pool
  EgoNetwork,  // learned top-k over the victim's ego network only
  SampledEgo,  // uniform sample from the victim's ego network
};

std::string to_string(TriggerSelection s);
TriggerSelection parse_trigger_selection(const std::string& s);

struct AttackConfig {
  int target = 0;
  double lambda = 1.0;
  int inner_steps = 5;
  double prompt_lr = 0.01;     // gamma_1
  double generator_lr = 0.01;  // gamma_2
  int epochs = 100;
  /// Stop after this many epochs without an outer-loss improvement of min_delta.
  int patience = 10;
  double min_delta = 1e-4;
  int warm_start_epochs = 200;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 1;
  int hops = 2;

  // Generator.
  int trigger_size = 3;
  int latent_dim = 64;
  double edge_threshold = 0.5;
  double homophily_margin = 0.5;
  /// Weight of L_homo in the outer objective (0 disables it).
  double homophily_weight = 1.0;
  /// Weight of L_negCL = -cos(clean, poisoned) in the outer objective. The
  /// default -1 descends on +cos, pushing poisoned embeddings away from their
  /// clean counterparts; +1 descends on the loss as written.
  double neg_contrastive_weight = -1.0;

  // Components.
  bool text_trigger = true;
  bool struct_trigger = true;
  TriggerSelection selection = TriggerSelection::Pool;
  StrategyId strategy = StrategyId::S1;

  // Hardened variant.
  double epsilon = 0.0;
  bool augment = false;
  double drop_node = 0.2;
  double drop_edge = 0.2;

  /// Throws ValidationError naming the offending field.
  void validate() const;
  nlohmann::json to_json() const;
  static AttackConfig from_json(const nlohmann::json& j);
};

/// Text triggers keyed by node id.
using TextTriggerMap = std::map<NodeIndex, TriggeredText>;

/// Identity "trigger" used when text triggers are disabled.
TriggeredText untriggered(const TextAttributedGraph& graph, NodeIndex v, StrategyId strategy);

struct AttackContext {
  const TextAttributedGraph* graph = nullptr;
  const FrozenGfm* gfm = nullptr;
  std::span<const LabelDescription> labels;
  const TextPool* pool = nullptr;
  const TextTriggerMap* text_triggers = nullptr;
};

/// Poisons the ego graph of `victim` with the current generator. `pool_latents`
/// is map(pool) under `params`. SampledEgo selection draws from `seed`.
PoisonedEgoGraph poison_victim(const AttackContext& ctx, const AttackConfig& config,
                               const TriggerGeneratorParams& params, const Eigen::MatrixXd& pool_latents,
                               NodeIndex victim, std::uint64_t seed);

/// Candidate pool for ego-restricted selection: the victim's ego network
/// (widened up to 4 hops, then topped up from `fallback` in pool order when
/// it still has fewer than k nodes), excluding the victim.
TextPool ego_network_pool(const TextAttributedGraph& graph, NodeIndex victim, int hops, int k,
                          const TextPool& fallback);

struct PoisonSet {
  std::vector<NodeIndex> nodes;
  std::vector<int> labels;
  std::vector<EgoGraph> clean;
  std::vector<PoisonedEgoGraph> poisoned;
  std::vector<EgoGraph> clean_aug;
  std::vector<PoisonedEgoGraph> poisoned_aug;
};

PoisonSet build_poison_set(const AttackContext& ctx, const AttackConfig& config, const TriggerGeneratorParams& params,
                           std::span<const NodeIndex> nodes, std::uint64_t seed);

// ---- losses (plain values, hard triggers) -----------------------------------------

double backdoor_loss(const FrozenGfm& gfm, const Eigen::RowVectorXd& prompt, std::span<const PoisonedEgoGraph> poisoned,
                     const Eigen::MatrixXd& label_embeddings, int target);
double clean_loss(const FrozenGfm& gfm, const Eigen::RowVectorXd& prompt, std::span<const EgoGraph> clean,
                  std::span<const int> labels, const Eigen::MatrixXd& label_embeddings);
double neg_contrastive_loss(const FrozenGfm& gfm, const Eigen::RowVectorXd& prompt, std::span<const EgoGraph> clean,
                            std::span<const PoisonedEgoGraph> poisoned);
/// Mean over every trigger-trigger edge and victim-bridge edge of
/// max(0, margin - cosine) on raw attributes (0 with no such edges).
double homophily_loss(std::span<const PoisonedEgoGraph> poisoned, double margin);

// ---- losses on a tape ---------------------------------------------------------------

/// Outer-objective terms through the relaxed trigger path; `prompt` is 1 x d.
struct OuterTerms {
  ad::Var backdoor, neg_contrastive, homophily;
};

OuterTerms outer_terms(ad::Tape& tape, const FrozenGfm& gfm, const BoundWeights& w, const BoundGenerator& g,
                       const TriggerGeneratorParams& params, const TextPool& pool, const PoisonSet& set,
                       const Eigen::MatrixXd& label_embeddings, int target, const ad::Var& prompt);

/// Inner objective L_clean + lambda L_bkd (+ augmented terms when present) on
/// hard poisoned graphs; `prompt` is 1 x d.
ad::Var inner_objective(ad::Tape& tape, const FrozenGfm& gfm, const BoundWeights& w,
                        std::span<const EncodedEgo> clean, std::span<const int> labels,
                        std::span<const EncodedEgo> poisoned, const Eigen::MatrixXd& label_embeddings, int target,
                        double lambda, const ad::Var& prompt);

// ---- optimization -------------------------------------------------------------------

struct AttackTrace {
  std::vector<double> backdoor, clean, neg_contrastive, homophily, outer;
  /// Seed of the augmentation drawn in each epoch (hardened variant only).
  std::vector<std::uint64_t> augmentation_seeds;
  int warm_start_epochs = 0;
  int epochs = 0;
};

/// Mutable state of the alternating optimization.
struct AttackState {
  Prompt prompt;
  TriggerGeneratorParams generator;
  std::unique_ptr<Optimizer> prompt_optimizer;
  std::unique_ptr<Optimizer> generator_optimizer;
};

/// Encoded clean and hard-poisoned graphs for inner steps.
struct EncodedPoisonSet {
  std::vector<EncodedEgo> clean, poisoned, clean_aug, poisoned_aug;
  std::vector<int> labels, labels_aug;
};

EncodedPoisonSet encode_poison_set(const FrozenGfm& gfm, const PoisonSet& set);

/// One inner step: p <- p - gamma_1 grad_p of the inner objective evaluated at
/// p + delta. The generator is untouched. Returns the objective value.
double inner_prompt_step(AttackState& state, const FrozenGfm& gfm, const EncodedPoisonSet& set,
                         const Eigen::MatrixXd& label_embeddings, int target, double lambda,
                         const Eigen::RowVectorXd& delta = {});

/// One outer step on the generator with the prompt fixed, descending on
/// L_bkd + w_neg L_negCL + w_homo L_homo. Returns the terms.
struct OuterValues {
  double backdoor = 0, neg_contrastive = 0, homophily = 0, total = 0;
};
OuterValues outer_generator_step(AttackState& state, const FrozenGfm& gfm, const TextPool& pool, const PoisonSet& set,
                                 const Eigen::MatrixXd& label_embeddings, int target, double homophily_weight,
                                 double neg_contrastive_weight);

/// p + delta with delta uniform in [-epsilon, epsilon] per coordinate.
Prompt perturb_prompt(const Prompt& prompt, double epsilon, std::uint64_t seed);
Eigen::RowVectorXd prompt_perturbation(int dim, double epsilon, std::uint64_t seed);

/// Drops each non-center node with probability drop_node (with its edges) and
/// each surviving edge with probability drop_edge.
EgoGraph augment_structure(const EgoGraph& ego, double drop_node, double drop_edge, std::uint64_t seed);
/// Same on base nodes and trigger-trigger edges; trigger nodes and the bridge
/// edge always survive.
PoisonedEgoGraph augment_structure(const PoisonedEgoGraph& ego, double drop_node, double drop_edge,
                                   std::uint64_t seed);

struct AttackResult {
  Prompt prompt;
  TriggerGeneratorParams generator;
  PoisonSet poison;
  AttackTrace trace;
  std::uint64_t gfm_checksum = 0;
};

/// Warm-starts the prompt on the clean loss, then alternates inner prompt
/// steps and outer generator steps, rebuilding the poison set every epoch.
/// The hardened variant runs when config.epsilon > 0 or config.augment.
AttackResult run_attack(const AttackContext& ctx, const FewShotSplit& split, const AttackConfig& config);
AttackResult run_dtgba(const AttackContext& ctx, const FewShotSplit& split, AttackConfig config);
/// Throws ValidationError unless epsilon > 0 or augmentation is enabled.
AttackResult run_dtgba_plus(const AttackContext& ctx, const FewShotSplit& split, const AttackConfig& config);

/// Run directory artifacts: config.json, losses.csv, prompt.bin, generator.bin,
/// poisoned_manifest.jsonl.
void write_attack_artifacts(const AttackResult& result, const AttackConfig& config,
                            const std::filesystem::path& dir);

}  // namespace dtgba
