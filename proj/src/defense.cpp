#include "dtgba/defense.hpp"

#include "dtgba/errors.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace dtgba {

void DefenseConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ValidationError("defense." + field + ": " + why);
  };
  if (!(prune_threshold >= -1.0 && prune_threshold <= 1.0)) fail("prune_threshold", "must be in [-1, 1]");
  if (finetune_shots < 1) fail("finetune_shots", "must be >= 1");
  if (finetune_epochs < 0) fail("finetune_epochs", "must be >= 0");
  if (!(finetune_lr >= 0.0)) fail("finetune_lr", "must be >= 0");
}

nlohmann::json DefenseConfig::to_json() const {
  return {{"prune_threshold", prune_threshold},
          {"finetune_shots", finetune_shots},
          {"finetune_epochs", finetune_epochs},
          {"finetune_lr", finetune_lr},
          {"seed", seed}};
}

DefenseConfig DefenseConfig::from_json(const nlohmann::json& j) {
  DefenseConfig c;
  c.prune_threshold = j.value("prune_threshold", c.prune_threshold);
  c.finetune_shots = j.value("finetune_shots", c.finetune_shots);
  c.finetune_epochs = j.value("finetune_epochs", c.finetune_epochs);
  c.finetune_lr = j.value("finetune_lr", c.finetune_lr);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

namespace {

double attribute_cosine(const Eigen::MatrixXd& x, int a, int b) {
  if (x.row(a) == x.row(b)) return x.row(a).squaredNorm() > 0.0 ? 1.0 : 0.0;
  const double na = x.row(a).norm();
  const double nb = x.row(b).norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return x.row(a).dot(x.row(b)) / (na * nb);
}

}  // namespace

std::vector<LocalEdge> surviving_edges(const GraphView& view, double threshold) {
  if (!view.attributes || view.attributes->rows() < view.num_nodes) {
    throw ValidationError("prune: attributes missing");
  }
  const double t = std::clamp(threshold, -1.0, 1.0);
  std::vector<LocalEdge> kept;
  for (const LocalEdge& e : view.edges) {
    if (attribute_cosine(*view.attributes, e.u, e.v) >= t) kept.push_back(e);
  }
  return kept;
}

EgoGraph prune_edges(const EgoGraph& ego, double threshold) {
  EgoGraph out = ego;
  out.edges = surviving_edges(view_of(ego), threshold);
  return out;
}

PoisonedEgoGraph prune_edges(const PoisonedEgoGraph& ego, double threshold) {
  PoisonedEgoGraph out = ego;
  out.edges = surviving_edges(ego.view(), threshold);
  return out;
}

FewShotSplit defender_split(const TextAttributedGraph& graph, int shots, std::uint64_t seed,
                            std::span<const NodeIndex> attack_tune_nodes) {
  return few_shot_split(graph, shots, seed, attack_tune_nodes);
}

Prompt fine_tune_prompt(const FrozenGfm& gfm, const TextAttributedGraph& graph, const Prompt& prompt,
                        const FewShotSplit& clean, std::span<const LabelDescription> labels,
                        const DefenseConfig& config, int hops, std::span<const NodeIndex> attack_tune_nodes) {
  config.validate();
  const std::vector<NodeIndex> nodes = clean.tune_nodes();
  const std::set<NodeIndex> seen(attack_tune_nodes.begin(), attack_tune_nodes.end());
  for (NodeIndex v : nodes) {
    if (seen.count(v)) {
      throw ValidationError("defense.finetune: node " + std::to_string(v) + " was in the attack tune set");
    }
  }
  if (config.finetune_epochs == 0) return prompt;
  const std::uint64_t checksum = gfm.current_checksum();
  TuningConfig tc;
  tc.epochs = config.finetune_epochs;
  tc.learning_rate = config.finetune_lr;
  tc.hops = hops;
  const TuningSet set = build_tuning_set(gfm, graph, nodes, hops);
  Prompt out = optimize_prompt(gfm, set, gfm.encode_labels(labels), prompt, tc);
  gfm.verify_frozen();
  if (gfm.current_checksum() != checksum) throw ValidationError("defense.finetune: GFM weights changed");
  return out;
}

}  // namespace dtgba
