#pragma once

// Clean prompt tuning and prompted inference against a frozen GFM.

#include "dtgba/autodiff.hpp"
#include "dtgba/gfm.hpp"
#include "dtgba/optim.hpp"
#include "dtgba/tag.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <span>
#include <vector>

namespace dtgba {

struct Prompt {
  Eigen::RowVectorXd vector;
  int epochs = 0;
  double final_loss = 0.0;
  std::uint64_t seed = 0;

  static Prompt zeros(int dim) { return Prompt{Eigen::RowVectorXd::Zero(dim), 0, 0.0, 0}; }
};

struct TuningConfig {
  int epochs = 200;
  double learning_rate = 0.01;
  /// Stop after this many epochs without a loss improvement of min_delta.
  int patience = 20;
  double min_delta = 1e-6;
  OptimizerKind optimizer = OptimizerKind::Adam;
  int hops = 2;
};

/// An ego graph reduced to what the frozen encoder needs: the row-normalized
/// adjacency and the first-layer projection X W1 of its attributes.
struct EncodedEgo {
  Eigen::MatrixXd adjacency;
  Eigen::MatrixXd projected;
};

EncodedEgo encode_ego(const FrozenGfm& gfm, const GraphView& view, const Eigen::MatrixXd& attributes);
inline EncodedEgo encode_ego(const FrozenGfm& gfm, const EgoGraph& ego) {
  return encode_ego(gfm, view_of(ego), ego.attributes);
}

/// Prompted graph embedding on a tape. `prompt_projected` is p W1 (1 x d_e).
ad::Var prompted_embedding(ad::Tape& tape, const BoundWeights& w, const EncodedEgo& ego,
                           const ad::Var& prompt_projected);

/// Mean negative log-softmax of the similarity to `targets[i]` over all
/// label embeddings, for every ego. This is L_pt, L_clean and L_bkd.
ad::Var classification_loss(ad::Tape& tape, const BoundWeights& w, std::span<const EncodedEgo> egos,
                            std::span<const int> targets, const Eigen::MatrixXd& label_embeddings,
                            double temperature, const ad::Var& prompt);

/// Plain-value L_pt for a fixed prompt.
double prompt_loss(const FrozenGfm& gfm, std::span<const EncodedEgo> egos, std::span<const int> targets,
                   const Eigen::MatrixXd& label_embeddings, const Eigen::RowVectorXd& prompt);

/// Argmax over labels of similarity(prompted embedding, label embedding);
/// ties go to the lowest class id. Throws ValidationError on an empty label set.
int predict(const FrozenGfm& gfm, const EgoGraph& ego, const Prompt& prompt,
            std::span<const LabelDescription> labels);
int predict_encoded(const FrozenGfm& gfm, const EncodedEgo& ego, const Eigen::RowVectorXd& prompt,
                    const Eigen::MatrixXd& label_embeddings);
int argmax_lowest(const Eigen::RowVectorXd& scores);

struct TuningSet {
  std::vector<EncodedEgo> egos;
  std::vector<int> labels;
};

TuningSet build_tuning_set(const FrozenGfm& gfm, const TextAttributedGraph& graph, std::span<const NodeIndex> nodes,
                           int hops);

/// Optimizes a prompt from `initial` on `set`. Throws DivergenceError carrying
/// the last finite epoch.
Prompt optimize_prompt(const FrozenGfm& gfm, const TuningSet& set, const Eigen::MatrixXd& label_embeddings,
                       Prompt initial, const TuningConfig& config, std::vector<double>* losses = nullptr);

/// Zero-initialized clean prompt tuning on the split's tune set.
Prompt tune_clean_prompt(const FrozenGfm& gfm, const TextAttributedGraph& graph, const FewShotSplit& split,
                         std::span<const LabelDescription> labels, const TuningConfig& config,
                         std::vector<double>* losses = nullptr);

void save_prompt(const Prompt& prompt, const std::filesystem::path& path);
Prompt load_prompt(const std::filesystem::path& path);

}  // namespace dtgba
