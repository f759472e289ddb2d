#pragma once

// Desk-scale graph foundation model: a frozen text encoder, a two-layer
// mean-aggregation graph encoder with mean pooling, and projection heads into
// a shared space where graphs are matched against label descriptions.

#include "dtgba/autodiff.hpp"
#include "dtgba/tag.hpp"
#include "dtgba/text_encoder.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dtgba {

struct GfmDims {
  int text_dim = 384;    // d
  int hidden_dim = 128;  // d_e
  int shared_dim = 128;  // d_s
};

struct SimilarityHead {
  double temperature = 1.0;
};

/// cosine(a, b) / temperature. A zero vector gives 0.0 (logged once).
double similarity(const SimilarityHead& head, const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b);

struct LabelDescription {
  int class_id = 0;
  std::string label_name;
  std::string explanation;
  std::string rendered;

  /// "This text belongs to <name>, <explanation>." (or "... <name>." when the
  /// explanation is empty).
  static LabelDescription make(int class_id, std::string label_name, std::string explanation);
};

std::vector<LabelDescription> make_label_descriptions(std::span<const LabelRecord> records);

struct GraphEncoderWeights {
  Eigen::MatrixXd w1;          // d x d_e
  Eigen::MatrixXd b1;          // 1 x d_e
  Eigen::MatrixXd w2;          // d_e x d_e
  Eigen::MatrixXd b2;          // 1 x d_e
  Eigen::MatrixXd graph_proj;  // d_e x d_s
  Eigen::MatrixXd text_proj;   // d x d_s

  static GraphEncoderWeights xavier(const GfmDims& dims, std::uint64_t seed);
  std::uint64_t checksum() const;
};

/// Weights placed on a tape, either as constants (frozen use) or as
/// parameters (pretraining).
struct BoundWeights {
  ad::Var w1, b1, w2, b2, graph_proj, text_proj;
};

BoundWeights bind_weights(ad::Tape& tape, const GraphEncoderWeights& w, bool trainable);

/// Adjacency over a graph view: unit self-loops, row-normalized.
ad::Var view_adjacency(ad::Tape& tape, const GraphView& view);

/// Differentiable graph encoder. `projected` holds X W1 for every node (n x d_e);
/// `prompt_projected` is p W1 (1 x d_e) or an invalid Var for no prompt. Since
/// the adjacency is row-stochastic, A (X + 1p) W1 = A X W1 + 1 p W1.
ad::Var encode_projected(const BoundWeights& w, const ad::Var& projected, const ad::Var& prompt_projected,
                         const ad::Var& adjacency);

class FrozenGfm {
 public:
  FrozenGfm(std::shared_ptr<const TextEncoder> encoder, GfmDims dims, GraphEncoderWeights weights,
            SimilarityHead head = {});

  const GfmDims& dims() const noexcept { return dims_; }
  const TextEncoder& text_encoder() const noexcept { return *encoder_; }
  std::shared_ptr<const TextEncoder> text_encoder_ptr() const noexcept { return encoder_; }
  const GraphEncoderWeights& weights() const noexcept { return weights_; }
  const SimilarityHead& head() const noexcept { return head_; }

  bool frozen() const noexcept { return frozen_; }
  void freeze();
  /// Checksum recorded at freeze time (0 before).
  std::uint64_t recorded_checksum() const noexcept { return checksum_; }
  std::uint64_t current_checksum() const;
  /// Throws ValidationError if the weights changed since freezing.
  void verify_frozen() const;

  Eigen::RowVectorXd embed_text(std::string_view text) const;
  Eigen::MatrixXd embed_texts(std::span<const std::string> texts) const;

  /// X W1 for a block of attribute rows.
  Eigen::MatrixXd project_attributes(const Eigen::MatrixXd& attributes) const;

  /// Graph embedding g(E, X). Throws ShapeError on attribute dimension mismatch.
  Eigen::RowVectorXd encode_graph(const GraphView& view, const Eigen::MatrixXd& attributes) const;
  Eigen::RowVectorXd encode_graph(const EgoGraph& ego) const { return encode_graph(view_of(ego), ego.attributes); }

  /// Same as encode_graph with the prompt added to every node's attribute.
  Eigen::RowVectorXd encode_prompted(const GraphView& view, const Eigen::MatrixXd& attributes,
                                     const Eigen::RowVectorXd& prompt) const;

  Eigen::RowVectorXd encode_label(const LabelDescription& label) const;
  /// One row per label, in the given order.
  Eigen::MatrixXd encode_labels(std::span<const LabelDescription> labels) const;

  /// Weights bound as tape constants.
  BoundWeights bind(ad::Tape& tape) const { return bind_weights(tape, weights_, false); }

  nlohmann::json describe() const;

 private:
  std::shared_ptr<const TextEncoder> encoder_;
  GfmDims dims_;
  GraphEncoderWeights weights_;
  SimilarityHead head_;
  bool frozen_ = false;
  std::uint64_t checksum_ = 0;
};

struct PretrainConfig {
  GfmDims dims;
  int epochs = 8;
  int batch_size = 32;
  double learning_rate = 0.005;
  double temperature = 0.5;
  int hops = 2;
  double similarity_temperature = 1.0;
};

/// Contrastive pretraining that aligns each ego-graph embedding with its
/// summary embedding (mean member-node text embedding, projected by the text
/// head). Requires cached attributes. Returns a frozen model.
FrozenGfm pretrain_gfm(const TextAttributedGraph& graph, std::shared_ptr<const TextEncoder> encoder,
                       const PretrainConfig& config, std::uint64_t seed,
                       std::vector<double>* epoch_losses = nullptr);

/// Fraction of egos in `nodes` whose embedding retrieves its own summary
/// among the batch (consecutive chunks of `batch_size`).
double retrieval_accuracy(const FrozenGfm& gfm, const TextAttributedGraph& graph, std::span<const NodeIndex> nodes,
                          int hops, int batch_size);

/// Embeds every node text and caches the attributes on the graph.
void cache_attributes(TextAttributedGraph& graph, const TextEncoder& encoder);

void save_gfm(const FrozenGfm& gfm, const std::filesystem::path& path);
/// Rebuilds the text encoder from its stored config and verifies the checksum.
FrozenGfm load_gfm(const std::filesystem::path& path);

}  // namespace dtgba
