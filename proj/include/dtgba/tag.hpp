#pragma once

// Text-attributed graph data model and the sampling utilities built on it.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dtgba {

/// Dense node index into a TextAttributedGraph (0..N-1).
using NodeIndex = int;

/// Undirected edge stored with u < v.
struct Edge {
  NodeIndex u = 0;
  NodeIndex v = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

class TextAttributedGraph {
 public:
  /// Validates and builds a graph. `external_ids` defaults to 0..N-1.
  /// Edges are normalized to u < v and deduplicated; self-loops and dangling
  /// endpoints raise ValidationError.
  static TextAttributedGraph create(std::vector<std::string> texts, std::vector<int> labels,
                                    std::vector<Edge> edges, int num_classes = -1,
                                    std::vector<std::int64_t> external_ids = {});

  std::size_t num_nodes() const noexcept { return texts_.size(); }
  std::size_t num_edges() const noexcept { return edges_.size(); }
  int num_classes() const noexcept { return num_classes_; }

  const std::string& text(NodeIndex i) const;
  int label(NodeIndex i) const;
  std::int64_t external_id(NodeIndex i) const { return external_ids_.at(static_cast<std::size_t>(i)); }
  std::optional<NodeIndex> find_external(std::int64_t id) const;

  const std::vector<std::string>& texts() const noexcept { return texts_; }
  const std::vector<int>& labels() const noexcept { return labels_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  /// Sorted ascending.
  const std::vector<NodeIndex>& neighbors(NodeIndex i) const;

  bool has_attributes() const noexcept { return attributes_.rows() > 0; }
  /// N x d, one row per node.
  const Eigen::MatrixXd& attributes() const noexcept { return attributes_; }
  int attribute_dim() const noexcept { return static_cast<int>(attributes_.cols()); }
  void set_attributes(Eigen::MatrixXd attributes);

  std::vector<NodeIndex> nodes_of_class(int c) const;

 private:
  std::vector<std::int64_t> external_ids_;
  std::vector<std::string> texts_;
  std::vector<int> labels_;
  std::vector<Edge> edges_;
  std::vector<std::vector<NodeIndex>> adjacency_;
  Eigen::MatrixXd attributes_;
  int num_classes_ = 0;
};

/// Edge between two positions of an ego graph's local node list.
struct LocalEdge {
  int u = 0;
  int v = 0;
  friend bool operator==(const LocalEdge&, const LocalEdge&) = default;
  friend auto operator<=>(const LocalEdge&, const LocalEdge&) = default;
};

struct EgoGraph {
  NodeIndex center = 0;
  /// Graph node indices; position 0 is the center, then BFS layers with each
  /// layer in ascending id order.
  std::vector<NodeIndex> nodes;
  /// Induced edges over local positions, u < v, sorted.
  std::vector<LocalEdge> edges;
  /// One row per local node (empty when the graph has no attributes).
  Eigen::MatrixXd attributes;
  int hop_radius = 0;

  std::size_t size() const noexcept { return nodes.size(); }
};

/// Lightweight view consumed by the encoders and defenses.
struct GraphView {
  int num_nodes = 0;
  std::span<const LocalEdge> edges;
  const Eigen::MatrixXd* attributes = nullptr;
};

inline GraphView view_of(const EgoGraph& ego) {
  return GraphView{static_cast<int>(ego.nodes.size()), ego.edges, &ego.attributes};
}

EgoGraph extract_ego_graph(const TextAttributedGraph& graph, NodeIndex center, int hops);

/// Re-extracts around the local center of an existing ego graph. Node ids of
/// the result still refer to the original graph.
EgoGraph extract_ego_graph(const EgoGraph& ego, int hops);

/// Local positions reachable from position 0 within `hops` over `edges`
/// (hops < 0 means unbounded), in BFS order with ascending-position ties.
std::vector<int> reachable_from_center(int num_nodes, std::span<const LocalEdge> edges, int hops);

struct TextPoolEntry {
  NodeIndex source = 0;
  std::string text;
  Eigen::RowVectorXd attribute;
};

struct TextPool {
  std::vector<TextPoolEntry> entries;
  /// Row i is entries[i].attribute.
  Eigen::MatrixXd embeddings;

  std::size_t size() const noexcept { return entries.size(); }
  /// Pool position holding `node`, if any.
  std::optional<int> index_of(NodeIndex node) const;
};

/// Uniform sample of `size` nodes without replacement.
TextPool build_text_pool(const TextAttributedGraph& graph, std::size_t size, std::uint64_t seed);

/// Same, but restricted to `candidates` (used for cross-dataset runs where the
/// pool may only see the tuning dataset, and for ego-restricted pools).
TextPool build_text_pool(const TextAttributedGraph& graph, std::span<const NodeIndex> candidates,
                         std::size_t size, std::uint64_t seed);

/// Default pool size: min(500, node count).
std::size_t default_pool_size(const TextAttributedGraph& graph);

struct FewShotSplit {
  /// tune_set[c] holds the tune node ids of class c.
  std::vector<std::vector<NodeIndex>> tune_set;
  std::vector<NodeIndex> test_set;
  int shots = 0;
  std::uint64_t seed = 0;

  std::vector<NodeIndex> tune_nodes() const;
};

/// Stratified K-shot split. Nodes in `exclude` are placed in neither set.
FewShotSplit few_shot_split(const TextAttributedGraph& graph, int shots, std::uint64_t seed,
                            std::span<const NodeIndex> exclude = {});

// ---- ingestion ---------------------------------------------------------------

struct LabelRecord {
  int class_id = 0;
  std::string name;
  std::string explanation;
};

/// nodes: JSON lines {"id", "text", "label"}; edges: "src,dst" lines.
TextAttributedGraph load_tag_dataset(const std::filesystem::path& nodes_path,
                                     const std::filesystem::path& edges_path);

/// JSON lines {"class", "name", "explanation"}.
std::vector<LabelRecord> load_label_records(const std::filesystem::path& path);

void save_tag_dataset(const TextAttributedGraph& graph, const std::filesystem::path& nodes_path,
                      const std::filesystem::path& edges_path);

void save_label_records(std::span<const LabelRecord> labels, const std::filesystem::path& path);

/// Converts the classic Cora/Citeseer export pair (`.content`: id, features...,
/// class name; `.cites`: cited citing) plus a `id<TAB>text` file into the
/// native format. Returns the class names in id order.
std::vector<std::string> convert_planetoid_export(const std::filesystem::path& content_path,
                                                  const std::filesystem::path& cites_path,
                                                  const std::filesystem::path& texts_path,
                                                  const std::filesystem::path& nodes_out,
                                                  const std::filesystem::path& edges_out);

}  // namespace dtgba
