#include "dtgba/gfm.hpp"

#include "dtgba/errors.hpp"
#include "dtgba/optim.hpp"
#include "dtgba/rng.hpp"
#include "dtgba/serialize.hpp"

#include <spdlog/spdlog.h>

#include <atomic>
#include <cmath>
#include <numeric>

namespace dtgba {

namespace {

constexpr const char* kMagic = "DTGBAGFM";
constexpr std::uint32_t kFormatVersion = 1;

std::atomic<bool> zero_vector_logged{false};

Eigen::MatrixXd xavier_matrix(int rows, int cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(-bound, bound);
  }
  return m;
}

void check_dims(const GfmDims& dims, const GraphEncoderWeights& w) {
  auto expect = [](const Eigen::MatrixXd& m, int r, int c, const char* name) {
    if (m.rows() != r || m.cols() != c) {
      throw ShapeError(std::string("gfm: weight ") + name + " has shape " + std::to_string(m.rows()) + "x" +
                       std::to_string(m.cols()) + ", expected " + std::to_string(r) + "x" + std::to_string(c));
    }
  };
  expect(w.w1, dims.text_dim, dims.hidden_dim, "w1");
  expect(w.b1, 1, dims.hidden_dim, "b1");
  expect(w.w2, dims.hidden_dim, dims.hidden_dim, "w2");
  expect(w.b2, 1, dims.hidden_dim, "b2");
  expect(w.graph_proj, dims.hidden_dim, dims.shared_dim, "graph_proj");
  expect(w.text_proj, dims.text_dim, dims.shared_dim, "text_proj");
}

std::vector<ad::EdgeIndex> to_edge_index(std::span<const LocalEdge> edges) {
  std::vector<ad::EdgeIndex> out;
  out.reserve(edges.size());
  for (const LocalEdge& e : edges) out.push_back({e.u, e.v});
  return out;
}

}  // namespace

double similarity(const SimilarityHead& head, const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
  if (a.size() != b.size()) throw ShapeError("similarity: dimension mismatch");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) {
    if (!zero_vector_logged.exchange(true)) spdlog::warn("similarity: zero vector, returning 0.0");
    return 0.0;
  }
  return a.dot(b) / (na * nb) / head.temperature;
}

LabelDescription LabelDescription::make(int class_id, std::string label_name, std::string explanation) {
  LabelDescription d;
  d.class_id = class_id;
  d.rendered = "This text belongs to " + label_name;
  if (!explanation.empty()) d.rendered += ", " + explanation;
  d.rendered += ".";
  d.label_name = std::move(label_name);
  d.explanation = std::move(explanation);
  return d;
}

std::vector<LabelDescription> make_label_descriptions(std::span<const LabelRecord> records) {
  std::vector<LabelDescription> out;
  out.reserve(records.size());
  for (const LabelRecord& r : records) out.push_back(LabelDescription::make(r.class_id, r.name, r.explanation));
  return out;
}

GraphEncoderWeights GraphEncoderWeights::xavier(const GfmDims& dims, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "gfm-init"));
  GraphEncoderWeights w;
  w.w1 = xavier_matrix(dims.text_dim, dims.hidden_dim, rng);
  w.b1 = Eigen::MatrixXd::Zero(1, dims.hidden_dim);
  w.w2 = xavier_matrix(dims.hidden_dim, dims.hidden_dim, rng);
  w.b2 = Eigen::MatrixXd::Zero(1, dims.hidden_dim);
  w.graph_proj = xavier_matrix(dims.hidden_dim, dims.shared_dim, rng);
  w.text_proj = xavier_matrix(dims.text_dim, dims.shared_dim, rng);
  return w;
}

std::uint64_t GraphEncoderWeights::checksum() const {
  return checksum_matrices({&w1, &b1, &w2, &b2, &graph_proj, &text_proj});
}

BoundWeights bind_weights(ad::Tape& tape, const GraphEncoderWeights& w, bool trainable) {
  auto put = [&](const Eigen::MatrixXd& m) { return trainable ? tape.parameter(m) : tape.constant(m); };
  return BoundWeights{put(w.w1), put(w.b1), put(w.w2), put(w.b2), put(w.graph_proj), put(w.text_proj)};
}

ad::Var view_adjacency(ad::Tape& tape, const GraphView& view) {
  const auto fixed = to_edge_index(view.edges);
  return ad::normalized_adjacency(tape, view.num_nodes, fixed, {}, ad::Var());
}

ad::Var encode_projected(const BoundWeights& w, const ad::Var& projected, const ad::Var& prompt_projected,
                         const ad::Var& adjacency) {
  ad::Var pre = prompt_projected.valid() ? ad::add_row(projected, prompt_projected) : projected;
  ad::Var h1 = ad::tanh(ad::add_row(ad::matmul(adjacency, pre), w.b1));
  ad::Var h2 = ad::tanh(ad::add_row(ad::matmul(ad::matmul(adjacency, h1), w.w2), w.b2));
  return ad::matmul(ad::mean_rows(h2), w.graph_proj);
}

FrozenGfm::FrozenGfm(std::shared_ptr<const TextEncoder> encoder, GfmDims dims, GraphEncoderWeights weights,
                     SimilarityHead head)
    : encoder_(std::move(encoder)), dims_(dims), weights_(std::move(weights)), head_(head) {
  if (!encoder_) throw ValidationError("gfm: text encoder is required");
  if (encoder_->dim() != dims_.text_dim) {
    throw ShapeError("gfm: text encoder dimension " + std::to_string(encoder_->dim()) + " != " +
                     std::to_string(dims_.text_dim));
  }
  if (!(head_.temperature > 0.0)) throw ValidationError("gfm: similarity temperature must be positive");
  check_dims(dims_, weights_);
}

void FrozenGfm::freeze() {
  frozen_ = true;
  checksum_ = weights_.checksum();
}

std::uint64_t FrozenGfm::current_checksum() const { return weights_.checksum(); }

void FrozenGfm::verify_frozen() const {
  if (!frozen_) throw ValidationError("gfm: model is not frozen");
  const std::uint64_t now = current_checksum();
  if (now != checksum_) {
    throw ValidationError("gfm: weight checksum changed from " + hex64(checksum_) + " to " + hex64(now));
  }
}

Eigen::RowVectorXd FrozenGfm::embed_text(std::string_view text) const { return encoder_->embed(text); }

Eigen::MatrixXd FrozenGfm::embed_texts(std::span<const std::string> texts) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(texts.size()), dims_.text_dim);
  for (std::size_t i = 0; i < texts.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = encoder_->embed(texts[i]);
  return out;
}

Eigen::MatrixXd FrozenGfm::project_attributes(const Eigen::MatrixXd& attributes) const {
  if (attributes.cols() != dims_.text_dim) throw ShapeError("gfm: attribute dimension mismatch");
  return attributes * weights_.w1;
}

Eigen::RowVectorXd FrozenGfm::encode_graph(const GraphView& view, const Eigen::MatrixXd& attributes) const {
  return encode_prompted(view, attributes, Eigen::RowVectorXd());
}

Eigen::RowVectorXd FrozenGfm::encode_prompted(const GraphView& view, const Eigen::MatrixXd& attributes,
                                              const Eigen::RowVectorXd& prompt) const {
  if (view.num_nodes < 1) throw ShapeError("encode_graph: empty graph");
  if (attributes.rows() != view.num_nodes) throw ShapeError("encode_graph: attribute row count mismatch");
  if (attributes.cols() != dims_.text_dim) {
    throw ShapeError("encode_graph: attribute dimension " + std::to_string(attributes.cols()) + " != " +
                     std::to_string(dims_.text_dim));
  }
  ad::Tape tape;
  BoundWeights w = bind(tape);
  ad::Var projected = tape.constant(attributes * weights_.w1);
  ad::Var pp;
  if (prompt.size() > 0) {
    if (prompt.size() != dims_.text_dim) throw ShapeError("encode_graph: prompt dimension mismatch");
    pp = tape.constant(prompt * weights_.w1);
  }
  return encode_projected(w, projected, pp, view_adjacency(tape, view)).value();
}

Eigen::RowVectorXd FrozenGfm::encode_label(const LabelDescription& label) const {
  return encoder_->embed(label.rendered) * weights_.text_proj;
}

Eigen::MatrixXd FrozenGfm::encode_labels(std::span<const LabelDescription> labels) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(labels.size()), dims_.shared_dim);
  for (std::size_t i = 0; i < labels.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = encode_label(labels[i]);
  return out;
}

nlohmann::json FrozenGfm::describe() const {
  return nlohmann::json{{"text_encoder", encoder_->config()},
                        {"dims", {{"text", dims_.text_dim}, {"hidden", dims_.hidden_dim}, {"shared", dims_.shared_dim}}},
                        {"similarity_temperature", head_.temperature},
                        {"frozen", frozen_},
                        {"checksum", hex64(frozen_ ? checksum_ : current_checksum())}};
}

void cache_attributes(TextAttributedGraph& graph, const TextEncoder& encoder) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(graph.num_nodes()), encoder.dim());
  for (std::size_t i = 0; i < graph.num_nodes(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = encoder.embed(graph.text(static_cast<NodeIndex>(i)));
  }
  graph.set_attributes(std::move(x));
}

namespace {

struct PretrainSample {
  EgoGraph ego;
  std::vector<ad::EdgeIndex> edges;
  Eigen::RowVectorXd summary;
};

std::vector<PretrainSample> build_samples(const TextAttributedGraph& graph, std::span<const NodeIndex> nodes,
                                          int hops) {
  std::vector<PretrainSample> out;
  out.reserve(nodes.size());
  for (NodeIndex n : nodes) {
    PretrainSample s;
    s.ego = extract_ego_graph(graph, n, hops);
    s.edges = to_edge_index(s.ego.edges);
    s.summary = s.ego.attributes.colwise().mean();
    out.push_back(std::move(s));
  }
  return out;
}

/// Builds the symmetric contrastive loss for one batch; returns the loss Var.
ad::Var batch_loss(ad::Tape& tape, const BoundWeights& w, std::span<const PretrainSample* const> batch,
                   double temperature) {
  std::vector<ad::Var> graphs, summaries;
  for (const PretrainSample* s : batch) {
    ad::Var x = tape.constant(s->ego.attributes);
    ad::Var adj = ad::normalized_adjacency(tape, static_cast<int>(s->ego.size()), s->edges, {}, ad::Var());
    graphs.push_back(encode_projected(w, ad::matmul(x, w.w1), ad::Var(), adj));
    summaries.push_back(ad::matmul(tape.constant(s->summary), w.text_proj));
  }
  ad::Var z = ad::normalize_rows(ad::concat_rows(graphs));
  ad::Var t = ad::normalize_rows(ad::concat_rows(summaries));
  ad::Var logits = ad::scale(ad::matmul(z, ad::transpose(t)), 1.0 / temperature);
  std::vector<int> targets(batch.size());
  std::iota(targets.begin(), targets.end(), 0);
  ad::Var l1 = ad::mean_nll_rows(logits, targets);
  ad::Var l2 = ad::mean_nll_rows(ad::transpose(logits), targets);
  return ad::scale(ad::add(l1, l2), 0.5);
}

}  // namespace

FrozenGfm pretrain_gfm(const TextAttributedGraph& graph, std::shared_ptr<const TextEncoder> encoder,
                       const PretrainConfig& config, std::uint64_t seed, std::vector<double>* epoch_losses) {
  if (!graph.has_attributes()) throw ValidationError("pretrain_gfm: graph attributes are not cached");
  if (graph.attribute_dim() != config.dims.text_dim) throw ShapeError("pretrain_gfm: attribute dimension mismatch");
  if (config.epochs < 0) throw ValidationError("pretrain_gfm: epochs must be >= 0");
  if (config.batch_size < 2) throw ValidationError("pretrain_gfm: batch_size must be >= 2");
  if (!(config.temperature > 0.0)) throw ValidationError("pretrain_gfm: temperature must be positive");

  GraphEncoderWeights weights = GraphEncoderWeights::xavier(config.dims, seed);
  std::vector<NodeIndex> nodes(graph.num_nodes());
  std::iota(nodes.begin(), nodes.end(), 0);
  const std::vector<PretrainSample> samples = config.epochs > 0 ? build_samples(graph, nodes, config.hops)
                                                                : std::vector<PretrainSample>{};
  Adam opt(config.learning_rate);
  Rng rng(derive_seed(seed, "gfm-batches"));
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start + 1 < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      if (end - start < 2) break;
      std::vector<const PretrainSample*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&samples[order[i]]);

      ad::Tape tape;
      BoundWeights w = bind_weights(tape, weights, true);
      ad::Var loss = batch_loss(tape, w, batch, config.temperature);
      const double value = loss.scalar();
      if (!std::isfinite(value)) throw DivergenceError("pretrain_gfm: non-finite contrastive loss", epoch);
      tape.backward(loss);
      Eigen::MatrixXd* params[] = {&weights.w1, &weights.b1, &weights.w2, &weights.b2, &weights.graph_proj,
                                   &weights.text_proj};
      const Eigen::MatrixXd grads[] = {w.w1.grad(), w.b1.grad(), w.w2.grad(), w.b2.grad(), w.graph_proj.grad(),
                                       w.text_proj.grad()};
      opt.step(params, grads);
      total += value;
      ++batches;
    }
    const double mean = batches > 0 ? total / batches : 0.0;
    if (epoch_losses) epoch_losses->push_back(mean);
    spdlog::debug("pretrain epoch {} loss {:.5f}", epoch, mean);
  }

  FrozenGfm gfm(std::move(encoder), config.dims, std::move(weights), SimilarityHead{config.similarity_temperature});
  gfm.freeze();
  return gfm;
}

double retrieval_accuracy(const FrozenGfm& gfm, const TextAttributedGraph& graph, std::span<const NodeIndex> nodes,
                          int hops, int batch_size) {
  if (nodes.empty()) return 0.0;
  const auto samples = build_samples(graph, nodes, hops);
  std::size_t hits = 0;
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<Eigen::RowVectorXd> z, s;
    for (std::size_t i = start; i < end; ++i) {
      z.push_back(gfm.encode_graph(samples[i].ego));
      s.push_back(samples[i].summary * gfm.weights().text_proj);
    }
    for (std::size_t i = 0; i < z.size(); ++i) {
      std::size_t best = 0;
      double best_sim = -1e300;
      for (std::size_t j = 0; j < s.size(); ++j) {
        const double sim = similarity(gfm.head(), z[i], s[j]);
        if (sim > best_sim) {
          best_sim = sim;
          best = j;
        }
      }
      if (best == i) ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

void save_gfm(const FrozenGfm& gfm, const std::filesystem::path& path) {
  if (!gfm.frozen()) throw ValidationError("save_gfm: only frozen models are serialized");
  Checkpoint ckpt;
  ckpt.magic = kMagic;
  ckpt.version = kFormatVersion;
  ckpt.header = gfm.describe();
  const auto& w = gfm.weights();
  ckpt.tensors = {{"w1", w.w1},         {"b1", w.b1}, {"w2", w.w2}, {"b2", w.b2}, {"graph_proj", w.graph_proj},
                  {"text_proj", w.text_proj}};
  write_checkpoint(path, ckpt);
}

FrozenGfm load_gfm(const std::filesystem::path& path) {
  Checkpoint ckpt = read_checkpoint(path, kMagic, kFormatVersion);
  const auto& h = ckpt.header;
  GfmDims dims{h.at("dims").at("text").get<int>(), h.at("dims").at("hidden").get<int>(),
               h.at("dims").at("shared").get<int>()};
  auto take = [&](const char* name) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) throw ValidationError(std::string("load_gfm: missing tensor ") + name);
    return it->second;
  };
  GraphEncoderWeights w{take("w1"), take("b1"), take("w2"), take("b2"), take("graph_proj"), take("text_proj")};
  FrozenGfm gfm(make_text_encoder(h.at("text_encoder")), dims, std::move(w),
                SimilarityHead{h.at("similarity_temperature").get<double>()});
  gfm.freeze();
  const std::string stored = h.at("checksum").get<std::string>();
  if (stored != hex64(gfm.recorded_checksum())) {
    throw ValidationError("load_gfm: checksum mismatch in " + path.string() + " (stored " + stored + ", computed " +
                          hex64(gfm.recorded_checksum()) + ")");
  }
  return gfm;
}

}  // namespace dtgba
