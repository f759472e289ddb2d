#include "dtgba/struct_trigger.hpp"

#include "dtgba/errors.hpp"
#include "dtgba/rng.hpp"
#include "dtgba/serialize.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dtgba {

namespace {

constexpr const char* kGeneratorMagic = "DTGBAGEN";

// Below this magnitude a detached score is too small to divide by, and the
// multiplier falls back to 1 + s - s0.
constexpr double kScoreFloor = 1e-3;

Eigen::MatrixXd xavier_matrix(int rows, int cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(-bound, bound);
  }
  return m;
}

double cosine_value(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

}  // namespace

TriggerGeneratorParams TriggerGeneratorParams::xavier(int input_dim, int latent_dim, int trigger_size,
                                                      std::uint64_t seed, double edge_threshold,
                                                      double homophily_margin) {
  if (input_dim < 1 || latent_dim < 1) throw ValidationError("generator: dimensions must be positive");
  Rng rng(derive_seed(seed, "generator-init"));
  TriggerGeneratorParams p;
  p.map_w1 = xavier_matrix(input_dim, latent_dim, rng);
  p.map_b1 = Eigen::MatrixXd::Zero(1, latent_dim);
  p.map_w2 = xavier_matrix(latent_dim, latent_dim, rng);
  p.map_b2 = Eigen::MatrixXd::Zero(1, latent_dim);
  p.edge_w = xavier_matrix(3 * latent_dim, 1, rng);
  p.edge_b = Eigen::MatrixXd::Zero(1, 1);
  p.edge_threshold = edge_threshold;
  p.trigger_size = trigger_size;
  p.homophily_margin = homophily_margin;
  p.validate();
  return p;
}

void TriggerGeneratorParams::validate() const {
  if (!(edge_threshold > 0.0 && edge_threshold < 1.0)) throw ValidationError("generator: tau_e must be in (0, 1)");
  if (trigger_size < 1) throw ValidationError("generator: trigger size k must be >= 1");
  if (!(homophily_margin >= 0.0 && homophily_margin <= 1.0)) {
    throw ValidationError("generator: homophily margin must be in [0, 1]");
  }
  const int dh = static_cast<int>(map_w1.cols());
  if (map_b1.cols() != dh || map_w2.rows() != dh || map_b2.cols() != map_w2.cols() ||
      edge_w.rows() != 3 * map_w2.cols() || edge_w.cols() != 1 || edge_b.size() != 1) {
    throw ValidationError("generator: inconsistent weight shapes");
  }
  for (const Eigen::MatrixXd* m : {&map_w1, &map_b1, &map_w2, &map_b2, &edge_w, &edge_b}) {
    if (!m->allFinite()) throw ValidationError("generator: non-finite weights");
  }
}

std::uint64_t TriggerGeneratorParams::checksum() const {
  return checksum_matrices({&map_w1, &map_b1, &map_w2, &map_b2, &edge_w, &edge_b});
}

BoundGenerator bind_generator(ad::Tape& tape, const TriggerGeneratorParams& p, bool trainable) {
  auto bind = [&](const Eigen::MatrixXd& m) { return trainable ? tape.parameter(m) : tape.constant(m); };
  return BoundGenerator{bind(p.map_w1), bind(p.map_b1), bind(p.map_w2),
                        bind(p.map_b2), bind(p.edge_w), bind(p.edge_b)};
}

Eigen::MatrixXd map_attributes(const TriggerGeneratorParams& p, const Eigen::MatrixXd& x) {
  if (x.cols() != p.map_w1.rows()) throw ShapeError("map_attributes: attribute dimension mismatch");
  Eigen::MatrixXd h = ((x * p.map_w1).rowwise() + p.map_b1.row(0)).array().tanh().matrix();
  return (h * p.map_w2).rowwise() + p.map_b2.row(0);
}

ad::Var map_attributes(const BoundGenerator& g, const ad::Var& x) {
  if (x.cols() != g.map_w1.rows()) throw ShapeError("map_attributes: attribute dimension mismatch");
  return ad::add_row(ad::matmul(ad::tanh(ad::add_row(ad::matmul(x, g.map_w1), g.map_b1)), g.map_w2), g.map_b2);
}

double edge_score(const TriggerGeneratorParams& p, const Eigen::RowVectorXd& h_victim, const Eigen::RowVectorXd& h_t1,
                  const Eigen::RowVectorXd& h_t2) {
  const Eigen::Index dh = h_victim.size();
  const double logit = h_victim.dot(p.edge_w.col(0).segment(0, dh)) + h_t1.dot(p.edge_w.col(0).segment(dh, dh)) +
                       h_t2.dot(p.edge_w.col(0).segment(2 * dh, dh)) + p.edge_b(0, 0);
  return 1.0 / (1.0 + std::exp(-logit));
}

Selection select_top_k(const Eigen::RowVectorXd& h_victim, const Eigen::MatrixXd& pool_latents, int k,
                       std::optional<int> exclude) {
  if (k < 1) throw ValidationError("select_trigger_nodes: k must be >= 1");
  std::vector<int> candidates;
  std::vector<double> cos(static_cast<std::size_t>(pool_latents.rows()));
  for (Eigen::Index i = 0; i < pool_latents.rows(); ++i) {
    if (exclude && *exclude == i) continue;
    cos[static_cast<std::size_t>(i)] = cosine_value(h_victim, pool_latents.row(i));
    candidates.push_back(static_cast<int>(i));
  }
  if (static_cast<int>(candidates.size()) < k) {
    throw BoundsError("select_trigger_nodes: " + std::to_string(candidates.size()) + " candidates for k = " +
                      std::to_string(k));
  }
  std::partial_sort(candidates.begin(), candidates.begin() + k, candidates.end(), [&](int a, int b) {
    const double sa = cos[static_cast<std::size_t>(a)], sb = cos[static_cast<std::size_t>(b)];
    return sa != sb ? sa > sb : a < b;
  });
  Selection s;
  for (int i = 0; i < k; ++i) {
    s.nodes.push_back(candidates[static_cast<std::size_t>(i)]);
    s.scores.push_back(cos[static_cast<std::size_t>(candidates[static_cast<std::size_t>(i)])]);
  }
  return s;
}

Selection select_trigger_nodes(const TriggerGeneratorParams& params, const Eigen::RowVectorXd& h_victim,
                               const TextPool& pool, std::optional<int> exclude) {
  return select_top_k(h_victim, map_attributes(params, pool.embeddings), params.trigger_size, exclude);
}

std::vector<ad::EdgeIndex> score_edges(const TriggerGeneratorParams& params, const Eigen::RowVectorXd& h_victim,
                                       const Eigen::MatrixXd& selected, std::vector<double>* scores) {
  std::vector<ad::EdgeIndex> edges;
  for (int i = 0; i < selected.rows(); ++i) {
    for (int j = i + 1; j < selected.rows(); ++j) {
      const double s = edge_score(params, h_victim, selected.row(i), selected.row(j));
      if (scores) scores->push_back(s);
      if (s > params.edge_threshold) edges.push_back({i, j});
    }
  }
  return edges;
}

int select_bridge(const Eigen::RowVectorXd& h_victim, const Eigen::MatrixXd& selected) {
  if (selected.rows() == 0) throw BoundsError("select_bridge: no trigger nodes");
  int best = 0;
  double best_score = cosine_value(h_victim, selected.row(0));
  for (int i = 1; i < selected.rows(); ++i) {
    const double s = cosine_value(h_victim, selected.row(i));
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  return best;
}

StructTrigger trigger_from_selection(const TriggerGeneratorParams& params, const Eigen::RowVectorXd& h_victim,
                                     const Eigen::MatrixXd& pool_latents, std::span<const int> nodes) {
  StructTrigger t;
  t.nodes.assign(nodes.begin(), nodes.end());
  std::sort(t.nodes.begin(), t.nodes.end());
  if (std::adjacent_find(t.nodes.begin(), t.nodes.end()) != t.nodes.end()) {
    throw ValidationError("trigger: duplicate trigger node");
  }
  Eigen::MatrixXd selected(static_cast<Eigen::Index>(t.nodes.size()), pool_latents.cols());
  for (std::size_t i = 0; i < t.nodes.size(); ++i) {
    if (t.nodes[i] < 0 || t.nodes[i] >= pool_latents.rows()) throw BoundsError("trigger: node outside the pool");
    selected.row(static_cast<Eigen::Index>(i)) = pool_latents.row(t.nodes[i]);
    t.scores.push_back(cosine_value(h_victim, selected.row(static_cast<Eigen::Index>(i))));
  }
  t.edges = score_edges(params, h_victim, selected, &t.pair_scores);
  for (int i = 0; i < selected.rows(); ++i) {
    for (int j = i + 1; j < selected.rows(); ++j) t.pairs.push_back({i, j});
  }
  if (!t.nodes.empty()) t.bridge = select_bridge(h_victim, selected);
  return t;
}

StructTrigger generate_struct_trigger(const TriggerGeneratorParams& params, const Eigen::RowVectorXd& victim_attribute,
                                      const TextPool& pool, std::optional<int> exclude,
                                      const Eigen::MatrixXd* pool_latents) {
  const Eigen::MatrixXd own = pool_latents ? Eigen::MatrixXd() : map_attributes(params, pool.embeddings);
  const Eigen::MatrixXd& latents = pool_latents ? *pool_latents : own;
  if (latents.rows() != static_cast<Eigen::Index>(pool.size())) throw ShapeError("trigger: pool latent count mismatch");
  const Eigen::RowVectorXd h_victim = map_attributes(params, victim_attribute);
  const Selection sel = select_top_k(h_victim, latents, params.trigger_size, exclude);
  return trigger_from_selection(params, h_victim, latents, sel.nodes);
}

PoisonedEgoGraph inject_trigger(const EgoGraph& ego, const TriggeredText& text, const StructTrigger& trigger,
                                const TextPool& pool, const FrozenGfm& gfm) {
  if (ego.attributes.rows() != static_cast<Eigen::Index>(ego.nodes.size())) {
    throw ValidationError("inject_trigger: ego graph has no attributes");
  }
  for (int n : trigger.nodes) {
    if (n < 0 || static_cast<std::size_t>(n) >= pool.size()) {
      throw ValidationError("inject_trigger: trigger node " + std::to_string(n) + " is outside the text pool");
    }
  }
  if (!trigger.empty() && (trigger.bridge < 0 || static_cast<std::size_t>(trigger.bridge) >= trigger.nodes.size())) {
    throw ValidationError("inject_trigger: bridge is not a trigger node");
  }
  PoisonedEgoGraph g;
  g.base = ego;
  g.text = text;
  g.trigger = trigger;
  const int n = static_cast<int>(ego.nodes.size());
  const int k = static_cast<int>(trigger.nodes.size());
  g.attributes.resize(n + k, ego.attributes.cols());
  g.attributes.topRows(n) = ego.attributes;
  if (!text.triggered.empty() && text.triggered != text.original) g.attributes.row(0) = gfm.embed_text(text.triggered);
  for (int j = 0; j < k; ++j) {
    const auto& entry = pool.entries[static_cast<std::size_t>(trigger.nodes[static_cast<std::size_t>(j)])];
    g.attributes.row(n + j) = pool.embeddings.row(trigger.nodes[static_cast<std::size_t>(j)]);
    g.trigger_texts.push_back(entry.text);
    g.trigger_sources.push_back(entry.source);
  }
  g.edges = ego.edges;
  if (k > 0) g.edges.push_back({0, n + trigger.bridge});
  for (const auto& e : trigger.edges) g.edges.push_back({n + e.u, n + e.v});
  std::sort(g.edges.begin(), g.edges.end());
  return g;
}

void check_poisoned(const PoisonedEgoGraph& g, const TextPool& pool, int k) {
  const int n = g.base_size();
  const int triggers = static_cast<int>(g.trigger.nodes.size());
  if (k > 0 && triggers != k) {
    throw ValidationError("poisoned ego has " + std::to_string(triggers) + " trigger nodes, expected " +
                          std::to_string(k));
  }
  int cross = 0;
  for (const auto& e : g.edges) {
    const bool a = e.u >= n, b = e.v >= n;
    if (a != b) {
      ++cross;
      if (std::min(e.u, e.v) != 0) throw ValidationError("poisoned ego: cross edge does not touch the center");
    }
  }
  if (cross != (triggers > 0 ? 1 : 0)) {
    throw ValidationError("poisoned ego has " + std::to_string(cross) + " base-trigger edges");
  }
  for (int j = 0; j < triggers; ++j) {
    const int p = g.trigger.nodes[static_cast<std::size_t>(j)];
    if (g.trigger_texts[static_cast<std::size_t>(j)] != pool.entries[static_cast<std::size_t>(p)].text) {
      throw ValidationError("poisoned ego: trigger text is not its pool entry");
    }
    if (g.attributes.row(n + j) != pool.embeddings.row(p)) {
      throw ValidationError("poisoned ego: trigger attribute differs from its pool entry");
    }
  }
}

void check_poisoned(const PoisonedEgoGraph& g, const TextAttributedGraph& graph, int k) {
  TextPool pool;
  pool.embeddings.resize(static_cast<Eigen::Index>(g.trigger_sources.size()), g.attributes.cols());
  PoisonedEgoGraph local = g;
  for (std::size_t j = 0; j < g.trigger_sources.size(); ++j) {
    const NodeIndex src = g.trigger_sources[j];
    if (src < 0 || static_cast<std::size_t>(src) >= graph.num_nodes()) {
      throw ValidationError("poisoned ego: trigger source outside the graph");
    }
    pool.entries.push_back({src, graph.text(src), graph.attributes().row(src)});
    pool.embeddings.row(static_cast<Eigen::Index>(j)) = graph.attributes().row(src);
    local.trigger.nodes[j] = static_cast<int>(j);
  }
  check_poisoned(local, pool, k);
}

RelaxedTrigger relax_trigger(ad::Tape& tape, const BoundGenerator& g, const TriggerGeneratorParams& params,
                             const PoisonedEgoGraph& poisoned) {
  RelaxedTrigger r;
  const StructTrigger& t = poisoned.trigger;
  if (t.empty()) return r;
  const int k = static_cast<int>(t.nodes.size());
  ad::Var hv = map_attributes(g, tape.constant(poisoned.attributes.row(0)));
  ad::Var ht = map_attributes(g, tape.constant(poisoned.attributes.bottomRows(k)));
  ad::Var s = ad::cosine_rows(ht, hv);

  Eigen::MatrixXd mult(k, 1), offset(k, 1);
  for (int i = 0; i < k; ++i) {
    const double s0 = t.scores[static_cast<std::size_t>(i)];
    if (std::abs(s0) >= kScoreFloor) {
      mult(i, 0) = 1.0 / s0;
      offset(i, 0) = 0.0;
    } else {
      mult(i, 0) = 1.0;
      offset(i, 0) = 1.0 - s0;
    }
  }
  r.node_scale = ad::add(ad::hadamard(s, tape.constant(mult)), tape.constant(offset));

  if (!t.pairs.empty()) {
    std::vector<ad::Var> rows;
    rows.reserve(t.pairs.size());
    for (const auto& p : t.pairs) {
      const ad::Var parts[] = {hv, ad::row(ht, p.u), ad::row(ht, p.v)};
      rows.push_back(ad::concat_cols(parts));
    }
    ad::Var sigma = ad::sigmoid(ad::add_row(ad::matmul(ad::concat_rows(rows), g.edge_w), g.edge_b));
    Eigen::MatrixXd shift(static_cast<Eigen::Index>(t.pairs.size()), 1);
    for (std::size_t m = 0; m < t.pairs.size(); ++m) {
      const double s0 = t.pair_scores[m];
      shift(static_cast<Eigen::Index>(m), 0) = (s0 > params.edge_threshold ? 1.0 : 0.0) - s0;
    }
    r.pair_weights = ad::add(sigma, tape.constant(shift));
  }
  return r;
}

ad::Var relaxed_poisoned_embedding(ad::Tape& tape, const BoundWeights& w, const FrozenGfm& gfm,
                                   const PoisonedEgoGraph& poisoned, const RelaxedTrigger& relaxed,
                                   const ad::Var& prompt_projected) {
  const int n = poisoned.base_size();
  const int k = static_cast<int>(poisoned.trigger.nodes.size());
  const Eigen::MatrixXd projected = gfm.project_attributes(poisoned.attributes);
  ad::Var all;
  if (k == 0) {
    all = tape.constant(projected);
  } else {
    const ad::Var parts[] = {tape.constant(projected.topRows(n)),
                             ad::scale_rows(tape.constant(projected.bottomRows(k)), relaxed.node_scale)};
    all = ad::concat_rows(parts);
  }
  std::vector<ad::EdgeIndex> fixed;
  for (const auto& e : poisoned.base.edges) fixed.push_back({e.u, e.v});
  if (k > 0) fixed.push_back({0, n + poisoned.trigger.bridge});
  std::vector<ad::EdgeIndex> variable;
  for (const auto& p : poisoned.trigger.pairs) variable.push_back({n + p.u, n + p.v});
  ad::Var adjacency = ad::normalized_adjacency(tape, n + k, fixed, variable, relaxed.pair_weights);
  return encode_projected(w, all, prompt_projected, adjacency);
}

ad::Var homophily_terms(ad::Tape& tape, const PoisonedEgoGraph& poisoned, const RelaxedTrigger& relaxed,
                        double margin, int& edge_count) {
  const StructTrigger& t = poisoned.trigger;
  if (t.empty()) return tape.constant(Eigen::MatrixXd::Zero(1, 1));
  const int n = poisoned.base_size();
  auto hinge = [&](int a, int b) {
    return std::max(0.0, margin - cosine_value(poisoned.attributes.row(a), poisoned.attributes.row(b)));
  };
  std::vector<ad::Var> terms;
  terms.push_back(ad::scale(ad::row(relaxed.node_scale, t.bridge), hinge(0, n + t.bridge)));
  edge_count += 1;
  if (!t.pairs.empty()) {
    std::vector<int> first, second;
    Eigen::MatrixXd h(static_cast<Eigen::Index>(t.pairs.size()), 1);
    for (std::size_t m = 0; m < t.pairs.size(); ++m) {
      first.push_back(t.pairs[m].u);
      second.push_back(t.pairs[m].v);
      h(static_cast<Eigen::Index>(m), 0) = hinge(n + t.pairs[m].u, n + t.pairs[m].v);
    }
    ad::Var weight = ad::hadamard(ad::hadamard(relaxed.pair_weights, ad::gather_rows(relaxed.node_scale, first)),
                                  ad::gather_rows(relaxed.node_scale, second));
    terms.push_back(ad::sum(ad::hadamard(weight, tape.constant(h))));
    edge_count += static_cast<int>(t.edges.size());
  }
  return ad::add_scalars(tape, terms);
}

void save_generator(const TriggerGeneratorParams& p, const std::filesystem::path& path) {
  Checkpoint ckpt;
  ckpt.magic = kGeneratorMagic;
  ckpt.header = {{"edge_threshold", p.edge_threshold},
                 {"trigger_size", p.trigger_size},
                 {"homophily_margin", p.homophily_margin},
                 {"checksum", hex64(p.checksum())}};
  ckpt.tensors = {{"map_w1", p.map_w1}, {"map_b1", p.map_b1}, {"map_w2", p.map_w2},
                  {"map_b2", p.map_b2}, {"edge_w", p.edge_w}, {"edge_b", p.edge_b}};
  write_checkpoint(path, ckpt);
}

TriggerGeneratorParams load_generator(const std::filesystem::path& path) {
  Checkpoint ckpt = read_checkpoint(path, kGeneratorMagic, 1);
  TriggerGeneratorParams p;
  p.map_w1 = ckpt.tensors.at("map_w1");
  p.map_b1 = ckpt.tensors.at("map_b1");
  p.map_w2 = ckpt.tensors.at("map_w2");
  p.map_b2 = ckpt.tensors.at("map_b2");
  p.edge_w = ckpt.tensors.at("edge_w");
  p.edge_b = ckpt.tensors.at("edge_b");
  p.edge_threshold = ckpt.header.at("edge_threshold").get<double>();
  p.trigger_size = ckpt.header.at("trigger_size").get<int>();
  p.homophily_margin = ckpt.header.at("homophily_margin").get<double>();
  p.validate();
  if (hex64(p.checksum()) != ckpt.header.at("checksum").get<std::string>()) {
    throw ValidationError("load_generator: checksum mismatch in " + path.string());
  }
  return p;
}

}  // namespace dtgba
