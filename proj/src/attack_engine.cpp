#include "dtgba/attack_engine.hpp"

#include "dtgba/errors.hpp"
#include "dtgba/rng.hpp"
#include "dtgba/serialize.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace dtgba {

std::string to_string(TriggerSelection s) {
  switch (s) {
    case TriggerSelection::Pool: return "pool";
    case TriggerSelection::EgoNetwork: return "ego_network";
    case TriggerSelection::SampledEgo: return "sampled_ego";
  }
  return "pool";
}

TriggerSelection parse_trigger_selection(const std::string& s) {
  if (s == "pool") return TriggerSelection::Pool;
  if (s == "ego_network") return TriggerSelection::EgoNetwork;
  if (s == "sampled_ego") return TriggerSelection::SampledEgo;
  throw ValidationError("unknown trigger selection '" + s + "' (expected pool, ego_network or sampled_ego)");
}

// ---- config ------------------------------------------------------------------------

void AttackConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ValidationError("attack." + field + ": " + why);
  };
  if (target < 0) fail("target", "must be >= 0");
  if (!(lambda >= 0.0)) fail("lambda", "must be >= 0");
  if (inner_steps < 1) fail("inner_steps", "must be >= 1");
  if (!(prompt_lr >= 0.0)) fail("prompt_lr", "must be >= 0");
  if (!(generator_lr >= 0.0)) fail("generator_lr", "must be >= 0");
  if (epochs < 0) fail("epochs", "must be >= 0");
  if (patience < 1) fail("patience", "must be >= 1");
  if (warm_start_epochs < 0) fail("warm_start_epochs", "must be >= 0");
  if (hops < 0) fail("hops", "must be >= 0");
  if (trigger_size < 1) fail("trigger_size", "must be >= 1");
  if (latent_dim < 1) fail("latent_dim", "must be >= 1");
  if (!(edge_threshold > 0.0 && edge_threshold < 1.0)) fail("edge_threshold", "must be in (0, 1)");
  if (!(homophily_margin >= 0.0 && homophily_margin <= 1.0)) fail("homophily_margin", "must be in [0, 1]");
  if (!(homophily_weight >= 0.0)) fail("homophily_weight", "must be >= 0");
  if (!std::isfinite(neg_contrastive_weight)) fail("neg_contrastive_weight", "must be finite");
  if (!(epsilon >= 0.0)) fail("epsilon", "must be >= 0");
  if (!(drop_node >= 0.0 && drop_node < 1.0)) fail("drop_node", "must be in [0, 1)");
  if (!(drop_edge >= 0.0 && drop_edge < 1.0)) fail("drop_edge", "must be in [0, 1)");
}

nlohmann::json AttackConfig::to_json() const {
  return {{"target", target},
          {"lambda", lambda},
          {"inner_steps", inner_steps},
          {"prompt_lr", prompt_lr},
          {"generator_lr", generator_lr},
          {"epochs", epochs},
          {"patience", patience},
          {"min_delta", min_delta},
          {"warm_start_epochs", warm_start_epochs},
          {"optimizer", dtgba::to_string(optimizer)},
          {"seed", seed},
          {"hops", hops},
          {"trigger_size", trigger_size},
          {"latent_dim", latent_dim},
          {"edge_threshold", edge_threshold},
          {"homophily_margin", homophily_margin},
          {"homophily_weight", homophily_weight},
          {"neg_contrastive_weight", neg_contrastive_weight},
          {"text_trigger", text_trigger},
          {"struct_trigger", struct_trigger},
          {"selection", dtgba::to_string(selection)},
          {"strategy", dtgba::to_string(strategy)},
          {"epsilon", epsilon},
          {"augment", augment},
          {"drop_node", drop_node},
          {"drop_edge", drop_edge}};
}

AttackConfig AttackConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("attack: expected an object");
  AttackConfig c;
  const nlohmann::json defaults = c.to_json();
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ValidationError("attack." + key + ": unknown field");
  }
  try {
    c.target = j.value("target", c.target);
    c.lambda = j.value("lambda", c.lambda);
    c.inner_steps = j.value("inner_steps", c.inner_steps);
    c.prompt_lr = j.value("prompt_lr", c.prompt_lr);
    c.generator_lr = j.value("generator_lr", c.generator_lr);
    c.epochs = j.value("epochs", c.epochs);
    c.patience = j.value("patience", c.patience);
    c.min_delta = j.value("min_delta", c.min_delta);
    c.warm_start_epochs = j.value("warm_start_epochs", c.warm_start_epochs);
    if (j.contains("optimizer")) c.optimizer = parse_optimizer_kind(j["optimizer"].get<std::string>());
    c.seed = j.value("seed", c.seed);
    c.hops = j.value("hops", c.hops);
    c.trigger_size = j.value("trigger_size", c.trigger_size);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.edge_threshold = j.value("edge_threshold", c.edge_threshold);
    c.homophily_margin = j.value("homophily_margin", c.homophily_margin);
    c.homophily_weight = j.value("homophily_weight", c.homophily_weight);
    c.neg_contrastive_weight = j.value("neg_contrastive_weight", c.neg_contrastive_weight);
    c.text_trigger = j.value("text_trigger", c.text_trigger);
    c.struct_trigger = j.value("struct_trigger", c.struct_trigger);
    if (j.contains("selection")) c.selection = parse_trigger_selection(j["selection"].get<std::string>());
    if (j.contains("strategy")) c.strategy = parse_strategy(j["strategy"].get<std::string>());
    c.epsilon = j.value("epsilon", c.epsilon);
    c.augment = j.value("augment", c.augment);
    c.drop_node = j.value("drop_node", c.drop_node);
    c.drop_edge = j.value("drop_edge", c.drop_edge);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("attack: ") + e.what());
  }
  c.validate();
  return c;
}

// ---- poisoning ---------------------------------------------------------------------

TriggeredText untriggered(const TextAttributedGraph& graph, NodeIndex v, StrategyId strategy) {
  const std::string& text = graph.text(v);
  return TriggeredText{text, text, strategy, "none", true, 0, 1.0};
}

TextPool ego_network_pool(const TextAttributedGraph& graph, NodeIndex victim, int hops, int k,
                          const TextPool& fallback) {
  std::vector<NodeIndex> members;
  for (int radius = std::max(1, hops); radius <= std::max(4, hops); ++radius) {
    const EgoGraph ego = extract_ego_graph(graph, victim, radius);
    members.assign(ego.nodes.begin() + 1, ego.nodes.end());
    if (static_cast<int>(members.size()) >= k) break;
  }
  std::set<NodeIndex> seen(members.begin(), members.end());
  for (const auto& e : fallback.entries) {
    if (static_cast<int>(members.size()) >= k) break;
    if (e.source != victim && seen.insert(e.source).second) members.push_back(e.source);
  }
  TextPool pool;
  pool.embeddings.resize(static_cast<Eigen::Index>(members.size()), graph.attribute_dim());
  for (std::size_t i = 0; i < members.size(); ++i) {
    pool.entries.push_back({members[i], graph.text(members[i]), graph.attributes().row(members[i])});
    pool.embeddings.row(static_cast<Eigen::Index>(i)) = graph.attributes().row(members[i]);
  }
  return pool;
}

PoisonedEgoGraph poison_victim(const AttackContext& ctx, const AttackConfig& config,
                               const TriggerGeneratorParams& params, const Eigen::MatrixXd& pool_latents,
                               NodeIndex victim, std::uint64_t seed) {
  const TextAttributedGraph& graph = *ctx.graph;
  const EgoGraph ego = extract_ego_graph(graph, victim, config.hops);
  TriggeredText text;
  if (config.text_trigger) {
    auto it = ctx.text_triggers ? ctx.text_triggers->find(victim) : TextTriggerMap::const_iterator{};
    if (!ctx.text_triggers || it == ctx.text_triggers->end()) {
      throw LookupError("no text trigger for node " + std::to_string(victim));
    }
    text = it->second;
  } else {
    text = untriggered(graph, victim, config.strategy);
  }
  if (!config.struct_trigger) return inject_trigger(ego, text, StructTrigger{}, *ctx.pool, *ctx.gfm);

  const Eigen::RowVectorXd victim_attr =
      text.triggered != text.original ? ctx.gfm->embed_text(text.triggered) : Eigen::RowVectorXd(ego.attributes.row(0));
  if (config.selection == TriggerSelection::Pool) {
    const StructTrigger t = generate_struct_trigger(params, victim_attr, *ctx.pool, ctx.pool->index_of(victim),
                                                    &pool_latents);
    return inject_trigger(ego, text, t, *ctx.pool, *ctx.gfm);
  }
  const TextPool local = ego_network_pool(graph, victim, config.hops, params.trigger_size, *ctx.pool);
  const Eigen::MatrixXd local_latents = map_attributes(params, local.embeddings);
  StructTrigger t;
  if (config.selection == TriggerSelection::EgoNetwork) {
    t = generate_struct_trigger(params, victim_attr, local, std::nullopt, &local_latents);
  } else {
    Rng rng(derive_seed(seed, "sampled-ego", static_cast<std::uint64_t>(victim)));
    std::vector<int> picks;
    for (std::size_t i : rng.sample_without_replacement(local.size(), static_cast<std::size_t>(params.trigger_size))) {
      picks.push_back(static_cast<int>(i));
    }
    t = trigger_from_selection(params, map_attributes(params, victim_attr), local_latents, picks);
  }
  return inject_trigger(ego, text, t, local, *ctx.gfm);
}

PoisonSet build_poison_set(const AttackContext& ctx, const AttackConfig& config, const TriggerGeneratorParams& params,
                           std::span<const NodeIndex> nodes, std::uint64_t seed) {
  PoisonSet set;
  const Eigen::MatrixXd latents = map_attributes(params, ctx.pool->embeddings);
  for (NodeIndex v : nodes) {
    set.nodes.push_back(v);
    set.labels.push_back(ctx.graph->label(v));
    set.clean.push_back(extract_ego_graph(*ctx.graph, v, config.hops));
    set.poisoned.push_back(poison_victim(ctx, config, params, latents, v, seed));
    if (config.struct_trigger) check_poisoned(set.poisoned.back(), *ctx.graph, params.trigger_size);
  }
  return set;
}

// ---- plain-value losses --------------------------------------------------------------

namespace {

double cosine_value(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

std::vector<EncodedEgo> encode_all(const FrozenGfm& gfm, std::span<const PoisonedEgoGraph> poisoned) {
  std::vector<EncodedEgo> out;
  out.reserve(poisoned.size());
  for (const auto& p : poisoned) out.push_back(encode_ego(gfm, p.view(), p.attributes));
  return out;
}

std::vector<EncodedEgo> encode_all(const FrozenGfm& gfm, std::span<const EgoGraph> egos) {
  std::vector<EncodedEgo> out;
  out.reserve(egos.size());
  for (const auto& e : egos) out.push_back(encode_ego(gfm, e));
  return out;
}

}  // namespace

double backdoor_loss(const FrozenGfm& gfm, const Eigen::RowVectorXd& prompt, std::span<const PoisonedEgoGraph> poisoned,
                     const Eigen::MatrixXd& label_embeddings, int target) {
  if (poisoned.empty()) throw ValidationError("backdoor_loss: empty poison set");
  const std::vector<int> targets(poisoned.size(), target);
  return prompt_loss(gfm, encode_all(gfm, poisoned), targets, label_embeddings, prompt);
}

double clean_loss(const FrozenGfm& gfm, const Eigen::RowVectorXd& prompt, std::span<const EgoGraph> clean,
                  std::span<const int> labels, const Eigen::MatrixXd& label_embeddings) {
  if (clean.empty()) throw ValidationError("clean_loss: empty clean set");
  return prompt_loss(gfm, encode_all(gfm, clean), labels, label_embeddings, prompt);
}

double neg_contrastive_loss(const FrozenGfm& gfm, const Eigen::RowVectorXd& prompt, std::span<const EgoGraph> clean,
                            std::span<const PoisonedEgoGraph> poisoned) {
  if (clean.size() != poisoned.size()) throw ShapeError("neg_contrastive_loss: unaligned pairs");
  if (clean.empty()) throw ValidationError("neg_contrastive_loss: empty set");
  double total = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const auto zc = gfm.encode_prompted(view_of(clean[i]), clean[i].attributes, prompt);
    const auto zp = gfm.encode_prompted(poisoned[i].view(), poisoned[i].attributes, prompt);
    total += cosine_value(zc, zp);
  }
  return -total / static_cast<double>(clean.size());
}

double homophily_loss(std::span<const PoisonedEgoGraph> poisoned, double margin) {
  double total = 0.0;
  int count = 0;
  for (const auto& p : poisoned) {
    if (p.trigger.empty()) continue;
    const int n = p.base_size();
    auto hinge = [&](int a, int b) {
      return std::max(0.0, margin - cosine_value(p.attributes.row(a), p.attributes.row(b)));
    };
    total += hinge(0, n + p.trigger.bridge);
    ++count;
    for (const auto& e : p.trigger.edges) {
      total += hinge(n + e.u, n + e.v);
      ++count;
    }
  }
  return count == 0 ? 0.0 : total / count;
}

// ---- tape losses ---------------------------------------------------------------------

OuterTerms outer_terms(ad::Tape& tape, const FrozenGfm& gfm, const BoundWeights& w, const BoundGenerator& g,
                       const TriggerGeneratorParams& params, const TextPool& pool, const PoisonSet& set,
                       const Eigen::MatrixXd& label_embeddings, int target, const ad::Var& prompt) {
  (void)pool;
  if (set.poisoned.empty()) throw ValidationError("outer_terms: empty poison set");
  if (set.clean.size() != set.poisoned.size()) throw ShapeError("outer_terms: unaligned poison set");
  ad::Var pp = ad::matmul(prompt, w.w1);
  std::vector<ad::Var> bkd, cos, homo;
  int edges = 0;
  const double scale = 1.0 / gfm.head().temperature;
  for (std::size_t i = 0; i < set.poisoned.size(); ++i) {
    const PoisonedEgoGraph& p = set.poisoned[i];
    const RelaxedTrigger r = relax_trigger(tape, g, params, p);
    ad::Var zp = relaxed_poisoned_embedding(tape, w, gfm, p, r, pp);
    bkd.push_back(ad::nll(ad::cosine_logits(zp, label_embeddings, scale), target));
    ad::Var zc = prompted_embedding(tape, w, encode_ego(gfm, set.clean[i]), pp);
    cos.push_back(ad::cosine(zc, zp));
    homo.push_back(homophily_terms(tape, p, r, params.homophily_margin, edges));
  }
  const double n = static_cast<double>(set.poisoned.size());
  OuterTerms out;
  out.backdoor = ad::scale(ad::add_scalars(tape, bkd), 1.0 / n);
  out.neg_contrastive = ad::scale(ad::add_scalars(tape, cos), -1.0 / n);
  out.homophily = ad::scale(ad::add_scalars(tape, homo), edges > 0 ? 1.0 / edges : 0.0);
  return out;
}

ad::Var inner_objective(ad::Tape& tape, const FrozenGfm& gfm, const BoundWeights& w,
                        std::span<const EncodedEgo> clean, std::span<const int> labels,
                        std::span<const EncodedEgo> poisoned, const Eigen::MatrixXd& label_embeddings, int target,
                        double lambda, const ad::Var& prompt) {
  const double t = gfm.head().temperature;
  ad::Var lc = classification_loss(tape, w, clean, labels, label_embeddings, t, prompt);
  const std::vector<int> targets(poisoned.size(), target);
  ad::Var lb = classification_loss(tape, w, poisoned, targets, label_embeddings, t, prompt);
  return ad::add(lc, ad::scale(lb, lambda));
}

// ---- optimization steps ------------------------------------------------------------

EncodedPoisonSet encode_poison_set(const FrozenGfm& gfm, const PoisonSet& set) {
  EncodedPoisonSet out;
  out.clean = encode_all(gfm, set.clean);
  out.poisoned = encode_all(gfm, set.poisoned);
  out.clean_aug = encode_all(gfm, set.clean_aug);
  out.poisoned_aug = encode_all(gfm, set.poisoned_aug);
  out.labels = set.labels;
  if (!set.clean_aug.empty()) out.labels_aug = set.labels;
  return out;
}

double inner_prompt_step(AttackState& state, const FrozenGfm& gfm, const EncodedPoisonSet& set,
                         const Eigen::MatrixXd& label_embeddings, int target, double lambda,
                         const Eigen::RowVectorXd& delta) {
  ad::Tape tape;
  BoundWeights w = gfm.bind(tape);
  Eigen::RowVectorXd at = state.prompt.vector;
  if (delta.size() > 0) {
    if (delta.size() != at.size()) throw ShapeError("inner step: perturbation dimension mismatch");
    at += delta;
  }
  ad::Var pv = tape.parameter(at);
  ad::Var loss =
      inner_objective(tape, gfm, w, set.clean, set.labels, set.poisoned, label_embeddings, target, lambda, pv);
  if (!set.clean_aug.empty()) {
    loss = ad::add(loss, inner_objective(tape, gfm, w, set.clean_aug, set.labels_aug, set.poisoned_aug,
                                         label_embeddings, target, lambda, pv));
  }
  const double value = loss.scalar();
  if (!std::isfinite(value)) throw DivergenceError("inner step: non-finite loss", -1);
  tape.backward(loss);
  const Eigen::MatrixXd g = pv.grad();
  if (!g.allFinite()) throw DivergenceError("inner step: non-finite gradient", -1);
  Eigen::MatrixXd p = state.prompt.vector;
  Eigen::MatrixXd* params[] = {&p};
  const Eigen::MatrixXd grads[] = {g};
  state.prompt_optimizer->step(params, grads);
  state.prompt.vector = p.row(0);
  return value;
}

OuterValues outer_generator_step(AttackState& state, const FrozenGfm& gfm, const TextPool& pool, const PoisonSet& set,
                                 const Eigen::MatrixXd& label_embeddings, int target, double homophily_weight,
                                 double neg_contrastive_weight) {
  ad::Tape tape;
  BoundWeights w = gfm.bind(tape);
  BoundGenerator g = bind_generator(tape, state.generator, true);
  OuterTerms t = outer_terms(tape, gfm, w, g, state.generator, pool, set, label_embeddings, target,
                             tape.constant(state.prompt.vector));
  ad::Var total = ad::add(ad::add(t.backdoor, ad::scale(t.neg_contrastive, neg_contrastive_weight)),
                          ad::scale(t.homophily, homophily_weight));
  OuterValues v{t.backdoor.scalar(), t.neg_contrastive.scalar(), t.homophily.scalar(), total.scalar()};
  if (!std::isfinite(v.total)) throw DivergenceError("outer step: non-finite loss", -1);
  tape.backward(total);
  const Eigen::MatrixXd grads[] = {g.map_w1.grad(), g.map_b1.grad(), g.map_w2.grad(),
                                   g.map_b2.grad(), g.edge_w.grad(), g.edge_b.grad()};
  for (const auto& gr : grads) {
    if (!gr.allFinite()) throw DivergenceError("outer step: non-finite gradient", -1);
  }
  TriggerGeneratorParams& p = state.generator;
  Eigen::MatrixXd* params[] = {&p.map_w1, &p.map_b1, &p.map_w2, &p.map_b2, &p.edge_w, &p.edge_b};
  state.generator_optimizer->step(params, grads);
  return v;
}

Eigen::RowVectorXd prompt_perturbation(int dim, double epsilon, std::uint64_t seed) {
  if (!(epsilon >= 0.0)) throw ValidationError("perturb_prompt: epsilon must be >= 0");
  Eigen::RowVectorXd d = Eigen::RowVectorXd::Zero(dim);
  if (epsilon == 0.0) return d;
  Rng rng(seed);
  for (int i = 0; i < dim; ++i) d(i) = rng.uniform(-epsilon, epsilon);
  return d;
}

Prompt perturb_prompt(const Prompt& prompt, double epsilon, std::uint64_t seed) {
  Prompt out = prompt;
  out.vector += prompt_perturbation(static_cast<int>(prompt.vector.size()), epsilon, seed);
  return out;
}

namespace {

struct Survivors {
  std::vector<int> nodes;  // kept base positions, center first
  std::vector<int> remap;  // old position -> new position or -1
  std::vector<LocalEdge> edges;
};

Survivors drop_base(const EgoGraph& ego, double drop_node, double drop_edge, Rng& rng) {
  if (!(drop_node >= 0.0 && drop_node < 1.0) || !(drop_edge >= 0.0 && drop_edge < 1.0)) {
    throw ValidationError("augment_structure: drop probabilities must be in [0, 1)");
  }
  Survivors s;
  const int n = static_cast<int>(ego.nodes.size());
  s.remap.assign(static_cast<std::size_t>(n), -1);
  for (int i = 0; i < n; ++i) {
    if (i == 0 || !rng.bernoulli(drop_node)) {
      s.remap[static_cast<std::size_t>(i)] = static_cast<int>(s.nodes.size());
      s.nodes.push_back(i);
    }
  }
  for (const auto& e : ego.edges) {
    const int u = s.remap[static_cast<std::size_t>(e.u)], v = s.remap[static_cast<std::size_t>(e.v)];
    if (u < 0 || v < 0) continue;
    if (!rng.bernoulli(drop_edge)) s.edges.push_back({u, v});
  }
  return s;
}

EgoGraph rebuild(const EgoGraph& ego, const Survivors& s) {
  EgoGraph out;
  out.center = ego.center;
  out.hop_radius = ego.hop_radius;
  out.edges = s.edges;
  out.attributes.resize(static_cast<Eigen::Index>(s.nodes.size()), ego.attributes.cols());
  for (std::size_t i = 0; i < s.nodes.size(); ++i) {
    out.nodes.push_back(ego.nodes[static_cast<std::size_t>(s.nodes[i])]);
    if (ego.attributes.rows() > 0) out.attributes.row(static_cast<Eigen::Index>(i)) = ego.attributes.row(s.nodes[i]);
  }
  return out;
}

}  // namespace

EgoGraph augment_structure(const EgoGraph& ego, double drop_node, double drop_edge, std::uint64_t seed) {
  Rng rng(seed);
  return rebuild(ego, drop_base(ego, drop_node, drop_edge, rng));
}

PoisonedEgoGraph augment_structure(const PoisonedEgoGraph& ego, double drop_node, double drop_edge,
                                   std::uint64_t seed) {
  Rng rng(seed);
  const Survivors s = drop_base(ego.base, drop_node, drop_edge, rng);
  PoisonedEgoGraph out = ego;
  out.base = rebuild(ego.base, s);
  const int n = out.base_size();
  const int k = static_cast<int>(ego.trigger.nodes.size());
  out.attributes.resize(n + k, ego.attributes.cols());
  for (int i = 0; i < n; ++i) out.attributes.row(i) = ego.attributes.row(s.nodes[static_cast<std::size_t>(i)]);
  if (k > 0) out.attributes.bottomRows(k) = ego.attributes.bottomRows(k);
  out.edges = s.edges;
  out.trigger.edges.clear();
  if (k > 0) {
    out.edges.push_back({0, n + ego.trigger.bridge});
    for (const auto& e : ego.trigger.edges) {
      if (rng.bernoulli(drop_edge)) continue;
      out.trigger.edges.push_back(e);
      out.edges.push_back({n + e.u, n + e.v});
    }
  }
  std::sort(out.edges.begin(), out.edges.end());
  return out;
}

// ---- driver --------------------------------------------------------------------------

AttackResult run_attack(const AttackContext& ctx, const FewShotSplit& split, const AttackConfig& config) {
  config.validate();
  if (!ctx.graph || !ctx.gfm || !ctx.pool) throw ValidationError("attack: incomplete context");
  const FrozenGfm& gfm = *ctx.gfm;
  if (!gfm.frozen()) throw ValidationError("attack: GFM must be frozen");
  if (config.target >= static_cast<int>(ctx.labels.size())) throw ValidationError("attack.target: no such class");
  if (!ctx.graph->has_attributes()) throw ValidationError("attack: graph attributes are not cached");
  const std::uint64_t checksum = gfm.current_checksum();
  const bool hardened = config.epsilon > 0.0 || config.augment;

  const Eigen::MatrixXd labels = gfm.encode_labels(ctx.labels);
  const std::vector<NodeIndex> nodes = split.tune_nodes();
  if (nodes.empty()) throw ValidationError("attack: empty tune set");

  AttackResult result;
  AttackState state;
  state.generator = TriggerGeneratorParams::xavier(gfm.dims().text_dim, config.latent_dim, config.trigger_size,
                                                   derive_seed(config.seed, "generator"), config.edge_threshold,
                                                   config.homophily_margin);
  {
    TuningConfig warm;
    warm.epochs = config.warm_start_epochs;
    warm.learning_rate = config.prompt_lr;
    warm.optimizer = config.optimizer;
    warm.hops = config.hops;
    const TuningSet set = build_tuning_set(gfm, *ctx.graph, nodes, config.hops);
    state.prompt = config.warm_start_epochs > 0
                       ? optimize_prompt(gfm, set, labels, Prompt::zeros(gfm.dims().text_dim), warm)
                       : Prompt::zeros(gfm.dims().text_dim);
    result.trace.warm_start_epochs = state.prompt.epochs;
  }
  state.prompt.seed = config.seed;
  state.prompt_optimizer = make_optimizer(config.optimizer, config.prompt_lr);
  state.generator_optimizer = make_optimizer(config.optimizer, config.generator_lr);

  const std::uint64_t poison_seed = derive_seed(config.seed, "poison");
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  int last_finite = -1;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    PoisonSet set = build_poison_set(ctx, config, state.generator, nodes, poison_seed);
    if (hardened && config.augment) {
      const std::uint64_t aug = derive_seed(config.seed, "augment", static_cast<std::uint64_t>(epoch));
      result.trace.augmentation_seeds.push_back(aug);
      for (std::size_t i = 0; i < set.clean.size(); ++i) {
        set.clean_aug.push_back(augment_structure(set.clean[i], config.drop_node, config.drop_edge,
                                                  derive_seed(aug, "clean", i)));
        set.poisoned_aug.push_back(augment_structure(set.poisoned[i], config.drop_node, config.drop_edge,
                                                     derive_seed(aug, "poisoned", i)));
      }
    }
    const EncodedPoisonSet encoded = encode_poison_set(gfm, set);
    try {
      for (int t = 0; t < config.inner_steps; ++t) {
        Eigen::RowVectorXd delta;
        if (config.epsilon > 0.0) {
          delta = prompt_perturbation(gfm.dims().text_dim, config.epsilon,
                                      derive_seed(config.seed, "delta",
                                                  static_cast<std::uint64_t>(epoch * config.inner_steps + t)));
        }
        inner_prompt_step(state, gfm, encoded, labels, config.target, config.lambda, delta);
      }
      OuterValues v;
      if (config.struct_trigger) {
        v = outer_generator_step(state, gfm, *ctx.pool, set, labels, config.target, config.homophily_weight,
                                 config.neg_contrastive_weight);
      } else {
        v.backdoor = prompt_loss(gfm, encoded.poisoned, std::vector<int>(encoded.poisoned.size(), config.target),
                                 labels, state.prompt.vector);
        v.neg_contrastive = neg_contrastive_loss(gfm, state.prompt.vector, set.clean, set.poisoned);
        v.total = v.backdoor + config.neg_contrastive_weight * v.neg_contrastive;
      }
      result.trace.backdoor.push_back(v.backdoor);
      result.trace.neg_contrastive.push_back(v.neg_contrastive);
      result.trace.homophily.push_back(v.homophily);
      result.trace.outer.push_back(v.total);
      result.trace.clean.push_back(prompt_loss(gfm, encoded.clean, encoded.labels, labels, state.prompt.vector));
    } catch (const DivergenceError& e) {
      throw DivergenceError(std::string("attack diverged, last finite epoch ") + std::to_string(last_finite) + ": " +
                                e.what(),
                            last_finite);
    }
    last_finite = epoch;
    result.trace.epochs = epoch + 1;
    const double total = result.trace.outer.back();
    if (total < best - config.min_delta) {
      best = total;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  state.prompt.epochs = result.trace.warm_start_epochs + result.trace.epochs;
  state.prompt.final_loss = result.trace.clean.empty() ? state.prompt.final_loss : result.trace.clean.back();
  result.poison = build_poison_set(ctx, config, state.generator, nodes, poison_seed);
  result.prompt = std::move(state.prompt);
  result.generator = std::move(state.generator);
  gfm.verify_frozen();
  if (gfm.current_checksum() != checksum) throw ValidationError("attack: GFM weights changed");
  result.gfm_checksum = checksum;
  return result;
}

AttackResult run_dtgba(const AttackContext& ctx, const FewShotSplit& split, AttackConfig config) {
  config.epsilon = 0.0;
  config.augment = false;
  return run_attack(ctx, split, config);
}

AttackResult run_dtgba_plus(const AttackContext& ctx, const FewShotSplit& split, const AttackConfig& config) {
  if (!(config.epsilon > 0.0) && !config.augment) {
    throw ValidationError("attack: the hardened variant needs epsilon > 0 or augmentation");
  }
  return run_attack(ctx, split, config);
}

void write_attack_artifacts(const AttackResult& result, const AttackConfig& config,
                            const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "config.json");
    nlohmann::json j = config.to_json();
    j["gfm_checksum"] = hex64(result.gfm_checksum);
    out << j.dump(2) << '\n';
  }
  {
    std::ofstream out(dir / "losses.csv");
    out << "epoch,backdoor,clean,neg_contrastive,homophily,outer\n";
    for (std::size_t e = 0; e < result.trace.outer.size(); ++e) {
      out << e << ',' << fmt::format("{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}", result.trace.backdoor[e],
                                     result.trace.clean[e], result.trace.neg_contrastive[e],
                                     result.trace.homophily[e], result.trace.outer[e])
          << '\n';
    }
  }
  save_prompt(result.prompt, dir / "prompt.bin");
  save_generator(result.generator, dir / "generator.bin");
  std::ofstream out(dir / "poisoned_manifest.jsonl");
  for (std::size_t i = 0; i < result.poison.poisoned.size(); ++i) {
    const PoisonedEgoGraph& p = result.poison.poisoned[i];
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& e : p.trigger.edges) edges.push_back({p.trigger_sources[e.u], p.trigger_sources[e.v]});
    nlohmann::json j{{"node", result.poison.nodes[i]},
                     {"label", result.poison.labels[i]},
                     {"text_trigger", p.text.to_json()},
                     {"trigger_nodes", p.trigger_sources},
                     {"trigger_edges", edges},
                     {"bridge", p.trigger.empty() ? nlohmann::json(nullptr)
                                                  : nlohmann::json(p.trigger_sources[p.trigger.bridge])}};
    out << j.dump() << '\n';
  }
}

}  // namespace dtgba
