#include "dtgba/eval_harness.hpp"

#include "dtgba/errors.hpp"
#include "dtgba/rng.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <unordered_set>

namespace dtgba {

// ---- metrics ------------------------------------------------------------------------

double clean_accuracy(const FrozenGfm& gfm, const TextAttributedGraph& graph, const Prompt& prompt,
                      std::span<const NodeIndex> test, std::span<const LabelDescription> labels, int hops,
                      std::optional<double> prune_threshold) {
  if (test.empty()) throw ValidationError("clean accuracy: empty test set");
  const Eigen::MatrixXd label_embeddings = gfm.encode_labels(labels);
  int correct = 0;
  for (NodeIndex v : test) {
    EgoGraph ego = extract_ego_graph(graph, v, hops);
    if (prune_threshold) ego = prune_edges(ego, *prune_threshold);
    correct += predict_encoded(gfm, encode_ego(gfm, ego), prompt.vector, label_embeddings) == graph.label(v);
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

AsrOutcome evaluate_asr(const AttackContext& ctx, const AttackConfig& config, const TriggerGeneratorParams& generator,
                        const Prompt& prompt, std::span<const NodeIndex> test, std::optional<double> prune_threshold,
                        std::uint64_t seed) {
  const FrozenGfm& gfm = *ctx.gfm;
  const Eigen::MatrixXd label_embeddings = gfm.encode_labels(ctx.labels);
  const Eigen::MatrixXd latents = map_attributes(generator, ctx.pool->embeddings);
  AsrOutcome out;
  for (NodeIndex v : test) {
    if (ctx.graph->label(v) == config.target) continue;
    PoisonedEgoGraph p = poison_victim(ctx, config, generator, latents, v, seed);
    if (prune_threshold) p = prune_edges(p, *prune_threshold);
    const int pred = predict_encoded(gfm, encode_ego(gfm, p.view(), p.attributes), prompt.vector, label_embeddings);
    out.hits += pred == config.target;
    out.victims.push_back(v);
    out.predictions.push_back(pred);
    out.poisoned.push_back(std::move(p));
  }
  if (out.victims.empty()) throw ValidationError("attack success rate: no eligible victims");
  out.asr = static_cast<double>(out.hits) / static_cast<double>(out.victims.size());
  return out;
}

namespace {

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("spearman: length mismatch");
  if (x.size() < 2) return 0.0;
  const std::vector<double> rx = average_ranks(x);
  const std::vector<double> ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

Imp compute_imp(const AttackReport& a, const AttackReport& b) { return Imp{a.ca - b.ca, a.asr - b.asr}; }

// ---- variants -----------------------------------------------------------------------

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Dtgba: return "dtgba";
    case Variant::DtgbaPlus: return "dtgba_plus";
    case Variant::StructOnlyAdaptive: return "struct_only_adaptive";
    case Variant::StructOnlySampled: return "struct_only_sampled";
    case Variant::WithoutTlg: return "without_tlg";
    case Variant::WithoutSlg: return "without_slg";
    case Variant::WithoutTp: return "without_tp";
  }
  return "dtgba";
}

Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::Dtgba, Variant::DtgbaPlus, Variant::StructOnlyAdaptive, Variant::StructOnlySampled,
                    Variant::WithoutTlg, Variant::WithoutSlg, Variant::WithoutTp}) {
    if (to_string(v) == s) return v;
  }
  throw ValidationError("unknown variant '" + s + "'");
}

bool is_baseline(Variant v) { return v == Variant::StructOnlyAdaptive || v == Variant::StructOnlySampled; }

bool is_ablation(Variant v) {
  return v == Variant::WithoutTlg || v == Variant::WithoutSlg || v == Variant::WithoutTp;
}

AttackConfig apply_variant(AttackConfig config, Variant v) {
  switch (v) {
    case Variant::Dtgba:
      config.epsilon = 0.0;
      config.augment = false;
      break;
    case Variant::DtgbaPlus:
      if (!(config.epsilon > 0.0) && !config.augment) config.augment = true;
      break;
    case Variant::StructOnlyAdaptive:
    case Variant::WithoutTlg:
      config.text_trigger = false;
      break;
    case Variant::StructOnlySampled:
      config.text_trigger = false;
      config.selection = TriggerSelection::SampledEgo;
      break;
    case Variant::WithoutSlg:
      config.struct_trigger = false;
      break;
    case Variant::WithoutTp:
      config.selection = TriggerSelection::EgoNetwork;
      break;
  }
  if (v != Variant::DtgbaPlus) {
    config.epsilon = 0.0;
    config.augment = false;
  }
  return config;
}

std::string to_string(DefenseKind d) {
  switch (d) {
    case DefenseKind::None: return "none";
    case DefenseKind::Prune: return "prune";
    case DefenseKind::FineTune: return "finetune";
  }
  return "none";
}

DefenseKind parse_defense(const std::string& s) {
  if (s == "none") return DefenseKind::None;
  if (s == "prune") return DefenseKind::Prune;
  if (s == "finetune") return DefenseKind::FineTune;
  throw ValidationError("unknown defense '" + s + "' (expected none, prune or finetune)");
}

// ---- protocol -----------------------------------------------------------------------

AttackContext Workbench::test_context() const {
  if (!test_graph) return context();
  return AttackContext{&*test_graph, gfm.get(), labels, &pool, &test_triggers};
}

void ProtocolConfig::validate() const {
  if (shots < 1) throw ValidationError("protocol.shots: must be >= 1");
  if (seeds.empty()) throw ValidationError("protocol.seeds: must not be empty");
  if (repeats < 1) throw ValidationError("protocol.repeats: must be >= 1");
  if (tuning.epochs < 0) throw ValidationError("protocol.tuning.epochs: must be >= 0");
  attack.validate();
  defense_config.validate();
}

nlohmann::json ProtocolConfig::to_json() const {
  return {{"shots", shots},
          {"seeds", seeds},
          {"repeats", repeats},
          {"tuning",
           {{"epochs", tuning.epochs},
            {"learning_rate", tuning.learning_rate},
            {"patience", tuning.patience},
            {"min_delta", tuning.min_delta},
            {"optimizer", to_string(tuning.optimizer)}}},
          {"attack", attack.to_json()},
          {"variant", to_string(variant)},
          {"defense", to_string(defense)},
          {"defense_config", defense_config.to_json()}};
}

ProtocolConfig ProtocolConfig::from_json(const nlohmann::json& j) {
  ProtocolConfig c;
  c.shots = j.value("shots", c.shots);
  c.seeds = j.value("seeds", c.seeds);
  c.repeats = j.value("repeats", c.repeats);
  if (j.contains("tuning")) {
    const auto& t = j.at("tuning");
    c.tuning.epochs = t.value("epochs", c.tuning.epochs);
    c.tuning.learning_rate = t.value("learning_rate", c.tuning.learning_rate);
    c.tuning.patience = t.value("patience", c.tuning.patience);
    c.tuning.min_delta = t.value("min_delta", c.tuning.min_delta);
    if (t.contains("optimizer")) c.tuning.optimizer = parse_optimizer_kind(t.at("optimizer").get<std::string>());
  }
  if (j.contains("attack")) c.attack = AttackConfig::from_json(j.at("attack"));
  if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
  if (j.contains("defense")) c.defense = parse_defense(j.at("defense").get<std::string>());
  if (j.contains("defense_config")) c.defense_config = DefenseConfig::from_json(j.at("defense_config"));
  c.validate();
  return c;
}

nlohmann::json RunMetrics::to_json() const {
  nlohmann::json j{{"seed", seed},   {"repeat", repeat},     {"clean_ca", clean_ca}, {"ca", ca},
                   {"asr", asr},     {"lm_asr", lm_asr},     {"semantic", semantic}, {"epochs", epochs}};
  if (defended_ca) j["defended_ca"] = *defended_ca;
  if (defended_asr) j["defended_asr"] = *defended_asr;
  return j;
}

RunMetrics RunMetrics::from_json(const nlohmann::json& j) {
  RunMetrics m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.repeat = j.at("repeat").get<int>();
  m.clean_ca = j.at("clean_ca").get<double>();
  m.ca = j.at("ca").get<double>();
  m.asr = j.at("asr").get<double>();
  m.lm_asr = j.at("lm_asr").get<double>();
  m.semantic = j.at("semantic").get<double>();
  m.epochs = j.at("epochs").get<int>();
  if (j.contains("defended_ca")) m.defended_ca = j.at("defended_ca").get<double>();
  if (j.contains("defended_asr")) m.defended_asr = j.at("defended_asr").get<double>();
  return m;
}

void AttackReport::aggregate() {
  clean_ca = ca = asr = lm_asr = semantic = 0.0;
  defended_ca.reset();
  defended_asr.reset();
  if (runs.empty()) return;
  const double n = static_cast<double>(runs.size());
  double dca = 0, dasr = 0;
  int defended = 0;
  for (const RunMetrics& r : runs) {
    clean_ca += r.clean_ca / n;
    ca += r.ca / n;
    asr += r.asr / n;
    lm_asr += r.lm_asr / n;
    semantic += r.semantic / n;
    if (r.defended_ca && r.defended_asr) {
      dca += *r.defended_ca;
      dasr += *r.defended_asr;
      ++defended;
    }
  }
  if (defended > 0) {
    defended_ca = dca / defended;
    defended_asr = dasr / defended;
  }
}

nlohmann::json AttackReport::to_json() const {
  nlohmann::json runs_json = nlohmann::json::array();
  for (const RunMetrics& r : runs) runs_json.push_back(r.to_json());
  nlohmann::json j{{"schema_version", kReportSchemaVersion},
                   {"variant", variant},
                   {"defense", defense},
                   {"status", status},
                   {"runs", runs_json},
                   {"clean_ca", clean_ca},
                   {"ca", ca},
                   {"asr", asr},
                   {"lm_asr", lm_asr},
                   {"semantic", semantic},
                   {"config", config}};
  if (!ok()) {
    j["failed_stage"] = failed_stage;
    j["error"] = error;
  }
  if (defended_ca) j["defended_ca"] = *defended_ca;
  if (defended_asr) j["defended_asr"] = *defended_asr;
  if (imp) j["imp"] = {{"delta_ca", imp->delta_ca}, {"delta_asr", imp->delta_asr}};
  return j;
}

AttackReport AttackReport::from_json(const nlohmann::json& j) {
  const int version = j.value("schema_version", 0);
  if (version != kReportSchemaVersion) {
    throw ValidationError("report: unsupported schema version " + std::to_string(version));
  }
  AttackReport r;
  r.variant = j.at("variant").get<std::string>();
  r.defense = j.value("defense", r.defense);
  r.status = j.value("status", r.status);
  r.failed_stage = j.value("failed_stage", std::string{});
  r.error = j.value("error", std::string{});
  for (const auto& run : j.at("runs")) r.runs.push_back(RunMetrics::from_json(run));
  r.aggregate();
  if (j.contains("imp")) r.imp = Imp{j["imp"].at("delta_ca").get<double>(), j["imp"].at("delta_asr").get<double>()};
  r.config = j.value("config", nlohmann::json::object());
  return r;
}

namespace {

std::vector<TriggeredText> victim_texts(const AttackContext& ctx, const AttackConfig& config,
                                        std::span<const NodeIndex> victims) {
  std::vector<TriggeredText> out;
  for (NodeIndex v : victims) {
    if (config.text_trigger && ctx.text_triggers && ctx.text_triggers->count(v)) {
      out.push_back(ctx.text_triggers->at(v));
    } else {
      out.push_back(untriggered(*ctx.graph, v, config.strategy));
    }
  }
  return out;
}

}  // namespace

AttackReport run_protocol(const Workbench& bench, const ProtocolConfig& config, std::vector<ProtocolRun>* runs) {
  AttackReport report;
  report.variant = to_string(config.variant);
  report.defense = to_string(config.defense);
  report.config = config.to_json();
  std::string stage = "validate";
  try {
    config.validate();
    if (!bench.gfm) throw ValidationError("protocol: no GFM");
    const FrozenGfm& gfm = *bench.gfm;
    const AttackContext ctx = bench.context();
    const AttackContext eval_ctx = bench.test_context();
    const TextAttributedGraph& eval_graph = *eval_ctx.graph;
    for (std::uint64_t seed : config.seeds) {
      for (int r = 0; r < config.repeats; ++r) {
        const auto rep = static_cast<std::uint64_t>(r);
        stage = "split";
        const FewShotSplit split = few_shot_split(bench.graph, config.shots, derive_seed(seed, "split", rep));
        const std::vector<NodeIndex> tune_nodes = split.tune_nodes();
        std::vector<NodeIndex> test = split.test_set;
        if (bench.test_graph) {
          check_cross_dataset_disjoint(bench.graph, tune_nodes, bench.pool, *bench.test_graph);
          test.resize(bench.test_graph->num_nodes());
          std::iota(test.begin(), test.end(), 0);
        }
        AttackConfig attack = apply_variant(config.attack, config.variant);
        attack.seed = derive_seed(seed, "attack", rep);
        TuningConfig tuning = config.tuning;
        tuning.hops = attack.hops;

        stage = "tune";
        const Prompt clean_prompt = tune_clean_prompt(gfm, bench.graph, split, bench.labels, tuning);
        RunMetrics m;
        m.seed = seed;
        m.repeat = r;
        m.clean_ca = clean_accuracy(gfm, eval_graph, clean_prompt, test, bench.labels, attack.hops);

        stage = "attack";
        AttackResult result = run_attack(ctx, split, attack);
        m.epochs = result.trace.epochs;

        stage = "evaluate";
        m.ca = clean_accuracy(gfm, eval_graph, result.prompt, test, bench.labels, attack.hops);
        AsrOutcome outcome = evaluate_asr(eval_ctx, attack, result.generator, result.prompt, test, std::nullopt,
                                          attack.seed);
        m.asr = outcome.asr;
        const std::vector<TriggeredText> texts = victim_texts(eval_ctx, attack, outcome.victims);
        if (bench.probe) m.lm_asr = lm_asr_probe(*bench.probe, texts, attack.target);
        for (const TriggeredText& t : texts) {
          m.semantic += semantic_similarity(gfm, t.original, t.triggered) / static_cast<double>(texts.size());
        }

        stage = "defend";
        if (config.defense == DefenseKind::Prune) {
          const double t = config.defense_config.prune_threshold;
          m.defended_ca = clean_accuracy(gfm, eval_graph, result.prompt, test, bench.labels, attack.hops, t);
          m.defended_asr = evaluate_asr(eval_ctx, attack, result.generator, result.prompt, test, t, attack.seed).asr;
        } else if (config.defense == DefenseKind::FineTune) {
          const DefenseConfig& dc = config.defense_config;
          const FewShotSplit clean = defender_split(bench.graph, dc.finetune_shots,
                                                    derive_seed(seed, "defense", rep) ^ dc.seed, tune_nodes);
          const Prompt sanitized =
              fine_tune_prompt(gfm, bench.graph, result.prompt, clean, bench.labels, dc, attack.hops, tune_nodes);
          std::vector<NodeIndex> held_out = test;
          if (!bench.test_graph) {
            const std::vector<NodeIndex> used = clean.tune_nodes();
            const std::set<NodeIndex> used_set(used.begin(), used.end());
            std::erase_if(held_out, [&](NodeIndex v) { return used_set.count(v) > 0; });
          }
          m.defended_ca = clean_accuracy(gfm, eval_graph, sanitized, held_out, bench.labels, attack.hops);
          m.defended_asr =
              evaluate_asr(eval_ctx, attack, result.generator, sanitized, held_out, std::nullopt, attack.seed).asr;
        }
        gfm.verify_frozen();
        spdlog::debug("{} seed {} repeat {}: CA {:.3f} ASR {:.3f}", report.variant, seed, r, m.ca, m.asr);
        report.runs.push_back(m);
        if (runs) runs->push_back(ProtocolRun{split, attack, std::move(result), std::move(outcome)});
      }
    }
  } catch (const Error& e) {
    report.status = "failed";
    report.failed_stage = stage;
    report.error = e.what();
    spdlog::error("{}: stage {} failed: {}", report.variant, stage, e.what());
  }
  report.aggregate();
  return report;
}

AttackReport run_baseline(Variant variant, const Workbench& bench, ProtocolConfig config,
                          std::vector<ProtocolRun>* runs) {
  if (!is_baseline(variant)) throw ValidationError("baseline: '" + to_string(variant) + "' is not a baseline");
  config.variant = variant;
  return run_protocol(bench, config, runs);
}

AttackReport run_ablation(Variant variant, const Workbench& bench, ProtocolConfig config,
                          std::vector<ProtocolRun>* runs) {
  if (!is_ablation(variant)) throw ValidationError("ablation: '" + to_string(variant) + "' is not an ablation");
  config.variant = variant;
  return run_protocol(bench, config, runs);
}

void check_cross_dataset_disjoint(const TextAttributedGraph& tune_graph, std::span<const NodeIndex> tune_nodes,
                                  const TextPool& pool, const TextAttributedGraph& test_graph) {
  std::unordered_set<std::string> seen;
  for (NodeIndex v : tune_nodes) seen.insert(tune_graph.text(v));
  for (const TextPoolEntry& e : pool.entries) seen.insert(e.text);
  for (std::size_t v = 0; v < test_graph.num_nodes(); ++v) {
    if (seen.count(test_graph.text(static_cast<NodeIndex>(v)))) {
      throw ValidationError("cross-dataset: test node " + std::to_string(v) +
                            " also appears in the tuning data or the text pool");
    }
  }
}

// ---- report files ------------------------------------------------------------------

namespace {

std::string num(double v) { return fmt::format("{:.6f}", v); }

std::string optional_num(const std::optional<double>& v) { return v ? num(*v) : std::string{}; }

const char* kPalette[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3"};

std::string svg_open(int w, int h) {
  return fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\" "
      "font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n",
      w, h, w, h, w, h);
}

std::string axes(int x0, int y0, int x1, int y1) {
  std::string s = fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n", x0, y1, x1, y1);
  s += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n", x0, y0, x0, y1);
  return s;
}

}  // namespace

std::string render_bar_chart(const std::vector<AttackReport>& reports) {
  const int group = 70, left = 50, top = 20, height = 220;
  const int width = left + 20 + group * std::max<int>(1, static_cast<int>(reports.size()));
  std::string s = svg_open(width, height + 90);
  s += axes(left, top, width - 10, top + height);
  for (int tick = 0; tick <= 4; ++tick) {
    const double y = top + height - height * tick / 4.0;
    s += fmt::format("<text x=\"{}\" y=\"{:.1f}\" text-anchor=\"end\">{:.2f}</text>\n", left - 4, y + 4, tick / 4.0);
  }
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const int x = left + 10 + group * static_cast<int>(i);
    const double vals[] = {reports[i].ca, reports[i].asr};
    for (int b = 0; b < 2; ++b) {
      const double h = height * std::clamp(vals[b], 0.0, 1.0);
      s += fmt::format("<rect x=\"{}\" y=\"{:.1f}\" width=\"24\" height=\"{:.1f}\" fill=\"{}\"/>\n", x + 26 * b,
                       top + height - h, h, kPalette[b]);
    }
    s += fmt::format("<text x=\"{}\" y=\"{}\" transform=\"rotate(30 {} {})\">{}</text>\n", x, top + height + 14, x,
                     top + height + 14, reports[i].variant);
  }
  s += fmt::format("<rect x=\"{}\" y=\"4\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{}\" y=\"13\">CA</text>\n",
                   width - 100, kPalette[0], width - 86);
  s += fmt::format("<rect x=\"{}\" y=\"4\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{}\" y=\"13\">ASR</text>\n",
                   width - 55, kPalette[1], width - 41);
  return s + "</svg>\n";
}

std::string render_scatter(const std::vector<AttackReport>& reports) {
  const int left = 50, top = 20, size = 240;
  std::string s = svg_open(left + size + 150, top + size + 40);
  s += axes(left, top, left + size, top + size);
  s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">LM ASR</text>\n", left + size / 2,
                   top + size + 30);
  s += fmt::format("<text x=\"12\" y=\"{}\" transform=\"rotate(-90 12 {})\" text-anchor=\"middle\">ASR</text>\n",
                   top + size / 2, top + size / 2);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const char* color = kPalette[i % std::size(kPalette)];
    for (const RunMetrics& r : reports[i].runs) {
      s += fmt::format("<circle cx=\"{:.1f}\" cy=\"{:.1f}\" r=\"4\" fill=\"{}\" fill-opacity=\"0.8\"/>\n",
                       left + size * std::clamp(r.lm_asr, 0.0, 1.0), top + size - size * std::clamp(r.asr, 0.0, 1.0),
                       color);
    }
    s += fmt::format("<circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"{}\"/><text x=\"{}\" y=\"{}\">{}</text>\n",
                     left + size + 16, top + 10 + 16 * static_cast<int>(i), color, left + size + 24,
                     top + 14 + 16 * static_cast<int>(i), reports[i].variant);
  }
  return s + "</svg>\n";
}

std::string render_loss_curves(const AttackTrace& trace) {
  const int left = 50, top = 20, width = 320, height = 200;
  std::string s = svg_open(left + width + 130, top + height + 40);
  s += axes(left, top, left + width, top + height);
  const std::vector<double>* series[] = {&trace.backdoor, &trace.clean, &trace.homophily, &trace.outer};
  const char* names[] = {"backdoor", "clean", "homophily", "outer"};
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto* v : series) {
    for (double x : *v) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  }
  if (!(hi > lo)) hi = lo + 1.0;
  const std::size_t n = trace.outer.size();
  for (std::size_t k = 0; k < std::size(series); ++k) {
    std::string points;
    for (std::size_t e = 0; e < series[k]->size(); ++e) {
      const double x = left + (n > 1 ? width * static_cast<double>(e) / static_cast<double>(n - 1) : 0.0);
      const double y = top + height - height * ((*series[k])[e] - lo) / (hi - lo);
      points += fmt::format("{:.1f},{:.1f} ", x, y);
    }
    s += fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n", points,
                     kPalette[k]);
    s += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\" stroke-width=\"2\"/>"
                     "<text x=\"{}\" y=\"{}\">{}</text>\n",
                     left + width + 12, top + 10 + 16 * static_cast<int>(k), left + width + 28,
                     top + 10 + 16 * static_cast<int>(k), kPalette[k], left + width + 32,
                     top + 14 + 16 * static_cast<int>(k), names[k]);
  }
  s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3g}</text>\n", left - 4, top + 4, hi);
  s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3g}</text>\n", left - 4, top + height + 4, lo);
  s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">epoch</text>\n", left + width / 2,
                   top + height + 30);
  return s + "</svg>\n";
}

void write_report(const std::vector<AttackReport>& reports, const std::filesystem::path& dir,
                  const AttackTrace* trace) {
  std::filesystem::create_directories(dir);
  nlohmann::json j{{"schema_version", kReportSchemaVersion}, {"reports", nlohmann::json::array()}};
  for (const AttackReport& r : reports) j["reports"].push_back(r.to_json());
  std::ofstream(dir / "report.json") << j.dump(2) << '\n';

  std::ofstream csv(dir / "metrics.csv");
  csv << "variant,defense,seed,repeat,clean_ca,ca,asr,lm_asr,semantic,epochs,defended_ca,defended_asr\n";
  for (const AttackReport& r : reports) {
    for (const RunMetrics& m : r.runs) {
      csv << r.variant << ',' << r.defense << ',' << m.seed << ',' << m.repeat << ',' << num(m.clean_ca) << ','
          << num(m.ca) << ',' << num(m.asr) << ',' << num(m.lm_asr) << ',' << num(m.semantic) << ',' << m.epochs
          << ',' << optional_num(m.defended_ca) << ',' << optional_num(m.defended_asr) << '\n';
    }
  }
  std::ofstream(dir / "ca_asr.svg") << render_bar_chart(reports);
  std::ofstream(dir / "lm_asr_scatter.svg") << render_scatter(reports);
  if (trace) std::ofstream(dir / "losses.svg") << render_loss_curves(*trace);
}

std::vector<AttackReport> read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LookupError("report: cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string(), 1, e.what());
  }
  if (j.value("schema_version", 0) != kReportSchemaVersion) {
    throw ValidationError("report: unsupported schema version in " + path.string());
  }
  std::vector<AttackReport> out;
  for (const auto& r : j.at("reports")) out.push_back(AttackReport::from_json(r));
  return out;
}

std::string imp_table(const std::vector<std::pair<std::string, AttackReport>>& runs) {
  std::string s = "base,run,base_ca,base_asr,run_ca,run_asr,delta_ca,delta_asr\n";
  if (runs.empty()) return s;
  const auto& [base_name, base] = runs.front();
  for (std::size_t i = 1; i < runs.size(); ++i) {
    const Imp d = compute_imp(runs[i].second, base);
    s += fmt::format("{},{},{},{},{},{},{},{}\n", base_name, runs[i].first, num(base.ca), num(base.asr),
                     num(runs[i].second.ca), num(runs[i].second.asr), num(d.delta_ca), num(d.delta_asr));
  }
  return s;
}

}  // namespace dtgba
