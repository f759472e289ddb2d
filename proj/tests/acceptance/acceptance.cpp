// Acceptance suite: one PASS/FAIL line per criterion on the synthetic
// fixture, all under the deterministic stub client.

#include "dtgba/attack_engine.hpp"
#include "dtgba/defense.hpp"
#include "dtgba/errors.hpp"
#include "dtgba/eval_harness.hpp"
#include "dtgba/experiment.hpp"
#include "dtgba/serialize.hpp"
#include "reference.hpp"
#include "test_util.hpp"
#include "tiny_world.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iterator>
#include <set>
#include <sstream>

using namespace dtgba;
using namespace dtgba::testkit;

namespace {

// Tolerances.
constexpr double kGradientTolerance = 1e-4;
constexpr double kMinAsrK3 = 0.80;
constexpr double kMinAsrK1 = 0.60;
constexpr double kMaxCaDrop = 0.05;
constexpr double kStructOnlyMargin = 0.05;
constexpr double kPruneMargin = 0.10;
constexpr double kFineTuneMargin = 0.05;
constexpr double kMinSpearman = 0.5;
constexpr double kMinSemantic = 0.90;
// Per-coordinate bound equivalent to an L2 budget of 2.0 over 384 dimensions.
const double kFixtureEpsilon = 2.0 / std::sqrt(384.0);
constexpr int kFixtureKeywordBudget = 12;

struct Line {
  int id;
  std::string name;
  bool pass;
  std::string detail;
  double seconds;
};

std::vector<Line> lines;

void record(int id, const std::string& name, bool pass, const std::string& detail, double seconds) {
  lines.push_back({id, name, pass, detail, seconds});
  std::printf("%s  %2d  %-34s %s  [%.1fs]\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str(), seconds);
  std::fflush(stdout);
}

double since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

RunConfig fixture_config() {
  RunConfig c;
  c.pretrain.similarity_temperature = 0.1;
  c.llm.stub_options.keyword_budget = kFixtureKeywordBudget;
  c.protocol.shots = 5;
  c.protocol.seeds = {1, 2, 3};
  c.protocol.repeats = 1;
  AttackConfig& a = c.protocol.attack;
  a.target = 0;
  a.trigger_size = 3;
  a.lambda = 1.0;
  a.hops = 1;
  a.generator_lr = 0.03;
  a.prompt_lr = 0.01;
  a.epochs = 100;
  return c;
}

// Every attack run of the suite, for the invariant checks.
struct Ledger {
  std::vector<ProtocolRun> runs;
  std::vector<std::string> failures;
  int tuning_runs = 0;
};

AttackReport protocol(const Workbench& bench, ProtocolConfig pc, Ledger& ledger) {
  std::vector<ProtocolRun> runs;
  AttackReport r = run_protocol(bench, pc, &runs);
  if (!r.ok()) ledger.failures.push_back(r.variant + ": " + r.failed_stage + ": " + r.error);
  ledger.tuning_runs += static_cast<int>(r.runs.size());
  for (auto& run : runs) ledger.runs.push_back(std::move(run));
  return r;
}

std::string ca_asr(const AttackReport& r) { return fmt::format("CA {:.3f} ASR {:.3f}", r.ca, r.asr); }

// ---- criterion 1 --------------------------------------------------------------------

double gradient_check() {
  auto w = tiny_world(2, 21);
  w.generator.map_b1 = random_matrix(1, 5, 31, -0.3, 0.3);
  w.generator.map_b2 = random_matrix(1, 5, 32, -0.3, 0.3);
  w.generator.edge_w *= 3.0;
  PoisonSet set;
  for (std::size_t i = 0; i < w.egos.size(); ++i) {
    set.nodes.push_back(w.egos[i].center);
    set.labels.push_back(static_cast<int>(i % 3));
    set.clean.push_back(w.egos[i]);
    set.poisoned.push_back(tiny_poison(w, i));
  }
  const Eigen::RowVectorXd prompt = random_matrix(1, kTinyDims.text_dim, 41, -0.4, 0.4);
  double worst = 0.0;
  auto compare = [&](const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& numeric) {
    if (numeric.cwiseAbs().maxCoeff() < 1e-9) {
      worst = std::max(worst, analytic.cwiseAbs().maxCoeff() < 1e-8 ? 0.0 : 1.0);
    } else {
      worst = std::max(worst, relative_error(analytic, numeric));
    }
  };

  // L_pt and L_clean share the classification loss; both are functions of the prompt only.
  const EncodedPoisonSet enc = encode_poison_set(w.gfm, set);
  {
    ad::Tape tape;
    auto bw = w.gfm.bind(tape);
    ad::Var pv = tape.parameter(prompt);
    tape.backward(classification_loss(tape, bw, enc.clean, enc.labels, w.labels, w.gfm.head().temperature, pv));
    auto f = [&](const Eigen::MatrixXd& p) { return prompt_loss(w.gfm, enc.clean, enc.labels, w.labels, p.row(0)); };
    compare(pv.grad(), numeric_gradient(f, prompt));
  }

  enum Term { Backdoor, Neg, Homo };
  auto value = [&](const TriggerGeneratorParams& params, const Eigen::RowVectorXd& p, Term term) {
    ad::Tape tape;
    auto bw = w.gfm.bind(tape);
    auto bg = bind_generator(tape, params, false);
    auto t = outer_terms(tape, w.gfm, bw, bg, params, w.pool, set, w.labels, 1, tape.constant(p));
    return (term == Backdoor ? t.backdoor : term == Neg ? t.neg_contrastive : t.homophily).scalar();
  };
  for (Term term : {Backdoor, Neg, Homo}) {
    ad::Tape tape;
    auto bw = w.gfm.bind(tape);
    auto bg = bind_generator(tape, w.generator, true);
    ad::Var pv = tape.parameter(prompt);
    auto t = outer_terms(tape, w.gfm, bw, bg, w.generator, w.pool, set, w.labels, 1, pv);
    tape.backward(term == Backdoor ? t.backdoor : term == Neg ? t.neg_contrastive : t.homophily);
    const std::pair<Eigen::MatrixXd TriggerGeneratorParams::*, const ad::Var*> slots[] = {
        {&TriggerGeneratorParams::map_w1, &bg.map_w1}, {&TriggerGeneratorParams::map_b1, &bg.map_b1},
        {&TriggerGeneratorParams::map_w2, &bg.map_w2}, {&TriggerGeneratorParams::map_b2, &bg.map_b2},
        {&TriggerGeneratorParams::edge_w, &bg.edge_w}, {&TriggerGeneratorParams::edge_b, &bg.edge_b}};
    for (const auto& [member, var] : slots) {
      auto f = [&](const Eigen::MatrixXd& m) {
        auto q = w.generator;
        q.*member = m;
        return value(q, prompt, term);
      };
      compare(var->grad(), numeric_gradient(f, w.generator.*member));
    }
    auto f = [&](const Eigen::MatrixXd& p) { return value(w.generator, p.row(0), term); };
    compare(pv.grad(), numeric_gradient(f, prompt));
  }
  return worst;
}

// ---- criterion 12 -------------------------------------------------------------------

double cos_of(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
  const double n = a.norm() * b.norm();
  return n == 0.0 ? 0.0 : a.dot(b) / n;
}

std::vector<int> brute_top_k(const Eigen::RowVectorXd& hv, const Eigen::MatrixXd& latents, int k, int exclude) {
  std::vector<std::pair<double, int>> all;
  for (int i = 0; i < latents.rows(); ++i) {
    if (i != exclude) all.push_back({-cos_of(hv, latents.row(i)), i});
  }
  std::sort(all.begin(), all.end());
  std::vector<int> out;
  for (int j = 0; j < k; ++j) out.push_back(all[static_cast<std::size_t>(j)].second);
  return out;
}

struct OracleCounts {
  int predict = 0, topk = 0, prune = 0, asr = 0;
  int predict_cases = 0, topk_cases = 0, prune_cases = 0, asr_cases = 0;
};

void oracle_predict_topk_prune(OracleCounts& oc) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto w = tiny_world(2, seed, 3, 30);
    for (std::size_t i = 0; i < w.egos.size(); ++i) {
      const PoisonedEgoGraph g = tiny_poison(w, i);
      const Eigen::RowVectorXd p = random_matrix(1, kTinyDims.text_dim, seed * 10 + i, -0.5, 0.5);
      ++oc.predict_cases;
      oc.predict += predict_encoded(w.gfm, encode_ego(w.gfm, g.view(), g.attributes), p, w.labels) ==
                    reference_predict(w.gfm.weights(), g.num_nodes(), g.edges, g.attributes, p, w.labels);
    }
    const Eigen::MatrixXd latents = random_matrix(30, 5, seed);
    const Eigen::RowVectorXd hv = random_matrix(1, 5, seed + 100);
    for (int k : {1, 3, 7}) {
      ++oc.topk_cases;
      oc.topk += select_top_k(hv, latents, k, static_cast<int>(seed % 30)).nodes ==
                 brute_top_k(hv, latents, k, static_cast<int>(seed % 30));
    }
    // 6-node graph with every pair as an edge: 15 candidate edges.
    EgoGraph ego;
    ego.nodes = {0, 1, 2, 3, 4, 5};
    ego.attributes = random_matrix(6, 4, seed + 200);
    for (int a = 0; a < 6; ++a) {
      for (int b = a + 1; b < 6; ++b) ego.edges.push_back({a, b});
    }
    for (double t : {-1.0, -0.3, 0.0, 0.2, 0.5, 1.0}) {
      std::vector<LocalEdge> expected;
      for (const LocalEdge& e : ego.edges) {
        if (cos_of(ego.attributes.row(e.u), ego.attributes.row(e.v)) >= t) expected.push_back(e);
      }
      ++oc.prune_cases;
      oc.prune += prune_edges(ego, t).edges == expected;
    }
  }
}

// ASR on 10 victims against a 30-entry pool, recomputed with dense matrices
// and brute-force selection.
void oracle_asr(const Workbench& bench, const AttackResult& result, const AttackConfig& config,
                std::span<const NodeIndex> test, OracleCounts& oc) {
  const TextPool pool = build_text_pool(bench.graph, 30, 5);
  const AttackContext ctx{&bench.graph, bench.gfm.get(), bench.labels, &pool, &bench.triggers};
  std::vector<NodeIndex> victims;
  for (NodeIndex v : test) {
    if (bench.graph.label(v) != config.target && !pool.index_of(v)) victims.push_back(v);
    if (victims.size() == 10) break;
  }
  const FrozenGfm& gfm = *bench.gfm;
  const Eigen::MatrixXd labels = gfm.encode_labels(bench.labels);
  const TriggerGeneratorParams& gen = result.generator;
  const Eigen::MatrixXd latents = map_attributes(gen, pool.embeddings);
  int hits = 0;
  for (NodeIndex v : victims) {
    const EgoGraph ego = extract_ego_graph(bench.graph, v, config.hops);
    const TriggeredText& text = bench.triggers.at(v);
    Eigen::MatrixXd x(ego.size() + static_cast<std::size_t>(config.trigger_size), gfm.dims().text_dim);
    x.topRows(static_cast<Eigen::Index>(ego.size())) = ego.attributes;
    x.row(0) = bench.encoder->embed(text.triggered);
    const Eigen::RowVectorXd hv = map_attributes(gen, x.row(0));
    const std::vector<int> picks = [&] {
      auto p = brute_top_k(hv, latents, config.trigger_size, -1);
      std::sort(p.begin(), p.end());
      return p;
    }();
    std::vector<LocalEdge> edges = ego.edges;
    const int base = static_cast<int>(ego.size());
    int bridge = 0;
    for (int j = 0; j < config.trigger_size; ++j) {
      x.row(base + j) = pool.embeddings.row(picks[static_cast<std::size_t>(j)]);
      if (cos_of(hv, latents.row(picks[static_cast<std::size_t>(j)])) >
          cos_of(hv, latents.row(picks[static_cast<std::size_t>(bridge)]))) {
        bridge = j;
      }
    }
    for (int a = 0; a < config.trigger_size; ++a) {
      for (int b = a + 1; b < config.trigger_size; ++b) {
        if (edge_score(gen, hv, latents.row(picks[static_cast<std::size_t>(a)]),
                       latents.row(picks[static_cast<std::size_t>(b)])) > gen.edge_threshold) {
          edges.push_back({base + a, base + b});
        }
      }
    }
    edges.push_back({0, base + bridge});
    const int n = base + config.trigger_size;
    hits += reference_predict(gfm.weights(), n, edges, x, result.prompt.vector, labels) == config.target;
  }
  const double expected = static_cast<double>(hits) / static_cast<double>(victims.size());
  ++oc.asr_cases;
  oc.asr += evaluate_asr(ctx, config, gen, result.prompt, victims).asr == expected;
}

// ---- criterion 13 -------------------------------------------------------------------

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  const auto start = std::chrono::steady_clock::now();
  auto t0 = start;

  // 1. Gradient correctness.
  {
    const double worst = gradient_check();
    record(1, "gradient correctness", worst < kGradientTolerance,
           fmt::format("max relative error {:.2e} < {:.0e}", worst, kGradientTolerance), since(t0));
  }

  t0 = std::chrono::steady_clock::now();
  const RunConfig config = fixture_config();
  Workbench bench = build_workbench(config);
  const std::uint64_t checksum = bench.gfm->current_checksum();
  const double setup_seconds = since(t0);
  std::printf("fixture: %zu nodes, %d classes, pool %zu, setup %.1fs\n", bench.graph.num_nodes(),
              bench.graph.num_classes(), bench.pool.size(), setup_seconds);
  Ledger ledger;

  // 3 and 7 share the full attack, evaluated with and without pruning.
  t0 = std::chrono::steady_clock::now();
  ProtocolConfig full = config.protocol;
  full.defense = DefenseKind::Prune;
  const AttackReport dtgba = protocol(bench, full, ledger);
  record(3, "attack effectiveness (k=3)",
         dtgba.ok() && dtgba.asr >= kMinAsrK3 && dtgba.clean_ca - dtgba.ca <= kMaxCaDrop,
         fmt::format("ASR {:.3f} >= {:.2f}, CA {:.3f} vs clean {:.3f} (drop {:.1f} <= {:.0f} pts)", dtgba.asr,
                     kMinAsrK3, dtgba.ca, dtgba.clean_ca, 100 * (dtgba.clean_ca - dtgba.ca), 100 * kMaxCaDrop),
         since(t0));

  // 4. Single-node trigger.
  t0 = std::chrono::steady_clock::now();
  {
    ProtocolConfig pc = config.protocol;
    pc.attack.trigger_size = 1;
    pc.attack.lambda = 0.1;
    const AttackReport r = protocol(bench, pc, ledger);
    record(4, "single-node stealth (k=1, l=0.1)",
           r.ok() && r.asr >= kMinAsrK1 && r.clean_ca - r.ca <= kMaxCaDrop,
           fmt::format("ASR {:.3f} >= {:.2f}, CA {:.3f} vs clean {:.3f} (drop {:.1f} <= {:.0f} pts)", r.asr, kMinAsrK1,
                       r.ca, r.clean_ca, 100 * (r.clean_ca - r.ca), 100 * kMaxCaDrop),
           since(t0));
  }

  // 5. Structure-only baseline.
  t0 = std::chrono::steady_clock::now();
  {
    ProtocolConfig pc = config.protocol;
    pc.variant = Variant::StructOnlyAdaptive;
    const AttackReport r = protocol(bench, pc, ledger);
    const double gap = (dtgba.ca + dtgba.asr) - (r.ca + r.asr);
    record(5, "structure-only degradation", r.ok() && gap >= kStructOnlyMargin,
           fmt::format("DTGBA CA+ASR {:.3f} vs struct-only {:.3f} ({}), margin {:.1f} >= {:.0f} pts",
                       dtgba.ca + dtgba.asr, r.ca + r.asr, ca_asr(r), 100 * gap, 100 * kStructOnlyMargin),
           since(t0));
  }

  // 6. Ablations.
  t0 = std::chrono::steady_clock::now();
  {
    const double full_sum = dtgba.ca + dtgba.asr;
    bool ok = dtgba.ok();
    std::string detail = fmt::format("full {:.3f}", full_sum);
    double worst_sum = 2.0;
    Variant worst = Variant::Dtgba;
    for (Variant v : {Variant::WithoutTlg, Variant::WithoutSlg, Variant::WithoutTp}) {
      ProtocolConfig pc = config.protocol;
      pc.variant = v;
      const AttackReport r = protocol(bench, pc, ledger);
      const double sum = r.ca + r.asr;
      ok = ok && r.ok() && full_sum >= sum;
      detail += fmt::format(", {} {:.3f}", to_string(v), sum);
      if (sum < worst_sum) {
        worst_sum = sum;
        worst = v;
      }
    }
    ok = ok && worst == Variant::WithoutSlg;
    record(6, "ablation ordering", ok, detail + fmt::format("; largest drop: {}", to_string(worst)), since(t0));
  }

  // 7. Pruning with and without the homophily loss.
  t0 = std::chrono::steady_clock::now();
  {
    ProtocolConfig pc = full;
    pc.attack.homophily_weight = 0.0;
    const AttackReport r = protocol(bench, pc, ledger);
    const double with = dtgba.defended_asr.value_or(0.0);
    const double without = r.defended_asr.value_or(0.0);
    record(7, "homophily vs prune (t=0.2)", r.ok() && with >= without + kPruneMargin,
           fmt::format("pruned ASR {:.3f} with L_homo vs {:.3f} without (margin {:.1f} >= {:.0f} pts)", with, without,
                       100 * (with - without), 100 * kPruneMargin),
           since(t0));
  }

  // 8. Fine-tune persistence of the hardened variant.
  t0 = std::chrono::steady_clock::now();
  {
    ProtocolConfig pc = config.protocol;
    pc.defense = DefenseKind::FineTune;
    pc.defense_config.finetune_shots = 10;
    const AttackReport plain = protocol(bench, pc, ledger);
    pc.variant = Variant::DtgbaPlus;
    pc.attack.epsilon = kFixtureEpsilon;
    pc.attack.augment = true;
    const AttackReport plus = protocol(bench, pc, ledger);
    const double a = plus.defended_asr.value_or(0.0);
    const double b = plain.defended_asr.value_or(0.0);
    record(8, "DTGBA++ fine-tune persistence", plain.ok() && plus.ok() && a >= b + kFineTuneMargin,
           fmt::format("fine-tuned ASR {:.3f} (eps {:.3f}) vs {:.3f} (margin {:.1f} >= {:.0f} pts)", a,
                       kFixtureEpsilon, b, 100 * (a - b), 100 * kFineTuneMargin),
           since(t0));
  }

  // 10. LM ASR against ASR across stub aggressiveness levels.
  t0 = std::chrono::steady_clock::now();
  {
    std::vector<double> lm, asr;
    std::string detail;
    const TextTriggerMap saved = bench.triggers;
    for (int budget : {1, 3, 6, 12}) {
      LlmSettings s = config.llm;
      s.stub_options.keyword_budget = budget;
      auto client = make_llm_client(s, bench.labels, bench.encoder);
      bench.triggers = generate_text_triggers(*client, bench.graph, bench.labels, config.protocol.attack.strategy,
                                              config.protocol.attack.target, s);
      const AttackReport r = protocol(bench, config.protocol, ledger);
      lm.push_back(r.lm_asr);
      asr.push_back(r.asr);
      detail += fmt::format("{}b{}: LM {:.2f} ASR {:.2f}", detail.empty() ? "" : ", ", budget, r.lm_asr, r.asr);
    }
    bench.triggers = saved;
    const double rho = spearman(lm, asr);
    record(10, "LM-ASR monotonicity", rho >= kMinSpearman,
           fmt::format("spearman {:.2f} >= {:.1f} ({})", rho, kMinSpearman, detail), since(t0));
  }

  // 11. Semantic stealth over the tune sets.
  t0 = std::chrono::steady_clock::now();
  {
    double total = 0.0;
    int count = 0;
    std::set<NodeIndex> seen;
    for (const ProtocolRun& run : ledger.runs) {
      for (NodeIndex v : run.split.tune_nodes()) {
        if (!seen.insert(v).second) continue;
        const TriggeredText& t = bench.triggers.at(v);
        total += semantic_similarity(*bench.encoder, t.original, t.triggered);
        ++count;
      }
    }
    const double mean = count ? total / count : 0.0;
    record(11, "semantic stealth", count > 0 && mean >= kMinSemantic,
           fmt::format("mean similarity {:.3f} >= {:.2f} over {} tune nodes (keyword budget {})", mean, kMinSemantic,
                       count, kFixtureKeywordBudget),
           since(t0));
  }

  // 12. Oracle equivalence.
  t0 = std::chrono::steady_clock::now();
  {
    OracleCounts oc;
    oracle_predict_topk_prune(oc);
    for (std::size_t i = 0; i < 3 && i < ledger.runs.size(); ++i) {
      const ProtocolRun& run = ledger.runs[i];
      oracle_asr(bench, run.result, run.config, run.split.test_set, oc);
    }
    const bool ok = oc.predict == oc.predict_cases && oc.topk == oc.topk_cases && oc.prune == oc.prune_cases &&
                    oc.asr == oc.asr_cases && oc.asr_cases > 0;
    record(12, "oracle equivalence", ok,
           fmt::format("predict {}/{}, top-k {}/{}, prune {}/{}, ASR {}/{}", oc.predict, oc.predict_cases, oc.topk,
                       oc.topk_cases, oc.prune, oc.prune_cases, oc.asr, oc.asr_cases),
           since(t0));
  }

  // 13. Determinism of the full pipeline.
  t0 = std::chrono::steady_clock::now();
  {
    RunConfig c = config;
    c.protocol.seeds = {1};
    c.protocol.attack.epochs = 10;
    const auto root = scratch_dir("acceptance_determinism");
    const auto a = run_experiment(c, root / "a");
    const auto b = run_experiment(c, root / "b");
    bool same = a.failed_stage.empty() && b.failed_stage.empty();
    std::string diff;
    for (const char* f : {"report.json", "metrics.csv", "resolved_config.json", "attack/losses.csv",
                          "attack/prompt.bin", "attack/generator.bin"}) {
      if (slurp(root / "a" / f) != slurp(root / "b" / f) || slurp(root / "a" / f).empty()) {
        same = false;
        diff += std::string(" ") + f;
      }
    }
    record(13, "determinism", same, same ? "report.json, metrics.csv and artifacts byte-identical" : "differs:" + diff,
           since(t0));
  }

  // 9. In-distribution triggers over every attack run above.
  t0 = std::chrono::steady_clock::now();
  {
    std::size_t graphs = 0, bad = 0;
    for (const ProtocolRun& run : ledger.runs) {
      if (!run.config.struct_trigger) continue;
      const bool from_pool = run.config.selection == TriggerSelection::Pool;
      auto check = [&](const PoisonedEgoGraph& g) {
        ++graphs;
        try {
          if (from_pool) check_poisoned(g, bench.pool, run.config.trigger_size);
          check_poisoned(g, bench.graph, run.config.trigger_size);
        } catch (const ValidationError&) {
          ++bad;
        }
      };
      for (const auto& g : run.result.poison.poisoned) check(g);
      for (const auto& g : run.outcome.poisoned) check(g);
    }
    record(9, "in-distribution triggers", graphs > 0 && bad == 0,
           fmt::format("{} poisoned graphs from {} attack runs, {} violations", graphs, ledger.runs.size(), bad),
           since(t0));
  }

  // 2. Frozen victim.
  {
    bool ok = bench.gfm->current_checksum() == checksum && bench.gfm->recorded_checksum() == checksum;
    for (const ProtocolRun& run : ledger.runs) ok = ok && run.result.gfm_checksum == checksum;
    ok = ok && ledger.failures.empty();
    std::string detail = fmt::format("checksum {} unchanged over {} attack/tuning/defense runs", hex64(checksum),
                                     ledger.tuning_runs);
    for (const auto& f : ledger.failures) detail += "; failed run " + f;
    record(2, "frozen victim", ok, detail, 0.0);
  }

  std::sort(lines.begin(), lines.end(), [](const Line& a, const Line& b) { return a.id < b.id; });
  int failed = 0;
  std::printf("\nsummary (total %.1fs):\n", since(start));
  for (const Line& l : lines) {
    std::printf("%s  %2d  %s\n", l.pass ? "PASS" : "FAIL", l.id, l.name.c_str());
    failed += !l.pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(lines.size()) - failed, lines.size());
  return failed == 0 ? 0 : 1;
}
