#pragma once

// Metrics (CA, ASR, LM ASR, semantic score, IMP), structure-only baselines,
// ablations, the seeded evaluation protocol and report emission.

#include "dtgba/attack_engine.hpp"
#include "dtgba/defense.hpp"
#include "dtgba/gfm.hpp"
#include "dtgba/prompt_tuning.hpp"
#include "dtgba/tag.hpp"
#include "dtgba/text_trigger.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dtgba {

// ---- metrics ------------------------------------------------------------------------

/// Fraction of `test` nodes whose untriggered ego graph (pruned first when
/// `prune_threshold` is set) is predicted as its true label.
double clean_accuracy(const FrozenGfm& gfm, const TextAttributedGraph& graph, const Prompt& prompt,
                      std::span<const NodeIndex> test, std::span<const LabelDescription> labels, int hops,
                      std::optional<double> prune_threshold = std::nullopt);

struct AsrOutcome {
  double asr = 0.0;
  int hits = 0;
  /// Test nodes whose true label is not the target, in test order.
  std::vector<NodeIndex> victims;
  std::vector<PoisonedEgoGraph> poisoned;
  std::vector<int> predictions;
};

/// Injects the dual trigger into every eligible test victim and counts target
/// predictions. Throws ValidationError when no test node is eligible.
AsrOutcome evaluate_asr(const AttackContext& ctx, const AttackConfig& config, const TriggerGeneratorParams& generator,
                        const Prompt& prompt, std::span<const NodeIndex> test,
                        std::optional<double> prune_threshold = std::nullopt, std::uint64_t seed = 0);

inline double attack_success_rate(const AttackContext& ctx, const AttackConfig& config,
                                  const TriggerGeneratorParams& generator, const Prompt& prompt,
                                  std::span<const NodeIndex> test) {
  return evaluate_asr(ctx, config, generator, prompt, test).asr;
}

/// (CA, ASR) difference a - b; antisymmetric by construction.
struct Imp {
  double delta_ca = 0.0;
  double delta_asr = 0.0;
};

/// Spearman rank correlation with average ranks for ties (0 when either
/// side is constant).
double spearman(std::span<const double> x, std::span<const double> y);

// ---- variants -----------------------------------------------------------------------

enum class Variant {
  Dtgba,
  DtgbaPlus,
  StructOnlyAdaptive,  // unmodified trigger-node attributes, no text trigger
  StructOnlySampled,   // trigger nodes sampled from the ego network, no text trigger
  WithoutTlg,
  WithoutSlg,
  WithoutTp,
};

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);
bool is_baseline(Variant v);
bool is_ablation(Variant v);

/// The attack configuration a variant runs with. DtgbaPlus keeps the given
/// epsilon and augmentation and enables augmentation when neither is set.
AttackConfig apply_variant(AttackConfig config, Variant v);

enum class DefenseKind { None, Prune, FineTune };

std::string to_string(DefenseKind d);
DefenseKind parse_defense(const std::string& s);

// ---- protocol -----------------------------------------------------------------------

/// Everything a protocol run reads. The test graph differs from the tuning
/// graph only in cross-dataset runs.
struct Workbench {
  TextAttributedGraph graph;
  std::vector<LabelDescription> labels;
  std::shared_ptr<const TextEncoder> encoder;
  std::unique_ptr<FrozenGfm> gfm;
  TextPool pool;
  TextTriggerMap triggers;
  std::unique_ptr<TextProbe> probe;
  std::optional<TextAttributedGraph> test_graph;
  TextTriggerMap test_triggers;

  AttackContext context() const { return AttackContext{&graph, gfm.get(), labels, &pool, &triggers}; }
  AttackContext test_context() const;
};

struct ProtocolConfig {
  int shots = 5;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int repeats = 5;
  TuningConfig tuning;
  AttackConfig attack;
  Variant variant = Variant::Dtgba;
  DefenseKind defense = DefenseKind::None;
  DefenseConfig defense_config;

  void validate() const;
  nlohmann::json to_json() const;
  static ProtocolConfig from_json(const nlohmann::json& j);
};

struct RunMetrics {
  std::uint64_t seed = 0;
  int repeat = 0;
  double clean_ca = 0.0;  // clean prompt, no attack
  double ca = 0.0;
  double asr = 0.0;
  double lm_asr = 0.0;
  double semantic = 0.0;
  int epochs = 0;
  std::optional<double> defended_ca;
  std::optional<double> defended_asr;

  nlohmann::json to_json() const;
  static RunMetrics from_json(const nlohmann::json& j);
};

inline constexpr int kReportSchemaVersion = 1;

struct AttackReport {
  std::string variant;
  std::string defense = "none";
  std::string status = "ok";
  std::string failed_stage;
  std::string error;
  std::vector<RunMetrics> runs;
  double clean_ca = 0.0, ca = 0.0, asr = 0.0, lm_asr = 0.0, semantic = 0.0;
  std::optional<double> defended_ca, defended_asr;
  /// Against the no-text-trigger ablation, when it was run.
  std::optional<Imp> imp;
  nlohmann::json config;

  bool ok() const noexcept { return status == "ok"; }
  /// Recomputes the means from `runs`.
  void aggregate();
  nlohmann::json to_json() const;
  static AttackReport from_json(const nlohmann::json& j);
};

Imp compute_imp(const AttackReport& a, const AttackReport& b);

/// Per-run artifacts kept for plots and invariant checks.
struct ProtocolRun {
  FewShotSplit split;
  AttackConfig config;
  AttackResult result;
  AsrOutcome outcome;
};

/// Runs the variant once per (seed, repeat): split, clean tuning, attack,
/// evaluation and the optional defense. The GFM checksum is verified after
/// every run.
AttackReport run_protocol(const Workbench& bench, const ProtocolConfig& config,
                          std::vector<ProtocolRun>* runs = nullptr);

/// Same as run_protocol with a baseline variant; throws ValidationError for
/// any other variant.
AttackReport run_baseline(Variant variant, const Workbench& bench, ProtocolConfig config,
                          std::vector<ProtocolRun>* runs = nullptr);
AttackReport run_ablation(Variant variant, const Workbench& bench, ProtocolConfig config,
                          std::vector<ProtocolRun>* runs = nullptr);

/// Throws ValidationError when a test-graph text also appears among the
/// tuning nodes or the text pool.
void check_cross_dataset_disjoint(const TextAttributedGraph& tune_graph, std::span<const NodeIndex> tune_nodes,
                                  const TextPool& pool, const TextAttributedGraph& test_graph);

// ---- report files ------------------------------------------------------------------

/// report.json, metrics.csv and the plots ca_asr.svg and lm_asr_scatter.svg;
/// losses.svg when `trace` is given.
void write_report(const std::vector<AttackReport>& reports, const std::filesystem::path& dir,
                  const AttackTrace* trace = nullptr);
std::vector<AttackReport> read_report(const std::filesystem::path& path);

std::string render_bar_chart(const std::vector<AttackReport>& reports);
std::string render_scatter(const std::vector<AttackReport>& reports);
std::string render_loss_curves(const AttackTrace& trace);

/// IMP table between the first report of each run directory, one row per
/// ordered pair (later run minus first run), CSV.
std::string imp_table(const std::vector<std::pair<std::string, AttackReport>>& runs);

}  // namespace dtgba
