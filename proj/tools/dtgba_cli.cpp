// Command-line entry point: one subcommand per pipeline stage, each writing
// into a fresh timestamped run directory.

#include "dtgba/errors.hpp"
#include "dtgba/eval_harness.hpp"
#include "dtgba/experiment.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>

using namespace dtgba;
namespace fs = std::filesystem;

namespace {

constexpr int kExitStageFailure = 1;
constexpr int kExitInvalid = 2;

// Flag values; unset flags leave the config file value alone.
struct Overrides {
  std::string config_path;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> repeats;
  std::optional<int> shots;
  std::optional<int> target;
  std::optional<int> k;
  std::optional<double> lambda;
  std::optional<int> epochs;
  std::optional<int> keyword_budget;
  std::optional<double> epsilon;
  std::optional<std::string> gfm;
  bool live = false;
  bool verbose = false;
};

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("-c,--config", o.config_path, "JSON run config (defaults apply when omitted)")
      ->check(CLI::ExistingFile);
  app->add_option("-o,--out", o.out, "Parent directory for run directories");
  app->add_option("--seed", o.seed, "Run a single master seed");
  app->add_option("--repeats", o.repeats, "Repeats per seed");
  app->add_option("--shots", o.shots, "Shots per class");
  app->add_option("--target", o.target, "Target class");
  app->add_option("-k,--trigger-size", o.k, "Trigger nodes per victim");
  app->add_option("--lambda", o.lambda, "Backdoor loss weight");
  app->add_option("--epochs", o.epochs, "Attack epochs");
  app->add_option("--keyword-budget", o.keyword_budget, "Stub rewrite aggressiveness");
  app->add_option("--epsilon", o.epsilon, "Prompt perturbation bound for the hardened variant");
  app->add_option("--gfm", o.gfm, "Pretrained GFM checkpoint to load instead of pretraining")->check(CLI::ExistingFile);
  app->add_flag("--stub", "Use the deterministic offline generator (default)");
  app->add_flag("--live", o.live, "Use the HTTP language model; needs the API key environment variable");
  app->add_flag("-v,--verbose", o.verbose, "Debug logging");
}

RunConfig resolve(const Overrides& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
  if (o.out) c.output_dir = *o.out;
  if (o.seed) c.protocol.seeds = {*o.seed};
  if (o.repeats) c.protocol.repeats = *o.repeats;
  if (o.shots) c.protocol.shots = *o.shots;
  if (o.target) c.protocol.attack.target = *o.target;
  if (o.k) c.protocol.attack.trigger_size = *o.k;
  if (o.lambda) c.protocol.attack.lambda = *o.lambda;
  if (o.epochs) c.protocol.attack.epochs = *o.epochs;
  if (o.keyword_budget) c.llm.stub_options.keyword_budget = *o.keyword_budget;
  if (o.epsilon) c.protocol.attack.epsilon = *o.epsilon;
  if (o.gfm) c.gfm_path = *o.gfm;
  c.llm.stub = !o.live;
  c.validate();
  return c;
}

void write_json(const fs::path& path, const nlohmann::json& j) { std::ofstream(path) << j.dump(2) << '\n'; }

void write_losses(const fs::path& path, const std::vector<double>& losses) {
  std::ofstream out(path);
  out << "epoch,loss\n";
  for (std::size_t e = 0; e < losses.size(); ++e) out << e << ',' << fmt::format("{:.17g}", losses[e]) << '\n';
}

fs::path start_run(const RunConfig& c, const std::string& stage) {
  const fs::path dir = make_run_directory(c.output_dir, stage);
  write_json(dir / "resolved_config.json", c.to_json());
  return dir;
}

int cmd_ingest(const RunConfig& c) {
  const fs::path dir = start_run(c, "ingest");
  const auto encoder = make_text_encoder(c.encoder);
  const LoadedDataset data = load_dataset(c.dataset, *encoder);
  fs::create_directories(dir / "dataset");
  save_tag_dataset(data.graph, dir / "dataset" / "nodes.jsonl", dir / "dataset" / "edges.csv");
  save_label_records(data.labels, dir / "dataset" / "labels.jsonl");
  std::vector<std::size_t> per_class;
  for (int k = 0; k < data.graph.num_classes(); ++k) per_class.push_back(data.graph.nodes_of_class(k).size());
  write_json(dir / "summary.json", {{"nodes", data.graph.num_nodes()},
                                    {"edges", data.graph.num_edges()},
                                    {"classes", data.graph.num_classes()},
                                    {"per_class", per_class}});
  std::cout << dir.string() << '\n';
  return 0;
}

int cmd_pretrain(const RunConfig& c) {
  const fs::path dir = start_run(c, "pretrain");
  const auto encoder = make_text_encoder(c.encoder);
  LoadedDataset data = load_dataset(c.dataset, *encoder);
  PretrainConfig pc = c.pretrain;
  pc.dims.text_dim = encoder->dim();
  std::vector<double> losses;
  const FrozenGfm gfm = pretrain_gfm(data.graph, encoder, pc, c.pretrain_seed, &losses);
  save_gfm(gfm, dir / "gfm.bin");
  write_losses(dir / "pretrain_losses.csv", losses);
  std::vector<NodeIndex> nodes(data.graph.num_nodes());
  std::iota(nodes.begin(), nodes.end(), 0);
  nlohmann::json summary = gfm.describe();
  summary["retrieval_accuracy"] = retrieval_accuracy(gfm, data.graph, nodes, pc.hops, pc.batch_size);
  write_json(dir / "summary.json", summary);
  std::cout << dir.string() << '\n';
  return 0;
}

int cmd_tune(const RunConfig& c) {
  const fs::path dir = start_run(c, "tune");
  const Workbench bench = build_workbench(c);
  const std::uint64_t seed = c.protocol.seeds.front();
  const FewShotSplit split = few_shot_split(bench.graph, c.protocol.shots, seed);
  TuningConfig tc = c.protocol.tuning;
  tc.hops = c.protocol.attack.hops;
  std::vector<double> losses;
  const Prompt prompt = tune_clean_prompt(*bench.gfm, bench.graph, split, bench.labels, tc, &losses);
  save_prompt(prompt, dir / "prompt.bin");
  save_gfm(*bench.gfm, dir / "gfm.bin");
  write_losses(dir / "tune_losses.csv", losses);
  const double ca = clean_accuracy(*bench.gfm, bench.graph, prompt, split.test_set, bench.labels, tc.hops);
  write_json(dir / "summary.json", {{"seed", seed}, {"shots", c.protocol.shots}, {"epochs", prompt.epochs},
                                    {"final_loss", prompt.final_loss}, {"clean_accuracy", ca}});
  std::cout << dir.string() << '\n' << fmt::format("clean accuracy {:.4f}\n", ca);
  return 0;
}

void print_reports(const std::vector<AttackReport>& reports) {
  for (const AttackReport& r : reports) {
    std::cout << fmt::format("{:<22} {:<8} CA {:.4f} ASR {:.4f} clean CA {:.4f} LM ASR {:.4f} semantic {:.4f}",
                             r.variant, r.defense, r.ca, r.asr, r.clean_ca, r.lm_asr, r.semantic);
    if (r.defended_ca) std::cout << fmt::format(" | defended CA {:.4f} ASR {:.4f}", *r.defended_ca, *r.defended_asr);
    if (r.imp) std::cout << fmt::format(" | IMP CA {:+.4f} ASR {:+.4f}", r.imp->delta_ca, r.imp->delta_asr);
    if (!r.ok()) std::cout << " | FAILED at " << r.failed_stage << ": " << r.error;
    std::cout << '\n';
  }
}

int experiment(const RunConfig& c, const std::string& stage) {
  const fs::path dir = make_run_directory(c.output_dir, stage);
  const ExperimentResult result = run_experiment(c, dir);
  std::cout << dir.string() << '\n';
  print_reports(result.reports);
  if (!result.failed_stage.empty()) {
    std::cerr << "error: stage " << result.failed_stage << " failed\n";
    return kExitStageFailure;
  }
  return 0;
}

int cmd_report(const std::vector<std::string>& runs, const std::string& out) {
  std::vector<std::pair<std::string, AttackReport>> loaded;
  for (const std::string& r : runs) {
    const std::vector<AttackReport> reports = read_report(fs::path(r) / "report.json");
    if (reports.empty()) throw ValidationError("report: " + r + " has no reports");
    loaded.emplace_back(fs::path(r).filename().string(), reports.front());
  }
  const std::string table = imp_table(loaded);
  const fs::path dir = make_run_directory(out, "report");
  std::ofstream(dir / "imp.csv") << table;
  std::vector<AttackReport> all;
  for (const auto& [name, report] : loaded) {
    AttackReport r = report;
    r.variant = name;
    all.push_back(r);
  }
  std::ofstream(dir / "ca_asr.svg") << render_bar_chart(all);
  std::ofstream(dir / "lm_asr_scatter.svg") << render_scatter(all);
  std::cout << dir.string() << '\n' << table;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-trigger backdoor attacks on prompted graph foundation models"};
  app.require_subcommand(1);
  Overrides o;
  std::string defense_kind;
  std::optional<double> threshold;
  std::optional<int> defense_shots;
  std::vector<std::string> runs;
  std::string report_out = "runs";

  CLI::App* ingest = app.add_subcommand("ingest", "Load or generate the dataset and cache attributes");
  CLI::App* pretrain = app.add_subcommand("pretrain", "Contrastively pretrain and freeze the GFM");
  CLI::App* tune = app.add_subcommand("tune", "Clean prompt tuning on the first seed's split");
  CLI::App* attack = app.add_subcommand("attack", "Full DTGBA run");
  CLI::App* attack_plus = app.add_subcommand("attack-plus", "Hardened DTGBA++ run");
  CLI::App* defend = app.add_subcommand("defend", "Attack, then evaluate under a defense");
  CLI::App* evaluate = app.add_subcommand("evaluate", "DTGBA with baselines, ablations and IMP");
  CLI::App* report = app.add_subcommand("report", "IMP comparison between finished runs");
  for (CLI::App* sub : {ingest, pretrain, tune, attack, attack_plus, defend, evaluate}) add_common(sub, o);
  defend->add_option("kind", defense_kind, "prune or finetune")->required()->check(CLI::IsMember({"prune", "finetune"}));
  defend->add_option("--threshold", threshold, "Prune similarity threshold");
  defend->add_option("--finetune-shots,--defense-shots", defense_shots, "Clean shots per class for fine-tuning");
  report->add_option("--runs", runs, "Run directories; the first is the base")->required()->expected(2, -1);
  report->add_option("-o,--out", report_out, "Parent directory for the report run");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInvalid;
  }
  spdlog::set_level(o.verbose ? spdlog::level::debug : spdlog::level::warn);

  std::string stage = app.get_subcommands().front()->get_name();
  try {
    if (report->parsed()) return cmd_report(runs, report_out);
    RunConfig c = resolve(o);
    if (ingest->parsed()) return cmd_ingest(c);
    if (pretrain->parsed()) return cmd_pretrain(c);
    if (tune->parsed()) return cmd_tune(c);
    c.variants.clear();
    if (attack->parsed()) {
      c.protocol.variant = Variant::Dtgba;
    } else if (attack_plus->parsed()) {
      c.protocol.variant = Variant::DtgbaPlus;
    } else if (defend->parsed()) {
      c.protocol.defense = parse_defense(defense_kind);
      if (threshold) c.protocol.defense_config.prune_threshold = *threshold;
      if (defense_shots) c.protocol.defense_config.finetune_shots = *defense_shots;
    } else if (evaluate->parsed()) {
      const RunConfig file = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
      c.variants = file.variants;
      if (c.variants.empty()) {
        c.variants = {Variant::StructOnlyAdaptive, Variant::StructOnlySampled, Variant::WithoutTlg,
                      Variant::WithoutSlg, Variant::WithoutTp};
      }
      c.compute_imp = true;
    }
    c.validate();
    return experiment(c, stage);
  } catch (const ValidationError& e) {
    std::cerr << "error: invalid configuration: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const Error& e) {
    std::cerr << "error: stage " << stage << " failed: " << e.what() << '\n';
    return kExitStageFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: stage " << stage << " failed: " << e.what() << '\n';
    return kExitStageFailure;
  }
}
