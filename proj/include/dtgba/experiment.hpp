#pragma once

// Run configuration and end-to-end orchestration: ingest, pretrain, text
// triggers, the evaluation protocol and the run directory.

#include "dtgba/eval_harness.hpp"
#include "dtgba/gfm.hpp"
#include "dtgba/synthetic.hpp"
#include "dtgba/text_trigger.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace dtgba {

/// Either files in the native format or the built-in synthetic generator.
struct DatasetConfig {
  bool synthetic = true;
  SyntheticTagConfig synthetic_config;
  std::string nodes;   // JSON lines {"id", "text", "label"}
  std::string edges;   // "src,dst" lines
  std::string labels;  // JSON lines {"class", "name", "explanation"}

  nlohmann::json to_json() const;
  static DatasetConfig from_json(const nlohmann::json& j);
};

struct LlmSettings {
  /// Deterministic offline generator; no network access happens when true.
  bool stub = true;
  StubOptions stub_options;
  HttpClientConfig http;
  int max_retries = 2;
  int concurrency = 4;
  /// Triggered-text cache directory (empty disables caching).
  std::string cache_dir;
};

struct RunConfig {
  DatasetConfig dataset;
  /// Cross-dataset runs: tune on `dataset`, test on this one.
  std::optional<DatasetConfig> test_dataset;
  nlohmann::json encoder{{"kind", "hashing"}, {"dim", 384}};
  PretrainConfig pretrain;
  std::uint64_t pretrain_seed = 1;
  /// Load this checkpoint instead of pretraining.
  std::string gfm_path;
  /// 0 selects default_pool_size.
  std::size_t pool_size = 0;
  std::uint64_t pool_seed = 11;
  int probe_shots = 10;
  LlmSettings llm;
  ProtocolConfig protocol;
  /// Further variants run by `evaluate`, each with the same protocol.
  std::vector<Variant> variants;
  /// Also run the no-text-trigger ablation to fill the IMP field.
  bool compute_imp = false;
  std::string output_dir = "runs";

  /// Throws ValidationError naming the offending field path.
  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

RunConfig load_run_config(const std::filesystem::path& path);

/// Loads or generates the dataset with cached attributes.
struct LoadedDataset {
  TextAttributedGraph graph;
  std::vector<LabelRecord> labels;
};
LoadedDataset load_dataset(const DatasetConfig& config, const TextEncoder& encoder);

/// Stub unless settings.stub is false; the live client needs the API key in
/// the configured environment variable.
std::unique_ptr<LlmClient> make_llm_client(const LlmSettings& settings, std::span<const LabelDescription> labels,
                                           std::shared_ptr<const TextEncoder> encoder);

/// Text triggers toward `target` for every node of `graph`.
TextTriggerMap generate_text_triggers(LlmClient& client, const TextAttributedGraph& graph,
                                      std::span<const LabelDescription> labels, StrategyId strategy, int target,
                                      const LlmSettings& settings);

/// Builds everything a protocol run reads. `client` overrides the configured
/// language model.
Workbench build_workbench(const RunConfig& config, LlmClient* client = nullptr);

/// `<output_dir>/<prefix>-<UTC timestamp>`, suffixed when it already exists.
std::filesystem::path make_run_directory(const std::string& output_dir, const std::string& prefix);

struct ExperimentResult {
  std::vector<AttackReport> reports;
  /// Stage of the first failure, empty when every report succeeded.
  std::string failed_stage;
};

/// Runs the configured variant (and `variants`, and the IMP ablation when
/// enabled) and writes resolved_config.json, the report files and the
/// artifacts of the first attack into `run_dir`.
ExperimentResult run_experiment(const RunConfig& config, const std::filesystem::path& run_dir,
                                LlmClient* client = nullptr);

}  // namespace dtgba
