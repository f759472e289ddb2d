#include "dtgba/experiment.hpp"

#include "dtgba/errors.hpp"
#include "dtgba/rng.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <ctime>
#include <fstream>

namespace dtgba {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void fail(const std::string& field, const std::string& why) {
  throw ValidationError(field + ": " + why);
}

nlohmann::json synthetic_to_json(const SyntheticTagConfig& c) {
  return {{"num_nodes", c.num_nodes},
          {"num_classes", c.num_classes},
          {"average_degree", c.average_degree},
          {"edge_homophily", c.edge_homophily},
          {"sentences_per_text", c.sentences_per_text},
          {"words_per_sentence", c.words_per_sentence},
          {"topic_word_rate", c.topic_word_rate},
          {"mixed_node_rate", c.mixed_node_rate},
          {"mixed_share", c.mixed_share},
          {"seed", c.seed}};
}

SyntheticTagConfig synthetic_from_json(const nlohmann::json& j) {
  SyntheticTagConfig c;
  c.num_nodes = j.value("num_nodes", c.num_nodes);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.average_degree = j.value("average_degree", c.average_degree);
  c.edge_homophily = j.value("edge_homophily", c.edge_homophily);
  c.sentences_per_text = j.value("sentences_per_text", c.sentences_per_text);
  c.words_per_sentence = j.value("words_per_sentence", c.words_per_sentence);
  c.topic_word_rate = j.value("topic_word_rate", c.topic_word_rate);
  c.mixed_node_rate = j.value("mixed_node_rate", c.mixed_node_rate);
  c.mixed_share = j.value("mixed_share", c.mixed_share);
  c.seed = j.value("seed", c.seed);
  return c;
}

void check_dataset(const DatasetConfig& d, const std::string& field) {
  if (d.synthetic) return;
  for (const auto& [name, path] : {std::pair{"nodes", d.nodes}, {"edges", d.edges}, {"labels", d.labels}}) {
    if (path.empty()) fail(field + "." + name, "required for a file dataset");
    if (!fs::exists(path)) fail(field + "." + name, "no such file '" + path + "'");
  }
}

}  // namespace

nlohmann::json DatasetConfig::to_json() const {
  if (synthetic) return {{"synthetic", true}, {"synthetic_config", synthetic_to_json(synthetic_config)}};
  return {{"synthetic", false}, {"nodes", nodes}, {"edges", edges}, {"labels", labels}};
}

DatasetConfig DatasetConfig::from_json(const nlohmann::json& j) {
  DatasetConfig d;
  d.synthetic = j.value("synthetic", !j.contains("nodes"));
  if (j.contains("synthetic_config")) d.synthetic_config = synthetic_from_json(j.at("synthetic_config"));
  d.nodes = j.value("nodes", std::string{});
  d.edges = j.value("edges", std::string{});
  d.labels = j.value("labels", std::string{});
  return d;
}

void RunConfig::validate() const {
  check_dataset(dataset, "dataset");
  if (test_dataset) check_dataset(*test_dataset, "test_dataset");
  if (!encoder.is_object()) fail("encoder", "must be an object");
  if (pretrain.epochs < 0) fail("pretrain.epochs", "must be >= 0");
  if (pretrain.batch_size < 2) fail("pretrain.batch_size", "must be >= 2");
  if (!(pretrain.similarity_temperature > 0.0)) fail("pretrain.similarity_temperature", "must be > 0");
  if (!gfm_path.empty() && !fs::exists(gfm_path)) fail("gfm_path", "no such file '" + gfm_path + "'");
  if (probe_shots < 1) fail("probe_shots", "must be >= 1");
  if (llm.max_retries < 0) fail("llm.max_retries", "must be >= 0");
  if (llm.concurrency < 1) fail("llm.concurrency", "must be >= 1");
  if (llm.stub_options.keyword_budget < 0) fail("llm.keyword_budget", "must be >= 0");
  if (output_dir.empty()) fail("output_dir", "must not be empty");
  try {
    protocol.validate();
  } catch (const ValidationError& e) {
    fail("protocol", e.what());
  }
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json variants_json = nlohmann::json::array();
  for (Variant v : variants) variants_json.push_back(to_string(v));
  nlohmann::json j{{"dataset", dataset.to_json()},
                   {"encoder", encoder},
                   {"pretrain",
                    {{"text_dim", pretrain.dims.text_dim},
                     {"hidden_dim", pretrain.dims.hidden_dim},
                     {"shared_dim", pretrain.dims.shared_dim},
                     {"epochs", pretrain.epochs},
                     {"batch_size", pretrain.batch_size},
                     {"learning_rate", pretrain.learning_rate},
                     {"temperature", pretrain.temperature},
                     {"hops", pretrain.hops},
                     {"similarity_temperature", pretrain.similarity_temperature},
                     {"seed", pretrain_seed}}},
                   {"gfm_path", gfm_path},
                   {"pool_size", pool_size},
                   {"pool_seed", pool_seed},
                   {"probe_shots", probe_shots},
                   {"llm",
                    {{"stub", llm.stub},
                     {"keyword_budget", llm.stub_options.keyword_budget},
                     {"base_url", llm.http.base_url},
                     {"model", llm.http.model},
                     {"api_key_env", llm.http.api_key_env},
                     {"timeout_seconds", llm.http.timeout_seconds},
                     {"temperature", llm.http.temperature},
                     {"min_request_interval_seconds", llm.http.min_request_interval_seconds},
                     {"max_retries", llm.max_retries},
                     {"concurrency", llm.concurrency},
                     {"cache_dir", llm.cache_dir}}},
                   {"protocol", protocol.to_json()},
                   {"variants", variants_json},
                   {"compute_imp", compute_imp},
                   {"output_dir", output_dir}};
  if (test_dataset) j["test_dataset"] = test_dataset->to_json();
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  auto section = [&](const char* name) -> const nlohmann::json& {
    static const nlohmann::json empty = nlohmann::json::object();
    return j.contains(name) ? j.at(name) : empty;
  };
  try {
    if (j.contains("dataset")) c.dataset = DatasetConfig::from_json(j.at("dataset"));
    if (j.contains("test_dataset")) c.test_dataset = DatasetConfig::from_json(j.at("test_dataset"));
    if (j.contains("encoder")) c.encoder = j.at("encoder");
    const auto& p = section("pretrain");
    c.pretrain.dims.text_dim = p.value("text_dim", c.encoder.value("dim", c.pretrain.dims.text_dim));
    c.pretrain.dims.hidden_dim = p.value("hidden_dim", c.pretrain.dims.hidden_dim);
    c.pretrain.dims.shared_dim = p.value("shared_dim", c.pretrain.dims.shared_dim);
    c.pretrain.epochs = p.value("epochs", c.pretrain.epochs);
    c.pretrain.batch_size = p.value("batch_size", c.pretrain.batch_size);
    c.pretrain.learning_rate = p.value("learning_rate", c.pretrain.learning_rate);
    c.pretrain.temperature = p.value("temperature", c.pretrain.temperature);
    c.pretrain.hops = p.value("hops", c.pretrain.hops);
    c.pretrain.similarity_temperature = p.value("similarity_temperature", c.pretrain.similarity_temperature);
    c.pretrain_seed = p.value("seed", c.pretrain_seed);
    c.gfm_path = j.value("gfm_path", c.gfm_path);
    c.pool_size = j.value("pool_size", c.pool_size);
    c.pool_seed = j.value("pool_seed", c.pool_seed);
    c.probe_shots = j.value("probe_shots", c.probe_shots);
    const auto& l = section("llm");
    c.llm.stub = l.value("stub", c.llm.stub);
    c.llm.stub_options.keyword_budget = l.value("keyword_budget", c.llm.stub_options.keyword_budget);
    c.llm.http.base_url = l.value("base_url", c.llm.http.base_url);
    c.llm.http.model = l.value("model", c.llm.http.model);
    c.llm.http.api_key_env = l.value("api_key_env", c.llm.http.api_key_env);
    c.llm.http.timeout_seconds = l.value("timeout_seconds", c.llm.http.timeout_seconds);
    c.llm.http.temperature = l.value("temperature", c.llm.http.temperature);
    c.llm.http.min_request_interval_seconds =
        l.value("min_request_interval_seconds", c.llm.http.min_request_interval_seconds);
    c.llm.max_retries = l.value("max_retries", c.llm.max_retries);
    c.llm.concurrency = l.value("concurrency", c.llm.concurrency);
    c.llm.cache_dir = l.value("cache_dir", c.llm.cache_dir);
    if (j.contains("protocol")) c.protocol = ProtocolConfig::from_json(j.at("protocol"));
    for (const auto& v : j.value("variants", nlohmann::json::array())) {
      c.variants.push_back(parse_variant(v.get<std::string>()));
    }
    c.compute_imp = j.value("compute_imp", c.compute_imp);
    c.output_dir = j.value("output_dir", c.output_dir);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("config: cannot open '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("config: " + path.string() + ": " + e.what());
  }
  return RunConfig::from_json(j);
}

LoadedDataset load_dataset(const DatasetConfig& config, const TextEncoder& encoder) {
  LoadedDataset out;
  if (config.synthetic) {
    SyntheticTag tag = make_synthetic_tag(config.synthetic_config);
    out.graph = std::move(tag.graph);
    out.labels = std::move(tag.labels);
  } else {
    out.graph = load_tag_dataset(config.nodes, config.edges);
    out.labels = load_label_records(config.labels);
  }
  if (static_cast<int>(out.labels.size()) != out.graph.num_classes()) {
    throw ValidationError("dataset: " + std::to_string(out.labels.size()) + " label records for " +
                          std::to_string(out.graph.num_classes()) + " classes");
  }
  cache_attributes(out.graph, encoder);
  return out;
}

std::unique_ptr<LlmClient> make_llm_client(const LlmSettings& settings, std::span<const LabelDescription> labels,
                                           std::shared_ptr<const TextEncoder> encoder) {
  if (settings.stub) {
    return std::make_unique<StubLlmClient>(std::vector<LabelDescription>(labels.begin(), labels.end()),
                                           std::move(encoder), settings.stub_options);
  }
  return std::make_unique<HttpLlmClient>(settings.http);
}

TextTriggerMap generate_text_triggers(LlmClient& client, const TextAttributedGraph& graph,
                                      std::span<const LabelDescription> labels, StrategyId strategy, int target,
                                      const LlmSettings& settings) {
  std::vector<TriggerRequest> requests;
  for (const std::string& text : graph.texts()) requests.push_back({text, strategy, target});
  std::unique_ptr<TriggerCache> cache;
  if (!settings.cache_dir.empty()) cache = std::make_unique<TriggerCache>(settings.cache_dir);
  GenerationPolicy policy;
  policy.max_retries = settings.max_retries;
  const std::vector<TriggeredText> out =
      generate_batch(client, requests, labels, policy, cache.get(), settings.concurrency);
  TextTriggerMap map;
  for (std::size_t v = 0; v < out.size(); ++v) map.emplace(static_cast<NodeIndex>(v), out[v]);
  return map;
}

Workbench build_workbench(const RunConfig& config, LlmClient* client) {
  config.validate();
  Workbench bench;
  bench.encoder = make_text_encoder(config.encoder);
  LoadedDataset data = load_dataset(config.dataset, *bench.encoder);
  bench.graph = std::move(data.graph);
  bench.labels = make_label_descriptions(data.labels);
  if (config.gfm_path.empty()) {
    PretrainConfig pc = config.pretrain;
    pc.dims.text_dim = bench.encoder->dim();
    bench.gfm = std::make_unique<FrozenGfm>(pretrain_gfm(bench.graph, bench.encoder, pc, config.pretrain_seed));
  } else {
    bench.gfm = std::make_unique<FrozenGfm>(load_gfm(config.gfm_path));
    if (bench.gfm->dims().text_dim != bench.encoder->dim()) {
      throw ShapeError("gfm_path: checkpoint text dimension differs from the encoder");
    }
  }
  const std::size_t pool_size = config.pool_size ? config.pool_size : default_pool_size(bench.graph);
  bench.pool = build_text_pool(bench.graph, std::min(pool_size, bench.graph.num_nodes()), config.pool_seed);

  std::unique_ptr<LlmClient> owned;
  if (!client) {
    owned = make_llm_client(config.llm, bench.labels, bench.encoder);
    client = owned.get();
  }
  const AttackConfig& attack = config.protocol.attack;
  bench.triggers =
      generate_text_triggers(*client, bench.graph, bench.labels, attack.strategy, attack.target, config.llm);
  if (config.test_dataset) {
    LoadedDataset test = load_dataset(*config.test_dataset, *bench.encoder);
    if (test.graph.num_classes() != bench.graph.num_classes()) {
      throw ValidationError("test_dataset: label space differs from the tuning dataset");
    }
    bench.test_graph = std::move(test.graph);
    bench.test_triggers =
        generate_text_triggers(*client, *bench.test_graph, bench.labels, attack.strategy, attack.target, config.llm);
  }
  bench.probe = std::make_unique<TextProbe>(
      train_text_probe(*bench.gfm, bench.graph, config.probe_shots, derive_seed(config.pool_seed, "probe")));
  return bench;
}

fs::path make_run_directory(const std::string& output_dir, const std::string& prefix) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
  fs::path dir = fs::path(output_dir) / (prefix + "-" + stamp);
  for (int i = 1; fs::exists(dir); ++i) dir = fs::path(output_dir) / (prefix + "-" + stamp + "-" + std::to_string(i));
  fs::create_directories(dir);
  return dir;
}

ExperimentResult run_experiment(const RunConfig& config, const fs::path& run_dir, LlmClient* client) {
  ExperimentResult out;
  fs::create_directories(run_dir);
  std::ofstream(run_dir / "resolved_config.json") << config.to_json().dump(2) << '\n';
  Workbench bench;
  try {
    bench = build_workbench(config, client);
  } catch (const Error& e) {
    AttackReport failed;
    failed.variant = to_string(config.protocol.variant);
    failed.status = "failed";
    failed.failed_stage = "ingest";
    failed.error = e.what();
    failed.config = config.protocol.to_json();
    out.reports.push_back(failed);
    out.failed_stage = "ingest";
    write_report(out.reports, run_dir);
    return out;
  }
  std::vector<Variant> variants{config.protocol.variant};
  for (Variant v : config.variants) {
    if (std::find(variants.begin(), variants.end(), v) == variants.end()) variants.push_back(v);
  }
  std::vector<ProtocolRun> first_runs;
  for (Variant v : variants) {
    ProtocolConfig pc = config.protocol;
    pc.variant = v;
    std::vector<ProtocolRun> runs;
    AttackReport report = run_protocol(bench, pc, &runs);
    if (config.compute_imp && report.ok() && v != Variant::WithoutTlg) {
      ProtocolConfig ablation = pc;
      ablation.variant = Variant::WithoutTlg;
      ablation.defense = DefenseKind::None;
      const AttackReport base = run_protocol(bench, ablation);
      if (base.ok()) report.imp = compute_imp(report, base);
    }
    if (!report.ok() && out.failed_stage.empty()) out.failed_stage = report.failed_stage;
    if (first_runs.empty()) first_runs = std::move(runs);
    out.reports.push_back(std::move(report));
  }
  const AttackTrace* trace = nullptr;
  if (!first_runs.empty()) {
    const ProtocolRun& r = first_runs.front();
    write_attack_artifacts(r.result, r.config, run_dir / "attack");
    trace = &r.result.trace;
  }
  write_report(out.reports, run_dir, trace);
  return out;
}

}  // namespace dtgba
