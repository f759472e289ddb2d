#pragma once

// Text-level triggers: instruction assembly, language-model clients (HTTP and
// an offline deterministic stub), triggered-text caching, semantic scoring and
// the text-only probe behind LM ASR.

#include "dtgba/gfm.hpp"
#include "dtgba/tag.hpp"
#include "dtgba/text_encoder.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

namespace dtgba {

enum class StrategyId { W1, W2, S1, S2 };
enum class StrategyLevel { Word, Sentence };

StrategyId parse_strategy(const std::string& name);
std::string to_string(StrategyId s);
StrategyLevel strategy_level(StrategyId s);
/// Guidance sentence given to the language model for each strategy.
const std::string& strategy_guide(StrategyId s);

struct InstructionTemplate {
  std::string input;      // t_input
  std::string guide;      // t_guide
  std::string objective;  // t_obj
  std::string rendered;   // t_instruction
  StrategyId strategy = StrategyId::S1;
  std::string target_label;
};

InstructionTemplate assemble_instruction(const std::string& original, StrategyId strategy,
                                         const LabelDescription& target);

struct TriggeredText {
  std::string original;
  std::string triggered;
  StrategyId strategy = StrategyId::S1;
  std::string generator;
  bool declined = false;
  int retries = 0;
  std::optional<double> semantic_score;

  nlohmann::json to_json() const;
  static TriggeredText from_json(const nlohmann::json& j);
};

/// Instruction-following text generator. complete() may throw GenerationError
/// or return an empty string on failure.
class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual std::string name() const = 0;
  virtual std::string complete(const std::string& instruction) = 0;
};

/// Sentence spans [begin, end) of `text`, split after '.', '!' or '?' that is
/// followed by whitespace or the end of the text.
std::vector<std::pair<std::size_t, std::size_t>> sentence_spans(const std::string& text);

struct StubOptions {
  /// Number of label-explanation keywords infused by sentence-level rewrites;
  /// larger budgets cycle through the keywords again.
  int keyword_budget = 3;
};

/// Deterministic offline generator. It reads the original text, target label
/// and strategy back out of the rendered instruction and applies a fixed edit:
/// s1/s2 rewrite the sentence least aligned with the target label, w1 swaps
/// words from a synonym table and w2 deletes filler words.
class StubLlmClient final : public LlmClient {
 public:
  /// Scores a sentence toward a target label; the lowest-scoring sentence is rewritten.
  using SentenceScorer = std::function<double(const std::string& sentence, const LabelDescription& target)>;

  StubLlmClient(std::vector<LabelDescription> labels, std::shared_ptr<const TextEncoder> encoder,
                StubOptions options = {});
  StubLlmClient(std::vector<LabelDescription> labels, SentenceScorer scorer, StubOptions options = {});

  std::string name() const override;
  std::string complete(const std::string& instruction) override;

  const StubOptions& options() const noexcept { return options_; }

  /// Content words of the label explanation, in order, without duplicates.
  static std::vector<std::string> label_keywords(const LabelDescription& label);

 private:
  std::vector<LabelDescription> labels_;
  SentenceScorer scorer_;
  StubOptions options_;
};

struct GenerationPolicy {
  /// Extra attempts after the first one.
  int max_retries = 2;
  /// Used after the retries are exhausted; nullptr disables the fallback.
  LlmClient* fallback = nullptr;
};

/// Strips wrapper prose (leading "Here is the new text:", quotes, code fences).
std::string strip_wrapper(const std::string& output);

TriggeredText generate_text_trigger(LlmClient& client, const InstructionTemplate& instruction,
                                    const std::string& original, const GenerationPolicy& policy = {});

struct HttpClientConfig {
  std::string base_url = "https://api.deepseek.com";
  std::string model = "deepseek-chat";
  std::string api_key_env = "DTGBA_LLM_API_KEY";
  double timeout_seconds = 60.0;
  double temperature = 0.0;
  /// Minimum spacing between request starts, shared by all threads.
  double min_request_interval_seconds = 0.0;
};

/// OpenAI-compatible chat-completions client.
class HttpLlmClient final : public LlmClient {
 public:
  explicit HttpLlmClient(HttpClientConfig config);
  std::string name() const override { return "http:" + config_.model; }
  std::string complete(const std::string& instruction) override;

 private:
  HttpClientConfig config_;
  std::string api_key_;
  std::mutex rate_mutex_;
  std::chrono::steady_clock::time_point next_slot_{};
};

/// On-disk cache of triggered texts, one JSON file per
/// (text hash, strategy, target, generator) key.
class TriggerCache {
 public:
  explicit TriggerCache(std::filesystem::path dir);

  static std::string key(const std::string& original, StrategyId strategy, int target, const std::string& generator);
  std::optional<TriggeredText> get(const std::string& key) const;
  void put(const std::string& key, const TriggeredText& value);
  const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  std::filesystem::path dir_;
  mutable std::shared_mutex mutex_;
};

struct TriggerRequest {
  std::string original;
  StrategyId strategy = StrategyId::S1;
  int target = 0;
};

/// Generates one trigger per request with up to `max_concurrency` in flight,
/// consulting and filling `cache` when given. Output order matches input.
std::vector<TriggeredText> generate_batch(LlmClient& client, std::span<const TriggerRequest> requests,
                                          std::span<const LabelDescription> labels, const GenerationPolicy& policy,
                                          TriggerCache* cache = nullptr, int max_concurrency = 4);

/// Cosine of the text-encoder embeddings; exactly 1.0 for identical strings.
double semantic_similarity(const TextEncoder& encoder, const std::string& original, const std::string& triggered);
inline double semantic_similarity(const FrozenGfm& gfm, const std::string& original, const std::string& triggered) {
  return semantic_similarity(gfm.text_encoder(), original, triggered);
}

/// Softmax regression on frozen text embeddings.
class TextProbe {
 public:
  TextProbe(std::shared_ptr<const TextEncoder> encoder, Eigen::MatrixXd weights, Eigen::RowVectorXd bias);

  int num_classes() const noexcept { return static_cast<int>(bias_.size()); }
  int predict(const std::string& text) const;
  int predict_embedding(const Eigen::RowVectorXd& x) const;
  Eigen::RowVectorXd probabilities(const Eigen::RowVectorXd& x) const;

 private:
  std::shared_ptr<const TextEncoder> encoder_;
  Eigen::MatrixXd weights_;  // d x C
  Eigen::RowVectorXd bias_;
};

struct ProbeConfig {
  int epochs = 300;
  double learning_rate = 0.05;
  double l2 = 1e-4;
};

TextProbe train_text_probe(const FrozenGfm& gfm, const TextAttributedGraph& graph, int shots_per_class,
                           std::uint64_t seed, const ProbeConfig& config = {});

/// Fraction of triggered texts the probe assigns to `target`.
double lm_asr_probe(const TextProbe& probe, std::span<const TriggeredText> triggered, int target);

}  // namespace dtgba
