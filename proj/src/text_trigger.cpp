#include "dtgba/text_trigger.hpp"

#include "dtgba/errors.hpp"
#include "dtgba/optim.hpp"
#include "dtgba/rng.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <limits>
#include <set>
#include <unordered_map>

namespace dtgba {

// ---- strategies and instructions ---------------------------------------------

StrategyId parse_strategy(const std::string& name) {
  if (name == "w1") return StrategyId::W1;
  if (name == "w2") return StrategyId::W2;
  if (name == "s1") return StrategyId::S1;
  if (name == "s2") return StrategyId::S2;
  throw ValidationError("unknown strategy '" + name + "' (expected w1, w2, s1 or s2)");
}

std::string to_string(StrategyId s) {
  switch (s) {
    case StrategyId::W1: return "w1";
    case StrategyId::W2: return "w2";
    case StrategyId::S1: return "s1";
    case StrategyId::S2: return "s2";
  }
  return "s1";
}

StrategyLevel strategy_level(StrategyId s) {
  return (s == StrategyId::W1 || s == StrategyId::W2) ? StrategyLevel::Word : StrategyLevel::Sentence;
}

const std::string& strategy_guide(StrategyId s) {
  static const std::string kW1 = "Replace some words in the text with synonyms.";
  static const std::string kW2 =
      "Choose some words in the text that do not contribute to the meaning of the text and delete them.";
  static const std::string kS1 = "Paraphrase only one of sentences, leaving the rest text unchanged.";
  static const std::string kS2 = "Change the syntactic structure of one of sentences, leaving the rest text unchanged.";
  switch (s) {
    case StrategyId::W1: return kW1;
    case StrategyId::W2: return kW2;
    case StrategyId::S1: return kS1;
    case StrategyId::S2: return kS2;
  }
  return kS1;
}

namespace {

constexpr const char* kInputPrefix = "The original text \"";
constexpr const char* kInputSuffix = "\".\n\nYour task is to generate a new text";
constexpr const char* kObjectivePrefix = "The new text should be classified as ";
constexpr const char* kGuidanceHeader = "You can finish the task by modifying the text using the following guidance:\n";

}  // namespace

InstructionTemplate assemble_instruction(const std::string& original, StrategyId strategy,
                                         const LabelDescription& target) {
  if (original.empty()) throw ValidationError("instruction: empty original text");
  InstructionTemplate t;
  t.input = original;
  t.guide = strategy_guide(strategy);
  t.objective = std::string(kObjectivePrefix) + target.label_name + ".";
  t.strategy = strategy;
  t.target_label = target.label_name;
  t.rendered = std::string(kInputPrefix) + t.input +
               "\".\n\n"
               "Your task is to generate a new text which must satisfy the following conditions:\n"
               "1. Keeping the semantic meaning of the new text unchanged;\n"
               "2. " + t.objective + "\n\n" + kGuidanceHeader + t.guide +
               "\n"
               "Only output the new text without anything else.\n";
  return t;
}

nlohmann::json TriggeredText::to_json() const {
  nlohmann::json j{{"original", original}, {"triggered", triggered},  {"strategy", to_string(strategy)},
                   {"generator", generator}, {"declined", declined}, {"retries", retries}};
  j["semantic_score"] = semantic_score ? nlohmann::json(*semantic_score) : nlohmann::json(nullptr);
  return j;
}

TriggeredText TriggeredText::from_json(const nlohmann::json& j) {
  TriggeredText t;
  t.original = j.at("original").get<std::string>();
  t.triggered = j.at("triggered").get<std::string>();
  t.strategy = parse_strategy(j.at("strategy").get<std::string>());
  t.generator = j.at("generator").get<std::string>();
  t.declined = j.value("declined", false);
  t.retries = j.value("retries", 0);
  if (j.contains("semantic_score") && !j["semantic_score"].is_null()) t.semantic_score = j["semantic_score"].get<double>();
  return t;
}

// ---- text utilities -----------------------------------------------------------

std::vector<std::pair<std::size_t, std::size_t>> sentence_spans(const std::string& text) {
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    while (i < n && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i >= n) break;
    std::size_t j = i;
    while (j < n) {
      const char c = text[j];
      if ((c == '.' || c == '!' || c == '?') &&
          (j + 1 == n || std::isspace(static_cast<unsigned char>(text[j + 1])))) {
        ++j;
        break;
      }
      ++j;
    }
    spans.emplace_back(i, j);
    i = j;
  }
  return spans;
}

namespace {

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string match_case(const std::string& replacement, const std::string& source) {
  std::string out = replacement;
  if (!out.empty() && !source.empty() && std::isupper(static_cast<unsigned char>(source[0]))) {
    out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  }
  return out;
}

std::string join_keywords(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i > 0) out += (i + 1 == words.size()) ? " and " : ", ";
    out += words[i];
  }
  return out;
}

const std::unordered_map<std::string, std::string>& synonym_table() {
  static const std::unordered_map<std::string, std::string> kTable = {
      {"previous", "earlier"},        {"show", "reveal"},           {"shown", "demonstrated"},
      {"propose", "suggest"},         {"method", "procedure"},      {"results", "findings"},
      {"novel", "original"},          {"important", "key"},         {"significant", "notable"},
      {"efficient", "economical"},    {"simple", "straightforward"}, {"large", "big"},
      {"small", "little"},            {"useful", "helpful"},        {"problem", "issue"},
      {"improved", "enhanced"},       {"various", "diverse"},       {"several", "multiple"},
      {"demonstrate", "illustrate"},  {"describe", "outline"},      {"evaluate", "assess"},
      {"discuss", "examine"},         {"provide", "offer"},         {"obtained", "acquired"},
      {"apply", "employ"},            {"applied", "employed"},      {"compare", "contrast"},
      {"particular", "specific"},     {"finally", "lastly"},        {"research", "inquiry"},
      {"technique", "procedure"},     {"framework", "scheme"},      {"experiments", "tests"},
      {"analysis", "examination"},    {"performance", "effectiveness"}, {"data", "information"},
      {"general", "broad"},           {"practical", "pragmatic"},   {"related", "associated"},
      {"report", "document"},         {"number", "quantity"},       {"different", "distinct"},
      {"examples", "instances"},      {"task", "assignment"},
  };
  return kTable;
}

const std::set<std::string>& filler_words() {
  static const std::set<std::string> kFillers = {"also", "thus",    "very",       "some",    "both",    "which",
                                                 "these", "its",    "the",        "an",      "finally", "various",
                                                 "several", "particular", "how", "can", "just", "really"};
  return kFillers;
}

const std::set<std::string>& keyword_stopwords() {
  static const std::set<std::string> kStop = {"papers", "paper", "about", "and", "of",  "the", "on", "with",
                                              "for",    "to",    "in",    "a",   "an",  "or",  "by", "from"};
  return kStop;
}

struct WordToken {
  std::size_t begin, end;
};

std::vector<WordToken> word_tokens(const std::string& text, std::size_t from, std::size_t to) {
  std::vector<WordToken> out;
  std::size_t i = from;
  while (i < to) {
    while (i < to && !is_word_char(text[i])) ++i;
    std::size_t j = i;
    while (j < to && is_word_char(text[j])) ++j;
    if (j > i) out.push_back({i, j});
    i = j;
  }
  return out;
}

// Swaps the first table word of every sentence.
std::string apply_synonyms(const std::string& text) {
  const auto& table = synonym_table();
  std::string out;
  std::size_t last = 0;
  for (const auto& [b, e] : sentence_spans(text)) {
    for (const WordToken& t : word_tokens(text, b, e)) {
      const std::string word = text.substr(t.begin, t.end - t.begin);
      auto it = table.find(lower(word));
      if (it == table.end()) continue;
      out += text.substr(last, t.begin - last);
      out += match_case(it->second, word);
      last = t.end;
      break;
    }
  }
  out += text.substr(last);
  return out;
}

std::string delete_fillers(const std::string& text) {
  const auto& fillers = filler_words();
  std::string out;
  for (const auto& [b, e] : sentence_spans(text)) {
    auto words = word_tokens(text, b, e);
    std::size_t remaining = words.size();
    std::string sentence;
    std::size_t last = b;
    bool capitalize_next = false;
    for (const WordToken& t : words) {
      const std::string word = text.substr(t.begin, t.end - t.begin);
      if (remaining > 1 && fillers.count(lower(word))) {
        sentence += text.substr(last, t.begin - last);
        // Drop the word and the whitespace that follows it.
        std::size_t skip = t.end;
        while (skip < e && text[skip] == ' ') ++skip;
        last = skip;
        if (std::isupper(static_cast<unsigned char>(word[0]))) capitalize_next = true;
        --remaining;
        continue;
      }
      sentence += text.substr(last, t.begin - last);
      std::string kept = word;
      if (capitalize_next) {
        kept[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(kept[0])));
        capitalize_next = false;
      }
      sentence += kept;
      last = t.end;
    }
    sentence += text.substr(last, e - last);
    // A dropped word right before punctuation leaves a dangling space.
    for (std::size_t p = 1; p < sentence.size(); ++p) {
      if (sentence[p - 1] == ' ' && (sentence[p] == '.' || sentence[p] == ',' || sentence[p] == '!' ||
                                     sentence[p] == '?')) {
        sentence.erase(p - 1, 1);
        --p;
      }
    }
    if (!out.empty()) out += ' ';
    out += sentence;
  }
  return out;
}

std::string sentence_body(const std::string& sentence) {
  std::string body = sentence;
  while (!body.empty() && (body.back() == '.' || body.back() == '!' || body.back() == '?' ||
                           std::isspace(static_cast<unsigned char>(body.back())))) {
    body.pop_back();
  }
  return body;
}

std::string between(const std::string& s, const std::string& open, const std::string& close) {
  auto a = s.find(open);
  if (a == std::string::npos) return {};
  a += open.size();
  auto b = s.rfind(close);
  if (b == std::string::npos || b < a) return {};
  return s.substr(a, b - a);
}

}  // namespace

// ---- stub generator --------------------------------------------------------------

std::vector<std::string> StubLlmClient::label_keywords(const LabelDescription& label) {
  std::set<std::string> name_words;
  for (const auto& w : tokenize(label.label_name)) name_words.insert(w);
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& w : tokenize(label.explanation)) {
    if (keyword_stopwords().count(w) || name_words.count(w) || seen.count(w)) continue;
    seen.insert(w);
    out.push_back(w);
  }
  return out;
}

StubLlmClient::StubLlmClient(std::vector<LabelDescription> labels, std::shared_ptr<const TextEncoder> encoder,
                             StubOptions options)
    : labels_(std::move(labels)), options_(options) {
  if (!encoder) throw ValidationError("stub: encoder is required");
  scorer_ = [encoder](const std::string& sentence, const LabelDescription& target) {
    const Eigen::RowVectorXd a = encoder->embed(sentence);
    const Eigen::RowVectorXd b = encoder->embed(target.rendered);
    const double na = a.norm(), nb = b.norm();
    return (na == 0.0 || nb == 0.0) ? 0.0 : a.dot(b) / (na * nb);
  };
}

StubLlmClient::StubLlmClient(std::vector<LabelDescription> labels, SentenceScorer scorer, StubOptions options)
    : labels_(std::move(labels)), scorer_(std::move(scorer)), options_(options) {
  if (!scorer_) throw ValidationError("stub: scorer is required");
}

std::string StubLlmClient::name() const {
  return options_.keyword_budget == StubOptions{}.keyword_budget ? "stub"
                                                                  : "stub-k" + std::to_string(options_.keyword_budget);
}

std::string StubLlmClient::complete(const std::string& instruction) {
  const std::string original = between(instruction, kInputPrefix, kInputSuffix);
  if (original.empty()) throw GenerationError("stub: instruction has no original text slot");
  const std::string target_name = between(instruction, kObjectivePrefix, ".\n\n" + std::string(kGuidanceHeader));
  auto label = std::find_if(labels_.begin(), labels_.end(),
                            [&](const LabelDescription& l) { return l.label_name == target_name; });
  if (label == labels_.end()) throw GenerationError("stub: unknown target label '" + target_name + "'");

  std::optional<StrategyId> strategy;
  for (StrategyId s : {StrategyId::W1, StrategyId::W2, StrategyId::S1, StrategyId::S2}) {
    if (instruction.find(kGuidanceHeader + strategy_guide(s)) != std::string::npos) strategy = s;
  }
  if (!strategy) throw GenerationError("stub: unrecognized guidance");

  if (*strategy == StrategyId::W1) return apply_synonyms(original);
  if (*strategy == StrategyId::W2) return delete_fillers(original);

  const auto spans = sentence_spans(original);
  if (spans.empty()) return original;
  std::size_t worst = 0;
  double worst_score = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const double s = scorer_(original.substr(spans[i].first, spans[i].second - spans[i].first), *label);
    if (s < worst_score) {
      worst_score = s;
      worst = i;
    }
  }
  // Budgets beyond the keyword list cycle through it again.
  const auto pool = label_keywords(*label);
  std::vector<std::string> keywords;
  for (int i = 0; !pool.empty() && i < options_.keyword_budget; ++i) keywords.push_back(pool[i % pool.size()]);
  const auto [b, e] = spans[worst];
  const std::string body = sentence_body(original.substr(b, e - b));
  std::string rewritten;
  if (*strategy == StrategyId::S1) {
    rewritten = body + ", in line with " + label->label_name + " work";
    if (!keywords.empty()) rewritten += " on " + join_keywords(keywords);
    rewritten += ".";
  } else {
    std::string tail = body;
    if (tail.size() > 1 && std::isupper(static_cast<unsigned char>(tail[0])) &&
        std::islower(static_cast<unsigned char>(tail[1]))) {
      tail[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(tail[0])));
    }
    rewritten = "Regarding " + label->label_name;
    if (!keywords.empty()) rewritten += " and " + join_keywords(keywords);
    rewritten += ", " + tail + ".";
  }
  return original.substr(0, b) + rewritten + original.substr(e);
}

// ---- generation ------------------------------------------------------------------

std::string strip_wrapper(const std::string& output) {
  auto trim = [](std::string s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
  };
  std::string s = trim(output);
  if (s.rfind("```", 0) == 0) {
    auto nl = s.find('\n');
    s = nl == std::string::npos ? std::string() : s.substr(nl + 1);
    auto fence = s.rfind("```");
    if (fence != std::string::npos) s = s.substr(0, fence);
    s = trim(s);
  }
  static const char* kPrefixes[] = {"here is the new text:", "here's the new text:", "new text:", "the new text:",
                                    "output:", "here is the modified text:", "modified text:"};
  const std::string low = lower(s);
  for (const char* p : kPrefixes) {
    const std::string prefix(p);
    if (low.rfind(prefix, 0) == 0) {
      s = trim(s.substr(prefix.size()));
      break;
    }
  }
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\''))) {
    s = trim(s.substr(1, s.size() - 2));
  }
  return s;
}

TriggeredText generate_text_trigger(LlmClient& client, const InstructionTemplate& instruction,
                                    const std::string& original, const GenerationPolicy& policy) {
  TriggeredText out;
  out.original = original;
  out.strategy = instruction.strategy;
  const int attempts = 1 + std::max(0, policy.max_retries);
  for (int attempt = 0; attempt < attempts; ++attempt) {
    std::string text;
    try {
      text = strip_wrapper(client.complete(instruction.rendered));
    } catch (const std::exception& e) {
      spdlog::debug("text trigger: attempt {} with {} failed: {}", attempt + 1, client.name(), e.what());
      continue;
    }
    if (text.empty()) continue;
    out.triggered = std::move(text);
    out.generator = client.name();
    out.retries = attempt;
    out.declined = out.triggered == original;
    return out;
  }
  if (!policy.fallback) {
    throw GenerationError("text trigger: " + client.name() + " failed after " + std::to_string(attempts) +
                          " attempts and no fallback is configured");
  }
  spdlog::warn("text trigger: {} failed after {} attempts, falling back to {}", client.name(), attempts,
               policy.fallback->name());
  std::string text = strip_wrapper(policy.fallback->complete(instruction.rendered));
  if (text.empty()) throw GenerationError("text trigger: fallback generator returned no text");
  out.triggered = std::move(text);
  out.generator = policy.fallback->name();
  out.retries = attempts;
  out.declined = out.triggered == original;
  return out;
}

// ---- scoring -----------------------------------------------------------------------

double semantic_similarity(const TextEncoder& encoder, const std::string& original, const std::string& triggered) {
  if (original.empty() || triggered.empty()) throw ValidationError("semantic_similarity: empty text");
  if (original == triggered) return 1.0;
  const Eigen::RowVectorXd a = encoder.embed(original), b = encoder.embed(triggered);
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

TextProbe::TextProbe(std::shared_ptr<const TextEncoder> encoder, Eigen::MatrixXd weights, Eigen::RowVectorXd bias)
    : encoder_(std::move(encoder)), weights_(std::move(weights)), bias_(std::move(bias)) {
  if (weights_.cols() != bias_.size()) throw ShapeError("probe: weight/bias class count mismatch");
}

Eigen::RowVectorXd TextProbe::probabilities(const Eigen::RowVectorXd& x) const {
  Eigen::RowVectorXd logits = x * weights_ + bias_;
  logits.array() -= logits.maxCoeff();
  Eigen::RowVectorXd e = logits.array().exp().matrix();
  return e / e.sum();
}

int TextProbe::predict_embedding(const Eigen::RowVectorXd& x) const {
  const Eigen::RowVectorXd logits = x * weights_ + bias_;
  int best = 0;
  for (Eigen::Index c = 1; c < logits.size(); ++c) {
    if (logits(c) > logits(best)) best = static_cast<int>(c);
  }
  return best;
}

int TextProbe::predict(const std::string& text) const { return predict_embedding(encoder_->embed(text)); }

TextProbe train_text_probe(const FrozenGfm& gfm, const TextAttributedGraph& graph, int shots_per_class,
                           std::uint64_t seed, const ProbeConfig& config) {
  if (shots_per_class < 1) throw ValidationError("probe: shots_per_class must be >= 1");
  const int classes = graph.num_classes();
  Rng rng(derive_seed(seed, "text-probe"));
  std::vector<NodeIndex> nodes;
  std::vector<int> targets;
  for (int c = 0; c < classes; ++c) {
    auto members = graph.nodes_of_class(c);
    if (members.empty()) throw ValidationError("probe: class " + std::to_string(c) + " has no nodes");
    const std::size_t k = std::min<std::size_t>(members.size(), static_cast<std::size_t>(shots_per_class));
    for (std::size_t pick : rng.sample_without_replacement(members.size(), k)) {
      nodes.push_back(members[pick]);
      targets.push_back(c);
    }
  }
  const int d = gfm.dims().text_dim;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(nodes.size()), d);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) =
        graph.has_attributes() ? Eigen::RowVectorXd(graph.attributes().row(nodes[i])) : gfm.embed_text(graph.text(nodes[i]));
  }
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(x.rows(), classes);
  for (std::size_t i = 0; i < targets.size(); ++i) y(static_cast<Eigen::Index>(i), targets[i]) = 1.0;

  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(d, classes);
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(1, classes);
  Adam opt(config.learning_rate);
  const double n = static_cast<double>(x.rows());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Eigen::MatrixXd logits = (x * w).rowwise() + b.row(0);
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      logits.row(r).array() -= logits.row(r).maxCoeff();
      logits.row(r) = logits.row(r).array().exp().matrix();
      logits.row(r) /= logits.row(r).sum();
    }
    const Eigen::MatrixXd diff = (logits - y) / n;
    const Eigen::MatrixXd gw = x.transpose() * diff + config.l2 * w;
    const Eigen::MatrixXd gb = diff.colwise().sum();
    Eigen::MatrixXd* params[] = {&w, &b};
    const Eigen::MatrixXd grads[] = {gw, gb};
    opt.step(params, grads);
  }
  return TextProbe(gfm.text_encoder_ptr(), std::move(w), Eigen::RowVectorXd(b.row(0)));
}

double lm_asr_probe(const TextProbe& probe, std::span<const TriggeredText> triggered, int target) {
  if (triggered.empty()) throw ValidationError("lm_asr: empty trigger set");
  std::size_t hits = 0;
  for (const auto& t : triggered) hits += probe.predict(t.triggered) == target;
  return static_cast<double>(hits) / static_cast<double>(triggered.size());
}

}  // namespace dtgba
