#include "dtgba/synthetic.hpp"

#include "dtgba/errors.hpp"
#include "dtgba/rng.hpp"

#include <array>
#include <set>
#include <string>

namespace dtgba {

namespace {

struct Topic {
  const char* name;
  const char* explanation;
  std::vector<std::string> words;
};

const std::vector<Topic>& topics() {
  static const std::vector<Topic> kTopics = {
      {"neural networks",
       "papers about neural network models, neurons, backpropagation and hidden layers",
       {"neural", "networks", "neurons", "backpropagation", "hidden", "layers", "perceptron", "activation",
        "weights", "synaptic", "connectionist", "gradient", "training", "recurrent", "feedforward", "units",
        "sigmoid", "learning", "architecture", "multilayer"}},
      {"case based",
       "papers about case based reasoning, retrieval of past cases, similarity and adaptation",
       {"case", "based", "cases", "reasoning", "retrieval", "past", "adaptation", "similarity", "memory",
        "precedents", "library", "indexing", "analogical", "episodes", "reuse", "retrieve", "casebase",
        "experiences", "matching", "stored"}},
      {"genetic algorithms",
       "papers about genetic algorithms, evolution, mutation, crossover and fitness",
       {"genetic", "algorithms", "evolution", "mutation", "crossover", "fitness", "population", "chromosomes",
        "selection", "evolutionary", "genes", "offspring", "generations", "schema", "breeding", "genome",
        "individuals", "evolve", "darwinian", "recombination"}},
      {"reinforcement learning",
       "papers about reinforcement learning, rewards, agents, policies and exploration",
       {"reinforcement", "rewards", "agents", "policies", "exploration", "reward", "agent", "policy",
        "markov", "temporal", "difference", "qlearning", "actions", "environment", "discounted", "returns",
        "bellman", "trials", "exploit", "value"}},
      {"probabilistic methods",
       "papers about probabilistic methods, bayesian networks, inference and uncertainty",
       {"probabilistic", "methods", "bayesian", "inference", "uncertainty", "probability", "posterior",
        "prior", "likelihood", "belief", "distributions", "sampling", "variables", "conditional",
        "graphical", "marginal", "stochastic", "density", "estimation", "latent"}},
      {"theory",
       "papers about learning theory, bounds, proofs and computational complexity",
       {"theory", "bounds", "proofs", "complexity", "theorem", "polynomial", "lemma", "sample", "pac",
        "dimension", "hypothesis", "consistent", "bound", "computational", "hardness", "queries", "concept",
        "class", "mistake", "formal"}},
  };
  return kTopics;
}

const std::vector<std::string>& shared_words() {
  static const std::vector<std::string> kWords = {
      "we", "the", "paper", "this", "method", "results", "show", "propose", "approach", "problem",
      "present", "new", "study", "model", "data", "performance", "using", "work", "our",
      "experiments", "analysis", "describe", "system", "demonstrate", "general", "framework", "applied",
      "several", "previous", "results", "improved", "simple", "efficient", "terms", "set", "task",
      "domains", "various", "important", "novel", "techniques", "technique", "evaluate", "significant",
      "empirical", "discuss", "introduce", "standard", "related", "practical", "report", "apply",
      "compare", "obtained", "number", "large", "small", "different", "useful", "provide", "structure",
      "process", "examples", "research", "particular", "first", "second", "finally", "also",
      "how", "can", "which", "these", "both", "its", "an", "of", "in", "for", "with", "and", "to", "on",
  };
  return kWords;
}

std::string make_text(Rng& rng, const SyntheticTagConfig& cfg, int cls, int other, bool mixed) {
  const auto& own = topics()[static_cast<std::size_t>(cls)].words;
  const auto& alt = topics()[static_cast<std::size_t>(other)].words;
  const auto& common = shared_words();
  std::string text;
  for (int s = 0; s < cfg.sentences_per_text; ++s) {
    for (int w = 0; w < cfg.words_per_sentence; ++w) {
      std::string word;
      if (rng.bernoulli(cfg.topic_word_rate)) {
        const auto& vocab = (mixed && rng.bernoulli(cfg.mixed_share)) ? alt : own;
        word = vocab[rng.below(vocab.size())];
      } else {
        word = common[rng.below(common.size())];
      }
      if (w == 0) word[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(word[0])));
      if (!text.empty()) text += ' ';
      text += word;
    }
    text += '.';
  }
  return text;
}

}  // namespace

SyntheticTag make_synthetic_tag(const SyntheticTagConfig& cfg) {
  if (cfg.num_classes < 2 || cfg.num_classes > static_cast<int>(topics().size())) {
    throw ValidationError("synthetic: num_classes must lie in [2, " + std::to_string(topics().size()) + "]");
  }
  if (cfg.num_nodes < 2 * cfg.num_classes) throw ValidationError("synthetic: too few nodes");
  Rng rng(cfg.seed);
  const int n = cfg.num_nodes;
  const int c = cfg.num_classes;

  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = i % c;
  rng.shuffle(labels);

  std::vector<std::string> texts;
  texts.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int cls = labels[static_cast<std::size_t>(i)];
    const int other = (cls + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(c - 1)))) % c;
    const bool mixed = rng.bernoulli(cfg.mixed_node_rate);
    texts.push_back(make_text(rng, cfg, cls, other, mixed));
  }

  std::vector<std::vector<int>> members(static_cast<std::size_t>(c));
  for (int i = 0; i < n; ++i) members[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])].push_back(i);

  std::set<Edge> edges;
  auto add = [&](int a, int b) {
    if (a == b) return false;
    return edges.insert(Edge{std::min(a, b), std::max(a, b)}).second;
  };
  // A random tree inside each class keeps every node attached.
  for (const auto& m : members) {
    for (std::size_t k = 1; k < m.size(); ++k) add(m[k], m[rng.below(k)]);
  }
  const auto target = static_cast<std::size_t>(cfg.average_degree * n / 2.0);
  std::size_t guard = 0;
  while (edges.size() < target && guard++ < target * 100) {
    const int u = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    const int cu = labels[static_cast<std::size_t>(u)];
    int v = 0;
    if (rng.bernoulli(cfg.edge_homophily)) {
      const auto& m = members[static_cast<std::size_t>(cu)];
      v = m[rng.below(m.size())];
    } else {
      const int cv = (cu + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(c - 1)))) % c;
      const auto& m = members[static_cast<std::size_t>(cv)];
      v = m[rng.below(m.size())];
    }
    add(u, v);
  }

  SyntheticTag out{TextAttributedGraph::create(std::move(texts), std::move(labels),
                                               std::vector<Edge>(edges.begin(), edges.end()), c),
                   {}};
  for (int k = 0; k < c; ++k) {
    const Topic& t = topics()[static_cast<std::size_t>(k)];
    out.labels.push_back(LabelRecord{k, t.name, t.explanation});
  }
  return out;
}

}  // namespace dtgba
