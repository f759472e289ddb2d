#include "dtgba/errors.hpp"
#include "dtgba/text_trigger.hpp"
#include "fixture.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <set>

using namespace dtgba;
using dtgba::testkit::fixture;

namespace {

const StrategyId kAll[] = {StrategyId::W1, StrategyId::W2, StrategyId::S1, StrategyId::S2};

std::vector<std::string> sentences_of(const std::string& text) {
  std::vector<std::string> out;
  for (auto [b, e] : sentence_spans(text)) out.push_back(text.substr(b, e - b));
  return out;
}

/// Scripted client: returns the queued outputs in order, throwing on "!".
class ScriptedClient final : public LlmClient {
 public:
  explicit ScriptedClient(std::vector<std::string> outputs) : outputs_(std::move(outputs)) {}
  std::string name() const override { return "scripted"; }
  std::string complete(const std::string&) override {
    if (calls_ >= outputs_.size()) throw GenerationError("script exhausted");
    const std::string out = outputs_[calls_++];
    if (out == "!") throw GenerationError("scripted failure");
    return out;
  }
  std::size_t calls() const { return calls_; }

 private:
  std::vector<std::string> outputs_;
  std::size_t calls_ = 0;
};

LabelDescription case_based() { return LabelDescription::make(0, "case based", "papers about case retrieval, reuse and adaptation"); }

}  // namespace

TEST(Instruction, GuidesAreVerbatim) {
  EXPECT_EQ(strategy_guide(StrategyId::W1), "Replace some words in the text with synonyms.");
  EXPECT_EQ(strategy_guide(StrategyId::W2),
            "Choose some words in the text that do not contribute to the meaning of the text and delete them.");
  EXPECT_EQ(strategy_guide(StrategyId::S1), "Paraphrase only one of sentences, leaving the rest text unchanged.");
  EXPECT_EQ(strategy_guide(StrategyId::S2),
            "Change the syntactic structure of one of sentences, leaving the rest text unchanged.");
  EXPECT_EQ(strategy_level(StrategyId::W2), StrategyLevel::Word);
  EXPECT_EQ(strategy_level(StrategyId::S2), StrategyLevel::Sentence);
  for (StrategyId s : kAll) EXPECT_EQ(parse_strategy(to_string(s)), s);
  EXPECT_THROW(parse_strategy("s3"), ValidationError);
}

TEST(Instruction, RenderedSkeleton) {
  const auto t = assemble_instruction("We study retrieval.", StrategyId::W1, case_based());
  EXPECT_EQ(t.rendered,
            "The original text \"We study retrieval.\".\n\n"
            "Your task is to generate a new text which must satisfy the following conditions:\n"
            "1. Keeping the semantic meaning of the new text unchanged;\n"
            "2. The new text should be classified as case based.\n\n"
            "You can finish the task by modifying the text using the following guidance:\n"
            "Replace some words in the text with synonyms.\n"
            "Only output the new text without anything else.\n");
  EXPECT_NE(t.rendered.find("Only output the new text"), std::string::npos);
  EXPECT_NE(t.rendered.find("classified as case based"), std::string::npos);
  EXPECT_EQ(t.input, "We study retrieval.");
  EXPECT_EQ(t.target_label, "case based");
  EXPECT_THROW(assemble_instruction("", StrategyId::W1, case_based()), ValidationError);
}

TEST(Instruction, TotalAndDeterministicForEveryPair) {
  const auto& f = fixture();
  for (StrategyId s : kAll) {
    for (const auto& label : f.labels) {
      const auto a = assemble_instruction(f.tag.graph.text(0), s, label);
      const auto b = assemble_instruction(f.tag.graph.text(0), s, label);
      EXPECT_EQ(a.rendered, b.rendered);
      EXPECT_NE(a.rendered.find(a.input), std::string::npos);
      EXPECT_NE(a.rendered.find(a.guide), std::string::npos);
      EXPECT_NE(a.rendered.find(a.objective), std::string::npos);
    }
  }
}

TEST(SentenceSpans, SplitsOnTerminalPunctuation) {
  const std::string text = "First one. Second v1.2 here!  Third?";
  const auto s = sentences_of(text);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0], "First one.");
  EXPECT_EQ(s[1], "Second v1.2 here!");
  EXPECT_EQ(s[2], "Third?");
  EXPECT_TRUE(sentence_spans("").empty());
  EXPECT_EQ(sentences_of("no terminal").size(), 1u);
}

TEST(StubClient, SentenceStrategiesChangeExactlyOneSentence) {
  const auto& f = fixture();
  StubLlmClient stub(f.labels, f.encoder);
  for (StrategyId s : {StrategyId::S1, StrategyId::S2}) {
    for (NodeIndex v = 0; v < 40; ++v) {
      const int target = (f.tag.graph.label(v) + 1) % f.tag.graph.num_classes();
      const std::string& text = f.tag.graph.text(v);
      const auto out = generate_text_trigger(stub, assemble_instruction(text, s, f.labels[target]), text);
      const auto before = sentences_of(text), after = sentences_of(out.triggered);
      ASSERT_EQ(before.size(), after.size());
      int changed = 0;
      std::size_t which = 0;
      for (std::size_t i = 0; i < before.size(); ++i) {
        if (before[i] != after[i]) {
          ++changed;
          which = i;
        }
      }
      ASSERT_EQ(changed, 1);
      EXPECT_NE(after[which].find(f.labels[target].label_name), std::string::npos);
      const auto keywords = StubLlmClient::label_keywords(f.labels[target]);
      for (std::size_t k = 0; k < std::min<std::size_t>(3, keywords.size()); ++k) {
        EXPECT_NE(after[which].find(keywords[k]), std::string::npos) << keywords[k];
      }
      EXPECT_FALSE(out.declined);
      EXPECT_EQ(out.generator, "stub");
    }
  }
}

TEST(StubClient, RewritesTheLeastAlignedSentence) {
  const auto label = case_based();
  // The scorer favors long sentences; the shortest one must be the one rewritten.
  StubLlmClient stub({label}, [](const std::string& s, const LabelDescription&) { return double(s.size()); });
  const std::string text = "A fairly long opening sentence here. Tiny one. Another long closing sentence.";
  const std::string out = stub.complete(assemble_instruction(text, StrategyId::S1, label).rendered);
  const auto after = sentences_of(out);
  ASSERT_EQ(after.size(), 3u);
  EXPECT_EQ(after[0], "A fairly long opening sentence here.");
  EXPECT_EQ(after[1], "Tiny one, in line with case based work on retrieval, reuse and adaptation.");
  EXPECT_EQ(after[2], "Another long closing sentence.");
  const std::string s2 = stub.complete(assemble_instruction(text, StrategyId::S2, label).rendered);
  EXPECT_EQ(sentences_of(s2)[1], "Regarding case based and retrieval, reuse and adaptation, tiny one.");
}

TEST(StubClient, WordStrategiesKeepSentenceCount) {
  const auto& f = fixture();
  StubLlmClient stub(f.labels, f.encoder);
  for (StrategyId s : {StrategyId::W1, StrategyId::W2}) {
    for (NodeIndex v = 0; v < 60; ++v) {
      const std::string& text = f.tag.graph.text(v);
      const auto out = generate_text_trigger(stub, assemble_instruction(text, s, f.labels[0]), text);
      EXPECT_EQ(sentences_of(out.triggered).size(), sentences_of(text).size());
      for (const auto& sentence : sentences_of(out.triggered)) EXPECT_GT(sentence.size(), 1u);
    }
  }
}

TEST(StubClient, WordEditsMatchCaseStudyShape) {
  const auto label = case_based();
  StubLlmClient stub({label}, [](const std::string&, const LabelDescription&) { return 0.0; });
  EXPECT_EQ(stub.complete(assemble_instruction("Previous work has shown gains.", StrategyId::W1, label).rendered),
            "Earlier work has shown gains.");
  EXPECT_EQ(stub.complete(assemble_instruction("We thus cover some cases. Also.", StrategyId::W2, label).rendered),
            "We cover cases. Also.");
  EXPECT_EQ(stub.complete(assemble_instruction("Also the results.", StrategyId::W2, label).rendered), "Results.");
}

TEST(StubClient, UnknownTargetOrMalformedInstructionFails) {
  StubLlmClient stub({case_based()}, [](const std::string&, const LabelDescription&) { return 0.0; });
  const auto other = LabelDescription::make(1, "theory", "");
  EXPECT_THROW(stub.complete(assemble_instruction("A text.", StrategyId::S1, other).rendered), GenerationError);
  EXPECT_THROW(stub.complete("free-form request"), GenerationError);
}

TEST(StubClient, IsPureAndNamesItsBudget) {
  const auto& f = fixture();
  StubLlmClient a(f.labels, f.encoder), b(f.labels, f.encoder, {12});
  const auto ins = assemble_instruction(f.tag.graph.text(5), StrategyId::S1, f.labels[2]).rendered;
  EXPECT_EQ(a.complete(ins), a.complete(ins));
  EXPECT_EQ(a.name(), "stub");
  EXPECT_EQ(b.name(), "stub-k12");
  EXPECT_NE(a.complete(ins), b.complete(ins));
}

TEST(StripWrapper, RemovesCommonWrappers) {
  EXPECT_EQ(strip_wrapper("  plain text \n"), "plain text");
  EXPECT_EQ(strip_wrapper("Here is the new text: \"Quoted body.\""), "Quoted body.");
  EXPECT_EQ(strip_wrapper("```\nfenced body\n```"), "fenced body");
  EXPECT_EQ(strip_wrapper("New text:\nbody"), "body");
  EXPECT_EQ(strip_wrapper(""), "");
}

TEST(Generation, RetryContract) {
  const auto ins = assemble_instruction("Original.", StrategyId::W1, case_based());
  ScriptedClient empty_twice({"", "", "Rewritten."});
  const auto ok = generate_text_trigger(empty_twice, ins, "Original.");
  EXPECT_EQ(ok.triggered, "Rewritten.");
  EXPECT_EQ(ok.retries, 2);
  EXPECT_EQ(ok.generator, "scripted");
  EXPECT_FALSE(ok.declined);

  ScriptedClient unchanged({"Original."});
  EXPECT_TRUE(generate_text_trigger(unchanged, ins, "Original.").declined);

  ScriptedClient failing({"!", "", "!"});
  EXPECT_THROW(generate_text_trigger(failing, ins, "Original."), GenerationError);
  EXPECT_EQ(failing.calls(), 3u);

  ScriptedClient failing_again({"!", "!", "!"});
  StubLlmClient stub({case_based()}, [](const std::string&, const LabelDescription&) { return 0.0; });
  const auto fb = generate_text_trigger(failing_again, ins, "Original.", GenerationPolicy{2, &stub});
  EXPECT_EQ(fb.generator, "stub");
  EXPECT_EQ(fb.retries, 3);
}

TEST(TriggeredText, JsonRoundTrip) {
  TriggeredText t{"a.", "b.", StrategyId::S2, "stub", false, 1, 0.93};
  const auto back = TriggeredText::from_json(t.to_json());
  EXPECT_EQ(back.to_json(), t.to_json());
  t.semantic_score.reset();
  EXPECT_FALSE(TriggeredText::from_json(t.to_json()).semantic_score.has_value());
}

TEST(TriggerCache, KeyedStorageAndBatchReuse) {
  const auto dir = testkit::scratch_dir("trigger_cache");
  const auto& f = fixture();
  TriggerCache cache(dir);
  EXPECT_NE(TriggerCache::key("x", StrategyId::S1, 0, "stub"), TriggerCache::key("x", StrategyId::S2, 0, "stub"));
  EXPECT_NE(TriggerCache::key("x", StrategyId::S1, 0, "stub"), TriggerCache::key("x", StrategyId::S1, 1, "stub"));
  EXPECT_NE(TriggerCache::key("x", StrategyId::S1, 0, "stub"), TriggerCache::key("y", StrategyId::S1, 0, "stub"));
  EXPECT_FALSE(cache.get("missing").has_value());

  std::vector<TriggerRequest> requests;
  for (NodeIndex v = 0; v < 12; ++v) requests.push_back({f.tag.graph.text(v), StrategyId::S1, 3});
  StubLlmClient stub(f.labels, f.encoder);
  const auto first = generate_batch(stub, requests, f.labels, {}, &cache, 4);
  std::size_t files = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) files += e.path().extension() == ".json";
  EXPECT_EQ(files, 12u);

  // A client that always fails proves the second pass is served from the cache.
  class Failing final : public LlmClient {
   public:
    std::string name() const override { return "stub"; }
    std::string complete(const std::string&) override { throw GenerationError("offline"); }
  } failing;
  const auto second = generate_batch(failing, requests, f.labels, GenerationPolicy{0, nullptr}, &cache, 3);
  ASSERT_EQ(second.size(), first.size());
  for (std::size_t i = 0; i < first.size(); ++i) EXPECT_EQ(second[i].to_json(), first[i].to_json());

  // Order matches the input regardless of concurrency.
  const auto serial = generate_batch(stub, requests, f.labels, {}, nullptr, 1);
  for (std::size_t i = 0; i < first.size(); ++i) EXPECT_EQ(serial[i].triggered, first[i].triggered);
  std::vector<TriggerRequest> bad{{"x.", StrategyId::S1, 9}};
  EXPECT_THROW(generate_batch(stub, bad, f.labels, {}), BoundsError);
}

TEST(HttpClient, RequiresApiKey) {
  HttpClientConfig cfg;
  cfg.api_key_env = "DTGBA_TEST_KEY_THAT_IS_NOT_SET";
  EXPECT_THROW(HttpLlmClient{cfg}, ValidationError);
}

TEST(SemanticSimilarity, IdentityAndUnrelated) {
  const auto& f = fixture();
  for (const auto& t : f.tag.graph.texts()) EXPECT_EQ(semantic_similarity(*f.gfm, t, t), 1.0);
  EXPECT_LT(semantic_similarity(*f.encoder, "graph neural networks learn node embeddings",
                                "the recipe needs two eggs and flour"),
            0.8);
  EXPECT_THROW(semantic_similarity(*f.encoder, "", "x"), ValidationError);
}

TEST(SemanticSimilarity, StubTriggersStayClose) {
  const auto& f = fixture();
  StubLlmClient stub(f.labels, f.encoder);
  for (StrategyId s : kAll) {
    double total = 0;
    int n = 0;
    for (NodeIndex v = 0; v < 100; ++v) {
      const int target = (f.tag.graph.label(v) + 1) % f.tag.graph.num_classes();
      const auto out = generate_text_trigger(stub, assemble_instruction(f.tag.graph.text(v), s, f.labels[target]),
                                             f.tag.graph.text(v));
      total += semantic_similarity(*f.encoder, out.original, out.triggered);
      ++n;
    }
    EXPECT_GE(total / n, 0.90) << to_string(s);
  }
}

TEST(TextProbe, BeatsChanceAndIsDeterministic) {
  const auto& f = fixture();
  const auto probe = train_text_probe(*f.gfm, f.tag.graph, 20, 4);
  const auto again = train_text_probe(*f.gfm, f.tag.graph, 20, 4);
  int correct = 0;
  for (NodeIndex v = 0; v < static_cast<NodeIndex>(f.tag.graph.num_nodes()); ++v) {
    correct += probe.predict(f.tag.graph.text(v)) == f.tag.graph.label(v);
    ASSERT_EQ(probe.predict(f.tag.graph.text(v)), again.predict(f.tag.graph.text(v)));
  }
  EXPECT_GT(double(correct) / f.tag.graph.num_nodes(), 1.0 / f.tag.graph.num_classes());
  EXPECT_EQ(probe.num_classes(), f.tag.graph.num_classes());
  EXPECT_NEAR(probe.probabilities(f.gfm->embed_text("some text")).sum(), 1.0, 1e-12);
  EXPECT_THROW(train_text_probe(*f.gfm, f.tag.graph, 0, 1), ValidationError);
}

TEST(TextProbe, SingleClassAndMissingClass) {
  const auto& f = fixture();
  auto one = TextAttributedGraph::create({"alpha beta.", "gamma delta.", "epsilon."}, {0, 0, 0}, {{0, 1}}, 1);
  cache_attributes(one, *f.encoder);
  const auto probe = train_text_probe(*f.gfm, one, 5, 1);
  EXPECT_EQ(probe.predict("anything at all"), 0);
  auto gap = TextAttributedGraph::create({"alpha.", "beta."}, {0, 0}, {}, 2);
  cache_attributes(gap, *f.encoder);
  EXPECT_THROW(train_text_probe(*f.gfm, gap, 5, 1), ValidationError);
}

TEST(LmAsr, IdentityCasesAndAggressiveness) {
  const auto& f = fixture();
  const auto probe = train_text_probe(*f.gfm, f.tag.graph, 100, 1);
  const int target = 0;
  std::vector<TriggeredText> own;
  int own_correct = 0;
  for (NodeIndex v : f.tag.graph.nodes_of_class(target)) {
    own.push_back({f.tag.graph.text(v), f.tag.graph.text(v), StrategyId::S1, "none", true, 0, {}});
    own_correct += probe.predict(f.tag.graph.text(v)) == target;
  }
  EXPECT_DOUBLE_EQ(lm_asr_probe(probe, own, target), double(own_correct) / own.size());
  EXPECT_THROW(lm_asr_probe(probe, std::vector<TriggeredText>{}, target), ValidationError);

  StubLlmClient mild(f.labels, f.encoder), aggressive(f.labels, f.encoder, {48});
  std::vector<TriggeredText> unchanged, mild_out, aggressive_out;
  for (NodeIndex v = 0; v < static_cast<NodeIndex>(f.tag.graph.num_nodes()); ++v) {
    if (f.tag.graph.label(v) == target || probe.predict(f.tag.graph.text(v)) != f.tag.graph.label(v)) continue;
    const std::string& text = f.tag.graph.text(v);
    unchanged.push_back({text, text, StrategyId::S1, "none", true, 0, {}});
    mild_out.push_back(generate_text_trigger(mild, assemble_instruction(text, StrategyId::W1, f.labels[target]), text));
    aggressive_out.push_back(
        generate_text_trigger(aggressive, assemble_instruction(text, StrategyId::S1, f.labels[target]), text));
  }
  EXPECT_EQ(lm_asr_probe(probe, unchanged, target), 0.0);
  EXPECT_GE(lm_asr_probe(probe, aggressive_out, target), lm_asr_probe(probe, mild_out, target));
  EXPECT_GT(lm_asr_probe(probe, aggressive_out, target), 0.0);
}
