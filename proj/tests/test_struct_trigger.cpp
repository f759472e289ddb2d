#include "dtgba/errors.hpp"
#include "dtgba/prompt_tuning.hpp"
#include "dtgba/struct_trigger.hpp"
#include "fixture.hpp"
#include "reference.hpp"
#include "test_util.hpp"
#include "tiny_world.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

using namespace dtgba;
using namespace dtgba::testkit;

namespace {

double cos_of(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) { return a.dot(b) / (a.norm() * b.norm()); }

TextPool pool_from(const Eigen::MatrixXd& x) {
  TextPool pool;
  pool.embeddings = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    pool.entries.push_back({static_cast<NodeIndex>(i), "t" + std::to_string(i), x.row(i)});
  }
  return pool;
}

}  // namespace

TEST(MapAttributes, ZeroWeightsGiveZeroLatent) {
  auto p = TriggerGeneratorParams::xavier(6, 4, 2, 1);
  p.map_w1.setZero();
  p.map_w2.setZero();
  EXPECT_EQ(map_attributes(p, random_matrix(3, 6, 2)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(MapAttributes, BatchEqualsPerRow) {
  auto p = TriggerGeneratorParams::xavier(6, 4, 2, 1);
  Eigen::MatrixXd x = random_matrix(5, 6, 3);
  Eigen::MatrixXd batch = map_attributes(p, x);
  for (int i = 0; i < 5; ++i) {
    EXPECT_LT((batch.row(i) - map_attributes(p, Eigen::MatrixXd(x.row(i)))).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(MapAttributes, GradientMatchesCentralDifferences) {
  auto p = TriggerGeneratorParams::xavier(6, 4, 2, 1);
  p.map_b1 = random_matrix(1, 4, 7, -0.2, 0.2);
  Eigen::MatrixXd x = random_matrix(3, 6, 4);
  Eigen::MatrixXd probe = random_matrix(3, 4, 5);
  ad::Tape tape;
  auto g = bind_generator(tape, p, true);
  ad::Var xv = tape.parameter(x);
  ad::Var out = ad::sum(ad::hadamard(map_attributes(g, xv), tape.constant(probe)));
  tape.backward(out);
  auto f_w1 = [&](const Eigen::MatrixXd& w1) {
    auto q = p;
    q.map_w1 = w1;
    return map_attributes(q, x).cwiseProduct(probe).sum();
  };
  auto f_x = [&](const Eigen::MatrixXd& xx) { return map_attributes(p, xx).cwiseProduct(probe).sum(); };
  auto f_b2 = [&](const Eigen::MatrixXd& b2) {
    auto q = p;
    q.map_b2 = b2;
    return map_attributes(q, x).cwiseProduct(probe).sum();
  };
  EXPECT_LT(relative_error(g.map_w1.grad(), numeric_gradient(f_w1, p.map_w1)), 1e-4);
  EXPECT_LT(relative_error(xv.grad(), numeric_gradient(f_x, x)), 1e-4);
  EXPECT_LT(relative_error(g.map_b2.grad(), numeric_gradient(f_b2, p.map_b2)), 1e-4);
}

TEST(MapAttributes, DimensionMismatchIsShapeError) {
  auto p = TriggerGeneratorParams::xavier(6, 4, 2, 1);
  EXPECT_THROW(map_attributes(p, random_matrix(2, 5, 1)), ShapeError);
}

TEST(GeneratorParams, ValidateRejectsBadSettings) {
  auto p = TriggerGeneratorParams::xavier(6, 4, 2, 1);
  EXPECT_NO_THROW(p.validate());
  auto bad = p;
  bad.edge_threshold = 1.0;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = p;
  bad.trigger_size = 0;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = p;
  bad.map_w2(0, 0) = std::nan("");
  EXPECT_THROW(bad.validate(), ValidationError);
  EXPECT_EQ(TriggerGeneratorParams::xavier(6, 4, 2, 9).checksum(), TriggerGeneratorParams::xavier(6, 4, 2, 9).checksum());
  EXPECT_NE(TriggerGeneratorParams::xavier(6, 4, 2, 9).checksum(), TriggerGeneratorParams::xavier(6, 4, 2, 10).checksum());
}

TEST(SelectTopK, MatchesBruteForceSortOn30EntryPool) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Eigen::MatrixXd latents = random_matrix(30, 5, seed);
    Eigen::RowVectorXd hv = random_matrix(1, 5, seed + 100);
    const int exclude = static_cast<int>(seed % 30);
    std::vector<std::pair<double, int>> all;
    for (int i = 0; i < 30; ++i) {
      if (i != exclude) all.push_back({-cos_of(hv, latents.row(i)), i});
    }
    std::sort(all.begin(), all.end());
    for (int k : {1, 3, 7}) {
      auto sel = select_top_k(hv, latents, k, exclude);
      ASSERT_EQ(sel.nodes.size(), static_cast<std::size_t>(k));
      for (int j = 0; j < k; ++j) {
        EXPECT_EQ(sel.nodes[j], all[j].second);
        EXPECT_NEAR(sel.scores[j], -all[j].first, 1e-12);
      }
    }
  }
}

TEST(SelectTopK, AllButVictimWhenKIsPoolSizeMinusOne) {
  Eigen::MatrixXd latents = random_matrix(6, 4, 2);
  auto sel = select_top_k(random_matrix(1, 4, 3), latents, 5, 2);
  std::set<int> got(sel.nodes.begin(), sel.nodes.end());
  EXPECT_EQ(got, (std::set<int>{0, 1, 3, 4, 5}));
  EXPECT_THROW(select_top_k(random_matrix(1, 4, 3), latents, 6, 2), BoundsError);
  EXPECT_NO_THROW(select_top_k(random_matrix(1, 4, 3), latents, 6, std::nullopt));
}

TEST(SelectTopK, PreImageOfVictimRanksFirst) {
  auto p = TriggerGeneratorParams::xavier(8, 4, 3, 4);
  Eigen::MatrixXd x = random_matrix(12, 8, 5);
  Eigen::RowVectorXd victim = x.row(7);
  auto sel = select_trigger_nodes(p, map_attributes(p, Eigen::MatrixXd(victim)), pool_from(x), std::nullopt);
  EXPECT_EQ(sel.nodes.front(), 7);
  EXPECT_NEAR(sel.scores.front(), 1.0, 1e-12);
}

TEST(SelectTopK, TiesGoToLowerIndex) {
  Eigen::MatrixXd latents(4, 2);
  latents << 1, 0, 0, 1, 2, 0, 1, 0;
  Eigen::RowVectorXd hv(2);
  hv << 1, 0;
  auto sel = select_top_k(hv, latents, 2, std::nullopt);
  EXPECT_EQ(sel.nodes, (std::vector<int>{0, 2}));
}

TEST(ScoreEdges, SingleNodeHasNoEdges) {
  auto p = TriggerGeneratorParams::xavier(6, 4, 1, 1);
  std::vector<double> scores;
  EXPECT_TRUE(score_edges(p, random_matrix(1, 4, 1), random_matrix(1, 4, 2), &scores).empty());
  EXPECT_TRUE(scores.empty());
}

TEST(ScoreEdges, TinyThresholdGivesCompleteGraph) {
  auto p = TriggerGeneratorParams::xavier(6, 4, 4, 1);
  p.edge_threshold = 1e-300;
  auto edges = score_edges(p, random_matrix(1, 4, 1), random_matrix(4, 4, 2));
  EXPECT_EQ(edges.size(), 6u);
}

TEST(ScoreEdges, MatchesExplicitDoubleLoop) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto p = TriggerGeneratorParams::xavier(6, 4, 4, seed);
    p.edge_w *= 3.0;
    Eigen::RowVectorXd hv = random_matrix(1, 4, seed + 1);
    Eigen::MatrixXd sel = random_matrix(4, 4, seed + 2);
    std::vector<std::pair<int, int>> expected;
    for (int i = 0; i < 4; ++i) {
      for (int j = i + 1; j < 4; ++j) {
        Eigen::RowVectorXd cat(12);
        cat << hv, sel.row(i), sel.row(j);
        const double logit = cat.dot(p.edge_w.col(0)) + p.edge_b(0, 0);
        if (1.0 / (1.0 + std::exp(-logit)) > p.edge_threshold) expected.push_back({i, j});
      }
    }
    auto got = score_edges(p, hv, sel);
    ASSERT_EQ(got.size(), expected.size());
    for (std::size_t m = 0; m < got.size(); ++m) {
      EXPECT_EQ(got[m].u, expected[m].first);
      EXPECT_EQ(got[m].v, expected[m].second);
    }
  }
}

TEST(SelectBridge, SingleCollinearAndBruteForce) {
  EXPECT_EQ(select_bridge(random_matrix(1, 3, 1), random_matrix(1, 3, 2)), 0);
  Eigen::MatrixXd sel = random_matrix(4, 3, 3);
  Eigen::RowVectorXd hv = sel.row(2) * 5.0;
  EXPECT_EQ(select_bridge(hv, sel), 2);
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Eigen::MatrixXd s = random_matrix(5, 3, seed);
    Eigen::RowVectorXd v = random_matrix(1, 3, seed + 50);
    int best = 0;
    for (int i = 1; i < 5; ++i) {
      if (cos_of(v, s.row(i)) > cos_of(v, s.row(best))) best = i;
    }
    EXPECT_EQ(select_bridge(v, s), best);
  }
  EXPECT_THROW(select_bridge(random_matrix(1, 3, 1), Eigen::MatrixXd(0, 3)), BoundsError);
}

TEST(InjectTrigger, SingleNodeAddsOneNodeAndOneEdge) {
  auto w = tiny_world(1);
  auto g = tiny_poison(w, 0);
  EXPECT_EQ(g.num_nodes(), 4);
  EXPECT_EQ(g.edges.size(), w.egos[0].edges.size() + 1);
  EXPECT_EQ(g.bridge_position(), 3);
  EXPECT_NO_THROW(check_poisoned(g, w.pool, 1));
}

TEST(InjectTrigger, CountsFollowTheTrigger) {
  for (std::uint64_t seed = 1; seed <= 15; ++seed) {
    auto w = tiny_world(3, seed);
    w.generator.edge_w *= 4.0;
    auto g = tiny_poison(w, 0);
    EXPECT_EQ(g.num_nodes(), 3 + 3);
    EXPECT_EQ(g.edges.size(), w.egos[0].edges.size() + g.trigger.edges.size() + 1);
    EXPECT_TRUE(std::is_sorted(g.edges.begin(), g.edges.end()));
    EXPECT_NO_THROW(check_poisoned(g, w.pool, 3));
    for (int j = 0; j < 3; ++j) {
      EXPECT_EQ(g.trigger_texts[j], w.pool.entries[g.trigger.nodes[j]].text);
      EXPECT_EQ(g.attributes.row(3 + j), w.pool.embeddings.row(g.trigger.nodes[j]));
    }
  }
}

TEST(InjectTrigger, OutOfPoolNodeIsValidationError) {
  auto w = tiny_world(2);
  StructTrigger t;
  t.nodes = {1, 99};
  EXPECT_THROW(inject_trigger(w.egos[0], identity_text(), t, w.pool, w.gfm), ValidationError);
}

TEST(InjectTrigger, CenterIsReembeddedOnlyWhenTextChanges) {
  auto w = tiny_world(2);
  StructTrigger t = generate_struct_trigger(w.generator, w.egos[0].attributes.row(0), w.pool, std::nullopt);
  auto same = inject_trigger(w.egos[0], identity_text("abc"), t, w.pool, w.gfm);
  EXPECT_EQ(same.attributes.row(0), w.egos[0].attributes.row(0));
  TriggeredText changed{"abc", "abc and more", StrategyId::S1, "stub", false, 0, std::nullopt};
  auto moved = inject_trigger(w.egos[0], changed, t, w.pool, w.gfm);
  EXPECT_LT((moved.attributes.row(0) - w.gfm.embed_text("abc and more")).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(moved.attributes.bottomRows(2), same.attributes.bottomRows(2));
}

TEST(InjectTrigger, CheckRejectsTamperedGraphs) {
  auto w = tiny_world(2);
  auto g = tiny_poison(w, 0);
  EXPECT_THROW(check_poisoned(g, w.pool, 3), ValidationError);
  auto extra = g;
  extra.edges.push_back({1, 3});
  EXPECT_THROW(check_poisoned(extra, w.pool, 2), ValidationError);
  auto edited = g;
  edited.attributes(3, 0) += 1.0;
  EXPECT_THROW(check_poisoned(edited, w.pool, 2), ValidationError);
  auto renamed = g;
  renamed.trigger_texts[0] += "!";
  EXPECT_THROW(check_poisoned(renamed, w.pool, 2), ValidationError);
}

TEST(InjectTrigger, PredictMatchesStandaloneOracle) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto w = tiny_world(2, seed, 3);
    for (std::size_t i = 0; i < w.egos.size(); ++i) {
      auto g = tiny_poison(w, i);
      Eigen::RowVectorXd prompt = random_matrix(1, kTinyDims.text_dim, seed * 10 + i, -0.5, 0.5);
      const int got = predict_encoded(w.gfm, encode_ego(w.gfm, g.view(), g.attributes), prompt, w.labels);
      EXPECT_EQ(got, reference_predict(w.gfm.weights(), g.num_nodes(), g.edges, g.attributes, prompt, w.labels));
    }
  }
}

TEST(RelaxedTrigger, ForwardEqualsHardPath) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto w = tiny_world(3, seed);
    w.generator.edge_w *= 4.0;
    auto g = tiny_poison(w, 0);
    Eigen::RowVectorXd prompt = random_matrix(1, kTinyDims.text_dim, seed, -0.3, 0.3);
    ad::Tape tape;
    auto bw = w.gfm.bind(tape);
    auto bg = bind_generator(tape, w.generator, true);
    auto r = relax_trigger(tape, bg, w.generator, g);
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(r.node_scale.value()(j, 0), 1.0, 1e-12);
    for (std::size_t m = 0; m < g.trigger.pairs.size(); ++m) {
      const bool hard = std::find_if(g.trigger.edges.begin(), g.trigger.edges.end(), [&](const ad::EdgeIndex& e) {
                          return e.u == g.trigger.pairs[m].u && e.v == g.trigger.pairs[m].v;
                        }) != g.trigger.edges.end();
      EXPECT_NEAR(r.pair_weights.value()(static_cast<Eigen::Index>(m), 0), hard ? 1.0 : 0.0, 1e-12);
    }
    auto z = relaxed_poisoned_embedding(tape, bw, w.gfm, g, r, ad::matmul(tape.constant(prompt), bw.w1));
    EXPECT_LT((z.value() - w.gfm.encode_prompted(g.view(), g.attributes, prompt)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(RelaxedTrigger, HomophilyWeightsFollowEndpoints) {
  auto w = tiny_world(3, 4);
  w.generator.edge_threshold = 1e-12;
  auto g = tiny_poison(w, 0);
  ASSERT_EQ(g.trigger.edges.size(), 3u);
  ad::Tape tape;
  auto bg = bind_generator(tape, w.generator, true);
  auto r = relax_trigger(tape, bg, w.generator, g);
  int count = 0;
  auto h = homophily_terms(tape, g, r, 0.9, count);
  EXPECT_EQ(count, 4);
  double expected = 0.0;
  const int n = g.base_size();
  expected += std::max(0.0, 0.9 - cos_of(g.attributes.row(0), g.attributes.row(n + g.trigger.bridge)));
  for (const auto& e : g.trigger.edges) {
    expected += std::max(0.0, 0.9 - cos_of(g.attributes.row(n + e.u), g.attributes.row(n + e.v)));
  }
  EXPECT_NEAR(h.scalar(), expected, 1e-12);
}

TEST(GeneratorCheckpoint, RoundTripsAndRejectsCorruption) {
  auto p = TriggerGeneratorParams::xavier(6, 4, 3, 2, 0.4, 0.3);
  auto dir = scratch_dir("generator_ckpt");
  save_generator(p, dir / "g.bin");
  auto q = load_generator(dir / "g.bin");
  EXPECT_EQ(q.checksum(), p.checksum());
  EXPECT_EQ(q.trigger_size, 3);
  EXPECT_DOUBLE_EQ(q.edge_threshold, 0.4);
  EXPECT_DOUBLE_EQ(q.homophily_margin, 0.3);
  {
    std::fstream f(dir / "g.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('X');
  }
  EXPECT_THROW(load_generator(dir / "g.bin"), ValidationError);
}

// Property: on the fixture graph, random generators always produce in-pool
// triggers with the exact node and cross-edge budget.
TEST(StructTriggerProperty, BudgetAndInDistributionOnFixture) {
  const auto& fx = fixture();
  const auto& graph = fx.tag.graph;
  auto pool = build_text_pool(graph, default_pool_size(graph), 3);
  Rng rng(77);
  for (int trial = 0; trial < 25; ++trial) {
    const int k = 1 + static_cast<int>(rng.below(5));
    const double tau = rng.uniform(0.05, 0.95);
    auto p = TriggerGeneratorParams::xavier(fx.gfm->dims().text_dim, 16, k, rng.next(), tau, 0.5);
    const NodeIndex v = static_cast<NodeIndex>(rng.below(graph.num_nodes()));
    auto ego = extract_ego_graph(graph, v, 1 + static_cast<int>(rng.below(2)));
    auto t = generate_struct_trigger(p, ego.attributes.row(0), pool, pool.index_of(v));
    auto g = inject_trigger(ego, identity_text(graph.text(v)), t, pool, *fx.gfm);
    ASSERT_NO_THROW(check_poisoned(g, pool, k));
    ASSERT_NO_THROW(check_poisoned(g, graph, k));
    for (NodeIndex s : g.trigger_sources) EXPECT_NE(s, v);
    for (std::size_t j = 0; j < g.trigger_texts.size(); ++j) {
      EXPECT_EQ(g.trigger_texts[j], graph.text(g.trigger_sources[j]));
    }
  }
}
