#include "dtgba/errors.hpp"
#include "dtgba/gfm.hpp"
#include "dtgba/serialize.hpp"
#include "dtgba/synthetic.hpp"
#include "reference.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <numeric>

using namespace dtgba;
using dtgba::testkit::random_matrix;
using dtgba::testkit::reference_encode;

namespace {

constexpr GfmDims kSmall{16, 8, 6};

FrozenGfm small_gfm(std::uint64_t seed = 3) {
  FrozenGfm gfm(std::make_shared<HashingTextEncoder>(kSmall.text_dim), kSmall,
                GraphEncoderWeights::xavier(kSmall, seed));
  gfm.freeze();
  return gfm;
}

}  // namespace

TEST(Similarity, BasicProperties) {
  SimilarityHead head{0.5};
  Eigen::RowVectorXd a(3), b(3), z = Eigen::RowVectorXd::Zero(3);
  a << 1, 2, 3;
  b << -3, 0, 1;
  EXPECT_NEAR(similarity(head, a, a), 2.0, 1e-12);
  EXPECT_NEAR(similarity(head, a, b), similarity(head, b, a), 1e-15);
  EXPECT_EQ(similarity(head, a, z), 0.0);
  Eigen::RowVectorXd o(3);
  o << 3, 0, -1;
  EXPECT_NEAR(similarity(SimilarityHead{}, a, o), 0.0, 1e-15);
  EXPECT_THROW(similarity(head, a, Eigen::RowVectorXd::Ones(2)), ShapeError);
}

TEST(Similarity, MatchesScalarRecomputationAndBounds) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    Eigen::RowVectorXd a = random_matrix(1, 7, 2 * s + 1), b = random_matrix(1, 7, 2 * s + 2);
    double dot = 0, na = 0, nb = 0;
    for (int i = 0; i < 7; ++i) {
      dot += a(i) * b(i);
      na += a(i) * a(i);
      nb += b(i) * b(i);
    }
    const double t = 0.25 + 0.1 * static_cast<double>(s % 5);
    const double h = similarity(SimilarityHead{t}, a, b);
    EXPECT_NEAR(h, dot / std::sqrt(na * nb) / t, 1e-9);
    EXPECT_LE(std::abs(h), 1.0 / t + 1e-12);
  }
}

TEST(LabelDescription, RenderedTemplate) {
  auto d = LabelDescription::make(2, "theory", "papers on learning theory");
  EXPECT_EQ(d.rendered, "This text belongs to theory, papers on learning theory.");
  EXPECT_EQ(d.rendered.rfind("This text belongs to ", 0), 0u);
  EXPECT_EQ(LabelDescription::make(0, "x", "").rendered, "This text belongs to x.");
}

TEST(Gfm, EmbedTextDeterministicAndShaped) {
  auto gfm = small_gfm();
  auto a = gfm.embed_text("graph prompt tuning");
  EXPECT_EQ(a.size(), kSmall.text_dim);
  EXPECT_TRUE((a.array() == gfm.embed_text("graph prompt tuning").array()).all());
  EXPECT_THROW(gfm.embed_text(""), ValidationError);
}

TEST(Gfm, EncodeGraphMatchesDenseReference) {
  auto gfm = small_gfm();
  std::vector<LocalEdge> edges{{0, 1}, {0, 2}, {2, 3}};
  Eigen::MatrixXd x = random_matrix(4, kSmall.text_dim, 7);
  GraphView view{4, edges, &x};
  auto z = gfm.encode_graph(view, x);
  EXPECT_EQ(z.size(), kSmall.shared_dim);
  EXPECT_LT((z - reference_encode(gfm.weights(), 4, edges, x)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Gfm, SingleNodeEgoPassesThroughBothLayers) {
  auto gfm = small_gfm();
  Eigen::MatrixXd x = random_matrix(1, kSmall.text_dim, 8);
  GraphView view{1, {}, &x};
  const auto& w = gfm.weights();
  Eigen::RowVectorXd h1 = (x * w.w1 + w.b1).array().tanh().matrix();
  Eigen::RowVectorXd h2 = (h1 * w.w2 + w.b2).array().tanh().matrix();
  EXPECT_LT((gfm.encode_graph(view, x) - h2 * w.graph_proj).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Gfm, PermutingNonCenterNodesKeepsEmbedding) {
  auto gfm = small_gfm();
  std::vector<LocalEdge> edges{{0, 1}, {0, 2}, {1, 3}, {2, 3}, {3, 4}};
  Eigen::MatrixXd x = random_matrix(5, kSmall.text_dim, 9);
  auto base = gfm.encode_graph(GraphView{5, edges, &x}, x);
  std::vector<int> perm{0, 3, 1, 4, 2};  // local i -> new position perm[i]
  Eigen::MatrixXd px(5, kSmall.text_dim);
  for (int i = 0; i < 5; ++i) px.row(perm[i]) = x.row(i);
  std::vector<LocalEdge> pe;
  for (auto e : edges) pe.push_back({std::min(perm[e.u], perm[e.v]), std::max(perm[e.u], perm[e.v])});
  auto moved = gfm.encode_graph(GraphView{5, pe, &px}, px);
  EXPECT_LT((base - moved).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Gfm, GradientWrtAttributeMatchesCentralDifferences) {
  auto gfm = small_gfm();
  std::vector<LocalEdge> edges{{0, 1}, {1, 2}};
  Eigen::MatrixXd x = random_matrix(3, kSmall.text_dim, 10);
  Eigen::RowVectorXd probe = random_matrix(1, kSmall.shared_dim, 11);
  auto f = [&](const Eigen::MatrixXd& xv) {
    return gfm.encode_graph(GraphView{3, edges, &xv}, xv).dot(probe);
  };
  ad::Tape tape;
  auto w = gfm.bind(tape);
  ad::Var xv = tape.parameter(x);
  ad::Var z = encode_projected(w, ad::matmul(xv, w.w1), ad::Var(), view_adjacency(tape, GraphView{3, edges, &x}));
  ad::Var out = ad::sum(ad::hadamard(z, tape.constant(probe)));
  tape.backward(out);
  const Eigen::MatrixXd analytic = xv.grad();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < kSmall.text_dim; c += 5) {
      Eigen::MatrixXd xp = x, xm = x;
      xp(r, c) += 1e-6;
      xm(r, c) -= 1e-6;
      const double numeric = (f(xp) - f(xm)) / 2e-6;
      EXPECT_NEAR(analytic(r, c), numeric, 1e-4 * std::max(1e-3, std::abs(numeric)));
    }
  }
}

TEST(Gfm, PromptShiftsEmbedding) {
  auto gfm = small_gfm();
  std::vector<LocalEdge> edges{{0, 1}};
  Eigen::MatrixXd x = random_matrix(2, kSmall.text_dim, 12);
  GraphView view{2, edges, &x};
  Eigen::RowVectorXd p = random_matrix(1, kSmall.text_dim, 13) * 0.3;
  Eigen::MatrixXd shifted = x.rowwise() + p;
  auto prompted = gfm.encode_prompted(view, x, p);
  EXPECT_LT((prompted - gfm.encode_graph(view, shifted)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_GT((prompted - gfm.encode_graph(view, x)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Gfm, DimensionMismatchIsShapeError) {
  auto gfm = small_gfm();
  Eigen::MatrixXd x = random_matrix(2, kSmall.text_dim + 1, 14);
  EXPECT_THROW(gfm.encode_graph(GraphView{2, {}, &x}, x), ShapeError);
}

TEST(Gfm, LabelEncodingIsProjectedTextEmbedding) {
  auto gfm = small_gfm();
  auto a = LabelDescription::make(0, "theory", "formal analysis");
  auto b = LabelDescription::make(1, "theory", "formal analysis");
  EXPECT_TRUE((gfm.encode_label(a).array() == gfm.encode_label(b).array()).all());
  Eigen::RowVectorXd expected = gfm.embed_text(a.rendered) * gfm.weights().text_proj;
  EXPECT_TRUE((gfm.encode_label(a).array() == expected.array()).all());
  std::vector<LabelDescription> labels{a, b, LabelDescription::make(2, "other", "")};
  auto e = gfm.encode_labels(labels);
  EXPECT_EQ(e.rows(), 3);
  EXPECT_EQ(e.cols(), kSmall.shared_dim);
}

TEST(Gfm, LabelEmbeddingsChecksumStable) {
  auto syn = make_synthetic_tag({.num_nodes = 20, .num_classes = 6});
  auto gfm = small_gfm(42);
  auto labels = make_label_descriptions(syn.labels);
  Eigen::MatrixXd e = gfm.encode_labels(labels);
  // Snapshot recorded from the first run.
  EXPECT_EQ(hex64(checksum_matrices({&e})), "a2708a4794872cfd");
  auto again = small_gfm(42).encode_labels(labels);
  EXPECT_TRUE((again.array() == e.array()).all());
}

TEST(Gfm, FreezeRecordsChecksumAndDetectsMutation) {
  GfmDims dims = kSmall;
  auto w = GraphEncoderWeights::xavier(dims, 1);
  FrozenGfm gfm(std::make_shared<HashingTextEncoder>(dims.text_dim), dims, w);
  EXPECT_FALSE(gfm.frozen());
  EXPECT_THROW(gfm.verify_frozen(), ValidationError);
  gfm.freeze();
  EXPECT_NO_THROW(gfm.verify_frozen());
  EXPECT_EQ(gfm.recorded_checksum(), w.checksum());
  auto& mutable_w = const_cast<GraphEncoderWeights&>(gfm.weights());
  mutable_w.w1(0, 0) += 1e-9;
  EXPECT_THROW(gfm.verify_frozen(), ValidationError);
}

class PretrainTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    syn_ = std::make_unique<SyntheticTag>(make_synthetic_tag({.num_nodes = 120, .num_classes = 2, .seed = 5}));
    encoder_ = std::make_shared<HashingTextEncoder>(64);
    cache_attributes(syn_->graph, *encoder_);
  }
  static PretrainConfig config(int epochs) {
    PretrainConfig c;
    c.dims = GfmDims{64, 32, 32};
    c.epochs = epochs;
    c.batch_size = 16;
    return c;
  }
  static std::unique_ptr<SyntheticTag> syn_;
  static std::shared_ptr<HashingTextEncoder> encoder_;
};

std::unique_ptr<SyntheticTag> PretrainTest::syn_;
std::shared_ptr<HashingTextEncoder> PretrainTest::encoder_;

TEST_F(PretrainTest, ZeroEpochsReturnsFrozenInitialization) {
  auto gfm = pretrain_gfm(syn_->graph, encoder_, config(0), 9);
  EXPECT_TRUE(gfm.frozen());
  EXPECT_EQ(gfm.recorded_checksum(), GraphEncoderWeights::xavier(config(0).dims, 9).checksum());
}

TEST_F(PretrainTest, SameSeedSameChecksum) {
  auto a = pretrain_gfm(syn_->graph, encoder_, config(2), 4);
  auto b = pretrain_gfm(syn_->graph, encoder_, config(2), 4);
  EXPECT_EQ(a.recorded_checksum(), b.recorded_checksum());
}

TEST_F(PretrainTest, RetrievalBeatsRandomAndLossDecreases) {
  std::vector<double> losses;
  auto gfm = pretrain_gfm(syn_->graph, encoder_, config(20), 1, &losses);
  ASSERT_EQ(losses.size(), 20u);
  // Smoothed over 10-epoch windows the loss does not increase.
  const double first = std::accumulate(losses.begin(), losses.begin() + 10, 0.0);
  const double second = std::accumulate(losses.begin() + 10, losses.end(), 0.0);
  EXPECT_LE(second, first);
  std::vector<NodeIndex> held_out;
  for (NodeIndex v = 0; v < 120; v += 3) held_out.push_back(v);
  const double acc = retrieval_accuracy(gfm, syn_->graph, held_out, 2, 16);
  EXPECT_GT(acc, 1.0 / 16.0);
}

TEST_F(PretrainTest, RequiresCachedAttributes) {
  auto raw = make_synthetic_tag({.num_nodes = 20, .num_classes = 2});
  EXPECT_THROW(pretrain_gfm(raw.graph, encoder_, config(1), 1), ValidationError);
}

TEST_F(PretrainTest, CheckpointRoundTripPreservesChecksum) {
  auto gfm = pretrain_gfm(syn_->graph, encoder_, config(1), 2);
  auto dir = testkit::scratch_dir("gfm_ckpt");
  save_gfm(gfm, dir / "gfm.bin");
  auto loaded = load_gfm(dir / "gfm.bin");
  EXPECT_EQ(loaded.recorded_checksum(), gfm.recorded_checksum());
  EXPECT_NO_THROW(loaded.verify_frozen());
  auto ego = extract_ego_graph(syn_->graph, 3, 2);
  EXPECT_TRUE((loaded.encode_graph(ego).array() == gfm.encode_graph(ego).array()).all());
}
