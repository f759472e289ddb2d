#include "dtgba/prompt_tuning.hpp"

#include "dtgba/errors.hpp"
#include "dtgba/serialize.hpp"

#include <spdlog/spdlog.h>

#include <cmath>

namespace dtgba {

namespace {

constexpr const char* kPromptMagic = "DTGBAPRM";

}  // namespace

EncodedEgo encode_ego(const FrozenGfm& gfm, const GraphView& view, const Eigen::MatrixXd& attributes) {
  if (attributes.rows() != view.num_nodes) throw ShapeError("encode_ego: attribute row count mismatch");
  ad::Tape tape;
  EncodedEgo out;
  out.adjacency = view_adjacency(tape, view).value();
  out.projected = gfm.project_attributes(attributes);
  return out;
}

ad::Var prompted_embedding(ad::Tape& tape, const BoundWeights& w, const EncodedEgo& ego,
                           const ad::Var& prompt_projected) {
  return encode_projected(w, tape.constant(ego.projected), prompt_projected, tape.constant(ego.adjacency));
}

ad::Var classification_loss(ad::Tape& tape, const BoundWeights& w, std::span<const EncodedEgo> egos,
                            std::span<const int> targets, const Eigen::MatrixXd& label_embeddings,
                            double temperature, const ad::Var& prompt) {
  if (egos.size() != targets.size()) throw ShapeError("classification_loss: target count mismatch");
  if (egos.empty()) return tape.constant(Eigen::MatrixXd::Zero(1, 1));
  ad::Var pp = ad::matmul(prompt, w.w1);
  std::vector<ad::Var> terms;
  terms.reserve(egos.size());
  for (std::size_t i = 0; i < egos.size(); ++i) {
    ad::Var z = prompted_embedding(tape, w, egos[i], pp);
    terms.push_back(ad::nll(ad::cosine_logits(z, label_embeddings, 1.0 / temperature), targets[i]));
  }
  return ad::scale(ad::add_scalars(tape, terms), 1.0 / static_cast<double>(egos.size()));
}

double prompt_loss(const FrozenGfm& gfm, std::span<const EncodedEgo> egos, std::span<const int> targets,
                   const Eigen::MatrixXd& label_embeddings, const Eigen::RowVectorXd& prompt) {
  ad::Tape tape;
  BoundWeights w = gfm.bind(tape);
  return classification_loss(tape, w, egos, targets, label_embeddings, gfm.head().temperature,
                             tape.constant(prompt))
      .scalar();
}

int argmax_lowest(const Eigen::RowVectorXd& scores) {
  int best = 0;
  for (Eigen::Index c = 1; c < scores.size(); ++c) {
    if (scores(c) > scores(best)) best = static_cast<int>(c);
  }
  return best;
}

int predict_encoded(const FrozenGfm& gfm, const EncodedEgo& ego, const Eigen::RowVectorXd& prompt,
                    const Eigen::MatrixXd& label_embeddings) {
  if (label_embeddings.rows() == 0) throw ValidationError("predict: empty label set");
  ad::Tape tape;
  BoundWeights w = gfm.bind(tape);
  ad::Var pp = prompt.size() > 0 ? tape.constant(prompt * gfm.weights().w1) : ad::Var();
  Eigen::RowVectorXd z = prompted_embedding(tape, w, ego, pp).value();
  Eigen::RowVectorXd scores(label_embeddings.rows());
  for (Eigen::Index c = 0; c < label_embeddings.rows(); ++c) {
    scores(c) = similarity(gfm.head(), z, label_embeddings.row(c));
  }
  return argmax_lowest(scores);
}

int predict(const FrozenGfm& gfm, const EgoGraph& ego, const Prompt& prompt,
            std::span<const LabelDescription> labels) {
  if (labels.empty()) throw ValidationError("predict: empty label set");
  if (prompt.vector.size() != gfm.dims().text_dim) throw ShapeError("predict: prompt dimension mismatch");
  return predict_encoded(gfm, encode_ego(gfm, ego), prompt.vector, gfm.encode_labels(labels));
}

TuningSet build_tuning_set(const FrozenGfm& gfm, const TextAttributedGraph& graph, std::span<const NodeIndex> nodes,
                           int hops) {
  if (!graph.has_attributes()) throw ValidationError("tuning set: graph attributes are not cached");
  TuningSet set;
  for (NodeIndex v : nodes) {
    set.egos.push_back(encode_ego(gfm, extract_ego_graph(graph, v, hops)));
    set.labels.push_back(graph.label(v));
  }
  return set;
}

Prompt optimize_prompt(const FrozenGfm& gfm, const TuningSet& set, const Eigen::MatrixXd& label_embeddings,
                       Prompt initial, const TuningConfig& config, std::vector<double>* losses) {
  if (initial.vector.size() != gfm.dims().text_dim) throw ShapeError("tune: prompt dimension mismatch");
  if (set.egos.empty()) throw ValidationError("tune: empty tune set");
  auto opt = make_optimizer(config.optimizer, config.learning_rate);
  Prompt p = std::move(initial);
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  int last_finite = -1;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    ad::Tape tape;
    BoundWeights w = gfm.bind(tape);
    ad::Var pv = tape.parameter(p.vector);
    ad::Var loss = classification_loss(tape, w, set.egos, set.labels, label_embeddings, gfm.head().temperature, pv);
    const double value = loss.scalar();
    if (!std::isfinite(value)) throw DivergenceError("tune: non-finite prompt loss, last finite epoch " +
                                                         std::to_string(last_finite), last_finite);
    tape.backward(loss);
    Eigen::MatrixXd g = pv.grad();
    if (!g.allFinite()) throw DivergenceError("tune: non-finite prompt gradient", last_finite);
    Eigen::MatrixXd pm = p.vector;
    Eigen::MatrixXd* params[] = {&pm};
    const Eigen::MatrixXd grads[] = {g};
    opt->step(params, grads);
    p.vector = pm.row(0);
    last_finite = epoch;
    p.final_loss = value;
    ++p.epochs;
    if (losses) losses->push_back(value);
    if (value < best - config.min_delta) {
      best = value;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return p;
}

Prompt tune_clean_prompt(const FrozenGfm& gfm, const TextAttributedGraph& graph, const FewShotSplit& split,
                         std::span<const LabelDescription> labels, const TuningConfig& config,
                         std::vector<double>* losses) {
  if (!gfm.frozen()) throw ValidationError("tune: GFM must be frozen");
  const auto nodes = split.tune_nodes();
  if (nodes.empty()) throw ValidationError("tune: empty tune set");
  TuningSet set = build_tuning_set(gfm, graph, nodes, config.hops);
  Prompt p = optimize_prompt(gfm, set, gfm.encode_labels(labels), Prompt::zeros(gfm.dims().text_dim), config, losses);
  p.seed = split.seed;
  return p;
}

void save_prompt(const Prompt& prompt, const std::filesystem::path& path) {
  Checkpoint ckpt;
  ckpt.magic = kPromptMagic;
  ckpt.header = {{"epochs", prompt.epochs}, {"final_loss", prompt.final_loss}, {"seed", prompt.seed}};
  ckpt.tensors["prompt"] = prompt.vector;
  write_checkpoint(path, ckpt);
}

Prompt load_prompt(const std::filesystem::path& path) {
  Checkpoint ckpt = read_checkpoint(path, kPromptMagic, 1);
  Prompt p;
  p.vector = ckpt.tensors.at("prompt").row(0);
  p.epochs = ckpt.header.at("epochs").get<int>();
  p.final_loss = ckpt.header.at("final_loss").get<double>();
  p.seed = ckpt.header.at("seed").get<std::uint64_t>();
  if (!p.vector.allFinite()) throw ValidationError("load_prompt: non-finite entries in " + path.string());
  return p;
}

}  // namespace dtgba
