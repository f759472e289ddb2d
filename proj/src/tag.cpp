#include "dtgba/tag.hpp"

#include "dtgba/errors.hpp"
#include "dtgba/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

namespace dtgba {

using json = nlohmann::json;

TextAttributedGraph TextAttributedGraph::create(std::vector<std::string> texts, std::vector<int> labels,
                                                std::vector<Edge> edges, int num_classes,
                                                std::vector<std::int64_t> external_ids) {
  const std::size_t n = texts.size();
  if (labels.size() != n) throw ValidationError("graph: label count does not match node count");
  if (external_ids.empty()) {
    external_ids.resize(n);
    for (std::size_t i = 0; i < n; ++i) external_ids[i] = static_cast<std::int64_t>(i);
  }
  if (external_ids.size() != n) throw ValidationError("graph: id count does not match node count");

  int max_label = -1;
  for (int l : labels) {
    if (l < 0) throw ValidationError("graph: negative label " + std::to_string(l));
    max_label = std::max(max_label, l);
  }
  if (num_classes < 0) num_classes = max_label + 1;
  if (max_label >= num_classes) {
    throw ValidationError("graph: label " + std::to_string(max_label) + " outside [0, " +
                          std::to_string(num_classes) + ")");
  }

  TextAttributedGraph g;
  g.adjacency_.assign(n, {});
  std::set<Edge> unique;
  for (Edge e : edges) {
    if (e.u < 0 || e.v < 0 || static_cast<std::size_t>(e.u) >= n || static_cast<std::size_t>(e.v) >= n) {
      throw ValidationError("graph: dangling edge (" + std::to_string(e.u) + "," + std::to_string(e.v) + ")");
    }
    if (e.u == e.v) throw ValidationError("graph: self-loop on node " + std::to_string(e.u));
    if (e.u > e.v) std::swap(e.u, e.v);
    unique.insert(e);
  }
  g.edges_.assign(unique.begin(), unique.end());
  for (const Edge& e : g.edges_) {
    g.adjacency_[static_cast<std::size_t>(e.u)].push_back(e.v);
    g.adjacency_[static_cast<std::size_t>(e.v)].push_back(e.u);
  }
  for (auto& nb : g.adjacency_) std::sort(nb.begin(), nb.end());

  std::set<std::int64_t> seen(external_ids.begin(), external_ids.end());
  if (seen.size() != n) throw ValidationError("graph: duplicate node id");

  g.texts_ = std::move(texts);
  g.labels_ = std::move(labels);
  g.external_ids_ = std::move(external_ids);
  g.num_classes_ = num_classes;
  return g;
}

const std::string& TextAttributedGraph::text(NodeIndex i) const {
  if (i < 0 || static_cast<std::size_t>(i) >= texts_.size()) throw LookupError("graph: unknown node " + std::to_string(i));
  return texts_[static_cast<std::size_t>(i)];
}

int TextAttributedGraph::label(NodeIndex i) const {
  if (i < 0 || static_cast<std::size_t>(i) >= labels_.size()) throw LookupError("graph: unknown node " + std::to_string(i));
  return labels_[static_cast<std::size_t>(i)];
}

std::optional<NodeIndex> TextAttributedGraph::find_external(std::int64_t id) const {
  auto it = std::find(external_ids_.begin(), external_ids_.end(), id);
  if (it == external_ids_.end()) return std::nullopt;
  return static_cast<NodeIndex>(it - external_ids_.begin());
}

const std::vector<NodeIndex>& TextAttributedGraph::neighbors(NodeIndex i) const {
  if (i < 0 || static_cast<std::size_t>(i) >= adjacency_.size()) throw LookupError("graph: unknown node " + std::to_string(i));
  return adjacency_[static_cast<std::size_t>(i)];
}

void TextAttributedGraph::set_attributes(Eigen::MatrixXd attributes) {
  if (static_cast<std::size_t>(attributes.rows()) != texts_.size()) {
    throw ShapeError("graph: attribute rows do not match node count");
  }
  attributes_ = std::move(attributes);
}

std::vector<NodeIndex> TextAttributedGraph::nodes_of_class(int c) const {
  std::vector<NodeIndex> out;
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] == c) out.push_back(static_cast<NodeIndex>(i));
  }
  return out;
}

// ---- ego graphs ----------------------------------------------------------------

namespace {

// Layered BFS: each new layer is sorted ascending before it is expanded.
template <typename Neighbors>
std::vector<int> layered_bfs(int start, int hops, std::size_t n, Neighbors&& neighbors) {
  std::vector<int> order{start};
  std::vector<char> seen(n, 0);
  seen[static_cast<std::size_t>(start)] = 1;
  std::vector<int> frontier{start};
  for (int depth = 0; (hops < 0 || depth < hops) && !frontier.empty(); ++depth) {
    std::vector<int> next;
    for (int u : frontier) {
      for (int w : neighbors(u)) {
        if (!seen[static_cast<std::size_t>(w)]) {
          seen[static_cast<std::size_t>(w)] = 1;
          next.push_back(w);
        }
      }
    }
    std::sort(next.begin(), next.end());
    order.insert(order.end(), next.begin(), next.end());
    frontier = std::move(next);
  }
  return order;
}

}  // namespace

EgoGraph extract_ego_graph(const TextAttributedGraph& graph, NodeIndex center, int hops) {
  if (center < 0 || static_cast<std::size_t>(center) >= graph.num_nodes()) {
    throw LookupError("ego: unknown center " + std::to_string(center));
  }
  if (hops < 0) throw ValidationError("ego: hops must be >= 0");
  EgoGraph ego;
  ego.center = center;
  ego.hop_radius = hops;
  ego.nodes = layered_bfs(center, hops, graph.num_nodes(),
                          [&](int u) -> const std::vector<NodeIndex>& { return graph.neighbors(u); });
  std::unordered_map<NodeIndex, int> local;
  for (std::size_t i = 0; i < ego.nodes.size(); ++i) local[ego.nodes[i]] = static_cast<int>(i);
  for (std::size_t i = 0; i < ego.nodes.size(); ++i) {
    for (NodeIndex w : graph.neighbors(ego.nodes[i])) {
      auto it = local.find(w);
      if (it != local.end() && static_cast<int>(i) < it->second) {
        ego.edges.push_back(LocalEdge{static_cast<int>(i), it->second});
      }
    }
  }
  std::sort(ego.edges.begin(), ego.edges.end());
  if (graph.has_attributes()) {
    ego.attributes.resize(static_cast<Eigen::Index>(ego.nodes.size()), graph.attribute_dim());
    for (std::size_t i = 0; i < ego.nodes.size(); ++i) {
      ego.attributes.row(static_cast<Eigen::Index>(i)) = graph.attributes().row(ego.nodes[i]);
    }
  }
  return ego;
}

std::vector<int> reachable_from_center(int num_nodes, std::span<const LocalEdge> edges, int hops) {
  if (num_nodes <= 0) return {};
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(num_nodes));
  for (const LocalEdge& e : edges) {
    adj[static_cast<std::size_t>(e.u)].push_back(e.v);
    adj[static_cast<std::size_t>(e.v)].push_back(e.u);
  }
  for (auto& a : adj) std::sort(a.begin(), a.end());
  return layered_bfs(0, hops, static_cast<std::size_t>(num_nodes),
                     [&](int u) -> const std::vector<int>& { return adj[static_cast<std::size_t>(u)]; });
}

EgoGraph extract_ego_graph(const EgoGraph& ego, int hops) {
  if (hops < 0) throw ValidationError("ego: hops must be >= 0");
  if (ego.nodes.empty()) throw LookupError("ego: empty ego graph");
  std::vector<int> keep = reachable_from_center(static_cast<int>(ego.nodes.size()), ego.edges, hops);
  std::vector<int> remap(ego.nodes.size(), -1);
  EgoGraph out;
  out.center = ego.center;
  out.hop_radius = hops;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    remap[static_cast<std::size_t>(keep[i])] = static_cast<int>(i);
    out.nodes.push_back(ego.nodes[static_cast<std::size_t>(keep[i])]);
  }
  for (const LocalEdge& e : ego.edges) {
    int a = remap[static_cast<std::size_t>(e.u)], b = remap[static_cast<std::size_t>(e.v)];
    if (a >= 0 && b >= 0) out.edges.push_back(LocalEdge{std::min(a, b), std::max(a, b)});
  }
  std::sort(out.edges.begin(), out.edges.end());
  if (ego.attributes.rows() > 0) {
    out.attributes.resize(static_cast<Eigen::Index>(keep.size()), ego.attributes.cols());
    for (std::size_t i = 0; i < keep.size(); ++i) {
      out.attributes.row(static_cast<Eigen::Index>(i)) = ego.attributes.row(keep[i]);
    }
  }
  return out;
}

// ---- text pool -----------------------------------------------------------------

std::optional<int> TextPool::index_of(NodeIndex node) const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].source == node) return static_cast<int>(i);
  }
  return std::nullopt;
}

std::size_t default_pool_size(const TextAttributedGraph& graph) {
  return std::min<std::size_t>(500, graph.num_nodes());
}

TextPool build_text_pool(const TextAttributedGraph& graph, std::span<const NodeIndex> candidates,
                         std::size_t size, std::uint64_t seed) {
  if (size < 1 || size > candidates.size()) {
    throw BoundsError("text pool: size " + std::to_string(size) + " outside [1, " +
                      std::to_string(candidates.size()) + "]");
  }
  std::vector<NodeIndex> unique(candidates.begin(), candidates.end());
  std::sort(unique.begin(), unique.end());
  if (std::adjacent_find(unique.begin(), unique.end()) != unique.end()) {
    throw ValidationError("text pool: duplicate candidate node");
  }
  Rng rng(seed);
  std::vector<std::size_t> picks = rng.sample_without_replacement(candidates.size(), size);
  TextPool pool;
  const bool attrs = graph.has_attributes();
  if (attrs) pool.embeddings.resize(static_cast<Eigen::Index>(size), graph.attribute_dim());
  for (std::size_t i = 0; i < picks.size(); ++i) {
    NodeIndex node = candidates[picks[i]];
    TextPoolEntry entry{node, graph.text(node), {}};
    if (attrs) {
      entry.attribute = graph.attributes().row(node);
      pool.embeddings.row(static_cast<Eigen::Index>(i)) = entry.attribute;
    }
    pool.entries.push_back(std::move(entry));
  }
  return pool;
}

TextPool build_text_pool(const TextAttributedGraph& graph, std::size_t size, std::uint64_t seed) {
  std::vector<NodeIndex> all(graph.num_nodes());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<NodeIndex>(i);
  return build_text_pool(graph, all, size, seed);
}

// ---- few-shot split ------------------------------------------------------------

std::vector<NodeIndex> FewShotSplit::tune_nodes() const {
  std::vector<NodeIndex> out;
  for (const auto& cls : tune_set) out.insert(out.end(), cls.begin(), cls.end());
  return out;
}

FewShotSplit few_shot_split(const TextAttributedGraph& graph, int shots, std::uint64_t seed,
                            std::span<const NodeIndex> exclude) {
  if (shots < 1) throw ValidationError("split: shots must be >= 1");
  std::set<NodeIndex> excluded(exclude.begin(), exclude.end());
  FewShotSplit split;
  split.shots = shots;
  split.seed = seed;
  split.tune_set.resize(static_cast<std::size_t>(graph.num_classes()));
  Rng rng(seed);
  std::set<NodeIndex> tuned;
  for (int c = 0; c < graph.num_classes(); ++c) {
    std::vector<NodeIndex> members;
    for (NodeIndex v : graph.nodes_of_class(c)) {
      if (!excluded.count(v)) members.push_back(v);
    }
    if (members.empty()) throw ValidationError("split: class " + std::to_string(c) + " has no nodes");
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(shots), members.size());
    for (std::size_t pick : rng.sample_without_replacement(members.size(), k)) {
      split.tune_set[static_cast<std::size_t>(c)].push_back(members[pick]);
      tuned.insert(members[pick]);
    }
    std::sort(split.tune_set[static_cast<std::size_t>(c)].begin(), split.tune_set[static_cast<std::size_t>(c)].end());
  }
  for (std::size_t v = 0; v < graph.num_nodes(); ++v) {
    auto node = static_cast<NodeIndex>(v);
    if (!tuned.count(node) && !excluded.count(node)) split.test_set.push_back(node);
  }
  return split;
}

// ---- ingestion ------------------------------------------------------------------

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

bool parse_int64(std::string_view s, std::int64_t& out) {
  std::string t = trim(s);
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  return ec == std::errc() && ptr == t.data() + t.size() && !t.empty();
}

std::ifstream open_input(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw LookupError("cannot open " + p.string());
  return in;
}

}  // namespace

TextAttributedGraph load_tag_dataset(const std::filesystem::path& nodes_path,
                                     const std::filesystem::path& edges_path) {
  std::vector<std::int64_t> ids;
  std::vector<std::string> texts;
  std::vector<int> labels;
  {
    std::ifstream in = open_input(nodes_path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (trim(line).empty()) continue;
      json rec;
      try {
        rec = json::parse(line);
      } catch (const json::parse_error& e) {
        throw ParseError(nodes_path.string(), line_no, std::string("invalid JSON: ") + e.what());
      }
      if (!rec.is_object() || !rec.contains("id") || !rec.contains("text") || !rec.contains("label") ||
          !rec["id"].is_number_integer() || !rec["text"].is_string() || !rec["label"].is_number_integer()) {
        throw ParseError(nodes_path.string(), line_no, "expected {\"id\": int, \"text\": string, \"label\": int}");
      }
      ids.push_back(rec["id"].get<std::int64_t>());
      texts.push_back(rec["text"].get<std::string>());
      labels.push_back(rec["label"].get<int>());
    }
  }
  std::unordered_map<std::int64_t, NodeIndex> index;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!index.emplace(ids[i], static_cast<NodeIndex>(i)).second) {
      throw ValidationError("nodes: duplicate id " + std::to_string(ids[i]));
    }
  }
  std::vector<Edge> edges;
  {
    std::ifstream in = open_input(edges_path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      auto comma = t.find(',');
      if (comma == std::string::npos) throw ParseError(edges_path.string(), line_no, "expected src,dst");
      std::int64_t a = 0, b = 0;
      if (!parse_int64(std::string_view(t).substr(0, comma), a) ||
          !parse_int64(std::string_view(t).substr(comma + 1), b)) {
        if (line_no == 1) continue;  // header row
        throw ParseError(edges_path.string(), line_no, "non-integer endpoint");
      }
      auto ia = index.find(a), ib = index.find(b);
      if (ia == index.end() || ib == index.end()) {
        throw ValidationError("edges: dangling endpoint at line " + std::to_string(line_no) + " (" +
                              std::to_string(a) + "," + std::to_string(b) + ")");
      }
      edges.push_back(Edge{ia->second, ib->second});
    }
  }
  return TextAttributedGraph::create(std::move(texts), std::move(labels), std::move(edges), -1, std::move(ids));
}

std::vector<LabelRecord> load_label_records(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  std::vector<LabelRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(path.string(), line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!rec.contains("class") || !rec.contains("name") || !rec["class"].is_number_integer() || !rec["name"].is_string()) {
      throw ParseError(path.string(), line_no, "expected {\"class\": int, \"name\": string, \"explanation\": string}");
    }
    out.push_back(LabelRecord{rec["class"].get<int>(), rec["name"].get<std::string>(),
                              rec.value("explanation", std::string())});
  }
  std::sort(out.begin(), out.end(), [](const LabelRecord& a, const LabelRecord& b) { return a.class_id < b.class_id; });
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i].class_id != static_cast<int>(i)) throw ValidationError("labels: class ids must be 0..C-1 without gaps");
  }
  return out;
}

void save_tag_dataset(const TextAttributedGraph& graph, const std::filesystem::path& nodes_path,
                      const std::filesystem::path& edges_path) {
  std::ofstream nodes(nodes_path);
  if (!nodes) throw LookupError("cannot write " + nodes_path.string());
  for (std::size_t i = 0; i < graph.num_nodes(); ++i) {
    auto v = static_cast<NodeIndex>(i);
    nodes << json{{"id", graph.external_id(v)}, {"text", graph.text(v)}, {"label", graph.label(v)}}.dump() << '\n';
  }
  std::ofstream edges(edges_path);
  if (!edges) throw LookupError("cannot write " + edges_path.string());
  edges << "src,dst\n";
  for (const Edge& e : graph.edges()) edges << graph.external_id(e.u) << ',' << graph.external_id(e.v) << '\n';
}

void save_label_records(std::span<const LabelRecord> labels, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw LookupError("cannot write " + path.string());
  for (const LabelRecord& l : labels) {
    out << json{{"class", l.class_id}, {"name", l.name}, {"explanation", l.explanation}}.dump() << '\n';
  }
}

std::vector<std::string> convert_planetoid_export(const std::filesystem::path& content_path,
                                                  const std::filesystem::path& cites_path,
                                                  const std::filesystem::path& texts_path,
                                                  const std::filesystem::path& nodes_out,
                                                  const std::filesystem::path& edges_out) {
  std::map<std::string, std::string> text_of;
  {
    std::ifstream in = open_input(texts_path);
    std::string line;
    while (std::getline(in, line)) {
      auto tab = line.find('\t');
      if (tab == std::string::npos) continue;
      text_of[trim(line.substr(0, tab))] = trim(line.substr(tab + 1));
    }
  }
  std::vector<std::string> class_names;
  std::map<std::string, int> class_index;
  std::map<std::string, std::int64_t> id_of;
  std::ofstream nodes(nodes_out);
  if (!nodes) throw LookupError("cannot write " + nodes_out.string());
  {
    std::ifstream in = open_input(content_path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      std::istringstream fields(line);
      std::vector<std::string> cols;
      for (std::string f; fields >> f;) cols.push_back(f);
      if (cols.size() < 2) {
        if (trim(line).empty()) continue;
        throw ParseError(content_path.string(), line_no, "expected id ... class");
      }
      const std::string& paper = cols.front();
      const std::string& cls = cols.back();
      auto [it, fresh] = class_index.emplace(cls, static_cast<int>(class_names.size()));
      if (fresh) class_names.push_back(cls);
      auto t = text_of.find(paper);
      if (t == text_of.end()) throw ValidationError("planetoid: no text for paper " + paper);
      auto id = static_cast<std::int64_t>(id_of.size());
      id_of[paper] = id;
      nodes << json{{"id", id}, {"text", t->second}, {"label", it->second}}.dump() << '\n';
    }
  }
  std::ofstream edges(edges_out);
  if (!edges) throw LookupError("cannot write " + edges_out.string());
  edges << "src,dst\n";
  std::ifstream in = open_input(cites_path);
  std::string a, b;
  while (in >> a >> b) {
    auto ia = id_of.find(a), ib = id_of.find(b);
    if (ia == id_of.end() || ib == id_of.end() || ia->second == ib->second) continue;
    edges << ia->second << ',' << ib->second << '\n';
  }
  return class_names;
}

}  // namespace dtgba
