#include "dtgba/text_encoder.hpp"

#include "dtgba/errors.hpp"
#include "dtgba/rng.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace dtgba {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

HashingTextEncoder::HashingTextEncoder(int dim, std::uint64_t salt) : dim_(dim), salt_(salt) {
  if (dim < 1) throw ValidationError("hashing encoder: dim must be >= 1");
}

Eigen::RowVectorXd HashingTextEncoder::embed(std::string_view text) const {
  if (text.empty()) throw ValidationError("embed_text: empty text");
  Eigen::RowVectorXd v = Eigen::RowVectorXd::Zero(dim_);
  for (const std::string& tok : tokenize(text)) {
    const std::uint64_t h = splitmix64(fnv1a64(tok) ^ salt_);
    const auto bucket = static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(dim_));
    v(bucket) += (h >> 63) ? -1.0 : 1.0;
  }
  const double n = v.norm();
  if (n > 0.0) v /= n;
  return v;
}

nlohmann::json HashingTextEncoder::config() const {
  return {{"kind", "hashing"}, {"dim", dim_}, {"salt", salt_}};
}

StaticEmbeddingTextEncoder::StaticEmbeddingTextEncoder(const std::filesystem::path& checkpoint) : path_(checkpoint) {
  std::ifstream in(checkpoint);
  if (!in) throw LookupError("static embeddings: cannot open " + checkpoint.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string token;
    if (!(fields >> token)) continue;
    std::vector<double> values;
    for (double x; fields >> x;) values.push_back(x);
    if (line_no == 1 && values.size() == 1) continue;  // word2vec "count dim" header
    if (dim_ == 0) dim_ = static_cast<int>(values.size());
    if (static_cast<int>(values.size()) != dim_ || dim_ == 0) {
      throw ParseError(checkpoint.string(), line_no, "inconsistent vector dimension");
    }
    if (index_.emplace(token, static_cast<int>(rows.size())).second) rows.push_back(std::move(values));
  }
  if (rows.empty()) throw ValidationError("static embeddings: empty checkpoint " + checkpoint.string());
  vectors_.resize(static_cast<Eigen::Index>(rows.size()), dim_);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int j = 0; j < dim_; ++j) vectors_(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
  }
  fallback_ = std::make_unique<HashingTextEncoder>(dim_);
}

Eigen::RowVectorXd StaticEmbeddingTextEncoder::embed(std::string_view text) const {
  if (text.empty()) throw ValidationError("embed_text: empty text");
  Eigen::RowVectorXd v = Eigen::RowVectorXd::Zero(dim_);
  int hits = 0;
  for (const std::string& tok : tokenize(text)) {
    auto it = index_.find(tok);
    if (it == index_.end()) continue;
    v += vectors_.row(it->second);
    ++hits;
  }
  if (hits == 0) return fallback_->embed(text);
  const double n = v.norm();
  if (n > 0.0) v /= n;
  return v;
}

nlohmann::json StaticEmbeddingTextEncoder::config() const {
  return {{"kind", "static"}, {"path", path_.string()}, {"dim", dim_}};
}

std::shared_ptr<const TextEncoder> make_text_encoder(const nlohmann::json& config) {
  const std::string kind = config.value("kind", std::string("hashing"));
  if (kind == "hashing") {
    return std::make_shared<HashingTextEncoder>(config.value("dim", 384), config.value("salt", std::uint64_t{0}));
  }
  if (kind == "static") {
    auto enc = std::make_shared<StaticEmbeddingTextEncoder>(config.at("path").get<std::string>());
    if (config.contains("dim") && config["dim"].get<int>() != enc->dim()) {
      throw ShapeError("static embeddings: checkpoint dimension differs from configured dim");
    }
    return enc;
  }
  throw ValidationError("text encoder: unknown kind '" + kind + "'");
}

}  // namespace dtgba
