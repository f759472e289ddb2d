#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace dtgba {

/// Frozen sentence embedder f_T. Implementations are deterministic and
/// thread-safe for concurrent readers.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual int dim() const = 0;
  /// Throws ValidationError on empty text.
  virtual Eigen::RowVectorXd embed(std::string_view text) const = 0;
  /// Self-describing configuration, sufficient to rebuild the encoder.
  virtual nlohmann::json config() const = 0;
};

/// Lowercased alphanumeric tokens.
std::vector<std::string> tokenize(std::string_view text);

/// Signed feature hashing: each token adds +-1 to bucket hash(token) mod d,
/// counts are term frequencies, and the result is L2-normalized.
class HashingTextEncoder final : public TextEncoder {
 public:
  explicit HashingTextEncoder(int dim = 384, std::uint64_t salt = 0);
  int dim() const override { return dim_; }
  Eigen::RowVectorXd embed(std::string_view text) const override;
  nlohmann::json config() const override;

 private:
  int dim_;
  std::uint64_t salt_;
};

/// Mean-pooled pretrained token vectors loaded from a local checkpoint in the
/// whitespace-separated "token v1 v2 ... vd" format (GloVe / word2vec text
/// export, or a static distillation of a sentence transformer).
/// Unknown tokens are skipped; texts with no known token fall back to the
/// hashing embedder of the same dimension.
class StaticEmbeddingTextEncoder final : public TextEncoder {
 public:
  explicit StaticEmbeddingTextEncoder(const std::filesystem::path& checkpoint);
  int dim() const override { return dim_; }
  Eigen::RowVectorXd embed(std::string_view text) const override;
  nlohmann::json config() const override;
  std::size_t vocabulary_size() const noexcept { return index_.size(); }

 private:
  std::filesystem::path path_;
  int dim_ = 0;
  std::unordered_map<std::string, int> index_;
  Eigen::MatrixXd vectors_;
  std::unique_ptr<HashingTextEncoder> fallback_;
};

/// Rebuilds an encoder from TextEncoder::config().
std::shared_ptr<const TextEncoder> make_text_encoder(const nlohmann::json& config);

}  // namespace dtgba
