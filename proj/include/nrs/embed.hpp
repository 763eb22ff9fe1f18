#ifndef NRS_EMBED_HPP_
#define NRS_EMBED_HPP_

#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace nrs {

using Vec = std::vector<double>;

struct TokenSeq {
  std::vector<std::string> tokens;
};

struct EmbeddingMatrix {
  size_t dim = 0;
  std::vector<Vec> rows;  // one row per token, each of length dim
};

enum class TokenPool { kLast, kAvg, kMax, kSum };
enum class Combine { kConcat, kSum };

struct PoolingSpec {
  TokenPool token_pool = TokenPool::kLast;
  Combine combine = Combine::kConcat;
};

TokenPool token_pool_from_string(const std::string& name);
Combine combine_from_string(const std::string& name);
std::string to_string(TokenPool pool);
std::string to_string(Combine combine);

// Lowercase, split on whitespace; empty input yields ["<empty>"].
TokenSeq tokenize(std::string_view text);

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual size_t dim() const = 0;
  virtual EmbeddingMatrix embed(const TokenSeq& tokens) const = 0;
};

// Deterministic stand-in for a pre-trained contextual LM: unit base vectors
// from a seeded hash, blended left-to-right with smoothing alpha.
class HashedEmbedder : public EmbeddingProvider {
 public:
  HashedEmbedder(size_t k, uint64_t seed, double alpha = 0.7);
  size_t dim() const override { return k_; }
  EmbeddingMatrix embed(const TokenSeq& tokens) const override;
  Vec base_vector(const std::string& token) const;

 private:
  size_t k_;
  uint64_t seed_;
  double alpha_;
};

// Serves vectors precomputed offline, keyed by the space-joined token string.
class FileProvider : public EmbeddingProvider {
 public:
  FileProvider(const std::string& path, size_t k);
  size_t dim() const override { return k_; }
  EmbeddingMatrix embed(const TokenSeq& tokens) const override;

 private:
  size_t k_;
  std::unordered_map<std::string, EmbeddingMatrix> table_;
};

Vec pool_tokens(const EmbeddingMatrix& m, TokenPool mode);

Vec build_features(const EmbeddingProvider& provider, const PoolingSpec& spec,
                   const std::vector<std::string>& context,
                   const std::string& query, const std::string& response,
                   int window);

// Caches pooled utterance vectors; the hot path during training.
class FeatureBuilder {
 public:
  FeatureBuilder(std::shared_ptr<const EmbeddingProvider> provider,
                 PoolingSpec spec, int window);

  size_t feature_dim() const;
  size_t embed_dim() const { return provider_->dim(); }
  int window() const { return window_; }
  const PoolingSpec& spec() const { return spec_; }

  const Vec& pooled(const std::string& text) const;
  Vec features(const std::vector<std::string>& context,
               const std::string& query, const std::string& response) const;

 private:
  std::shared_ptr<const EmbeddingProvider> provider_;
  PoolingSpec spec_;
  int window_;
  mutable std::mutex cache_mutex_;
  mutable std::unordered_map<std::string, Vec> cache_;
};

}  // namespace nrs

#endif  // NRS_EMBED_HPP_
