#include "nrs/embed.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "nrs/errors.hpp"
#include "nrs/rng.hpp"

namespace nrs {

using nlohmann::json;

TokenPool token_pool_from_string(const std::string& name) {
  if (name == "last") return TokenPool::kLast;
  if (name == "avg") return TokenPool::kAvg;
  if (name == "max") return TokenPool::kMax;
  if (name == "sum") return TokenPool::kSum;
  throw ConfigError("unknown token pool: " + name);
}

Combine combine_from_string(const std::string& name) {
  if (name == "concat") return Combine::kConcat;
  if (name == "sum") return Combine::kSum;
  throw ConfigError("unknown combine mode: " + name);
}

std::string to_string(TokenPool pool) {
  switch (pool) {
    case TokenPool::kLast: return "last";
    case TokenPool::kAvg: return "avg";
    case TokenPool::kMax: return "max";
    case TokenPool::kSum: return "sum";
  }
  return "?";
}

std::string to_string(Combine combine) {
  return combine == Combine::kConcat ? "concat" : "sum";
}

TokenSeq tokenize(std::string_view text) {
  TokenSeq seq;
  std::string cur;
  for (char ch : text) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) {
        seq.tokens.push_back(std::move(cur));
        cur.clear();
      }
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) seq.tokens.push_back(std::move(cur));
  if (seq.tokens.empty()) seq.tokens.push_back("<empty>");
  return seq;
}

namespace {

void normalize(Vec& v) {
  double norm2 = 0;
  for (double x : v) norm2 += x * x;
  if (norm2 <= 0) return;
  double inv = 1.0 / std::sqrt(norm2);
  for (double& x : v) x *= inv;
}

}  // namespace

HashedEmbedder::HashedEmbedder(size_t k, uint64_t seed, double alpha)
    : k_(k), seed_(seed), alpha_(alpha) {
  if (k < 1) throw ConfigError("embedding dimension must be >= 1");
  if (alpha <= 0 || alpha > 1) throw ConfigError("alpha must be in (0,1]");
}

Vec HashedEmbedder::base_vector(const std::string& token) const {
  Vec v(k_);
  uint64_t th = hash_combine(fnv1a(token), seed_);
  for (size_t d = 0; d < k_; ++d) {
    uint64_t h = hash_combine(th, d);
    v[d] = static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0;
  }
  normalize(v);
  return v;
}

EmbeddingMatrix HashedEmbedder::embed(const TokenSeq& tokens) const {
  EmbeddingMatrix m;
  m.dim = k_;
  Vec prev;
  for (const std::string& tok : tokens.tokens) {
    Vec e = base_vector(tok);
    if (prev.empty()) {
      prev = e;
    } else {
      for (size_t d = 0; d < k_; ++d)
        e[d] = alpha_ * e[d] + (1.0 - alpha_) * prev[d];
      normalize(e);
      prev = e;
    }
    m.rows.push_back(prev);
  }
  return m;
}

FileProvider::FileProvider(const std::string& path, size_t k) : k_(k) {
  if (k < 1) throw ConfigError("embedding dimension must be >= 1");
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embedding file: " + path);
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("embedding file line " + std::to_string(line_no) +
                      ": " + e.what());
    }
    std::string key = rec.at("key").get<std::string>();
    EmbeddingMatrix m;
    m.dim = k_;
    for (const auto& row : rec.at("vectors")) {
      Vec v = row.get<Vec>();
      if (v.size() != k_)
        throw DataError("embedding file key '" + key + "': vector dimension " +
                        std::to_string(v.size()) + ", expected " +
                        std::to_string(k_));
      m.rows.push_back(std::move(v));
    }
    if (m.rows.empty())
      throw DataError("embedding file key '" + key + "': no vectors");
    table_[key] = std::move(m);
  }
}

EmbeddingMatrix FileProvider::embed(const TokenSeq& tokens) const {
  std::string key;
  for (size_t i = 0; i < tokens.tokens.size(); ++i) {
    if (i) key += ' ';
    key += tokens.tokens[i];
  }
  auto it = table_.find(key);
  if (it == table_.end())
    throw DataError("no stored embedding for utterance '" + key + "'");
  return it->second;
}

Vec pool_tokens(const EmbeddingMatrix& m, TokenPool mode) {
  if (m.rows.empty()) throw DataError("pool_tokens: empty matrix");
  switch (mode) {
    case TokenPool::kLast:
      return m.rows.back();
    case TokenPool::kAvg: {
      Vec out(m.dim, 0.0);
      for (const Vec& row : m.rows)
        for (size_t d = 0; d < m.dim; ++d) out[d] += row[d];
      for (double& x : out) x /= static_cast<double>(m.rows.size());
      return out;
    }
    case TokenPool::kMax: {
      Vec out = m.rows.front();
      for (size_t r = 1; r < m.rows.size(); ++r)
        for (size_t d = 0; d < m.dim; ++d)
          out[d] = std::max(out[d], m.rows[r][d]);
      return out;
    }
    case TokenPool::kSum: {
      Vec out(m.dim, 0.0);
      for (const Vec& row : m.rows)
        for (size_t d = 0; d < m.dim; ++d) out[d] += row[d];
      return out;
    }
  }
  throw ConfigError("unknown pool mode");
}

namespace {

Vec pooled_text(const EmbeddingProvider& provider, const PoolingSpec& spec,
                const std::string& text) {
  return pool_tokens(provider.embed(tokenize(text)), spec.token_pool);
}

Vec combine_slots(const std::vector<Vec>& slots, const PoolingSpec& spec,
                  size_t k) {
  if (spec.combine == Combine::kSum) {
    Vec out(k, 0.0);
    for (const Vec& slot : slots)
      for (size_t d = 0; d < k; ++d) out[d] += slot[d];
    return out;
  }
  Vec out;
  out.reserve(slots.size() * k);
  for (const Vec& slot : slots) out.insert(out.end(), slot.begin(), slot.end());
  return out;
}

}  // namespace

Vec build_features(const EmbeddingProvider& provider, const PoolingSpec& spec,
                   const std::vector<std::string>& context,
                   const std::string& query, const std::string& response,
                   int window) {
  if (window < 0) throw ConfigError("window must be >= 0");
  if (context.size() > static_cast<size_t>(window))
    throw DataError("context longer than window");
  size_t k = provider.dim();
  std::vector<Vec> slots;
  size_t pad = static_cast<size_t>(window) - context.size();
  for (size_t i = 0; i < pad; ++i) slots.emplace_back(k, 0.0);
  for (const std::string& text : context)
    slots.push_back(pooled_text(provider, spec, text));
  slots.push_back(pooled_text(provider, spec, query));
  slots.push_back(pooled_text(provider, spec, response));
  return combine_slots(slots, spec, k);
}

FeatureBuilder::FeatureBuilder(
    std::shared_ptr<const EmbeddingProvider> provider, PoolingSpec spec,
    int window)
    : provider_(std::move(provider)), spec_(spec), window_(window) {
  if (window_ < 0) throw ConfigError("window must be >= 0");
}

size_t FeatureBuilder::feature_dim() const {
  return spec_.combine == Combine::kConcat
             ? (static_cast<size_t>(window_) + 2) * provider_->dim()
             : provider_->dim();
}

const Vec& FeatureBuilder::pooled(const std::string& text) const {
  {
    std::lock_guard<std::mutex> lock(cache_mutex_);
    auto it = cache_.find(text);
    if (it != cache_.end()) return it->second;
  }
  Vec v = pooled_text(*provider_, spec_, text);
  std::lock_guard<std::mutex> lock(cache_mutex_);
  // References stay valid across rehash; concurrent inserts are benign.
  return cache_.emplace(text, std::move(v)).first->second;
}

Vec FeatureBuilder::features(const std::vector<std::string>& context,
                             const std::string& query,
                             const std::string& response) const {
  if (context.size() > static_cast<size_t>(window_))
    throw DataError("context longer than window");
  size_t k = provider_->dim();
  if (spec_.combine == Combine::kSum) {
    Vec out(k, 0.0);
    auto add = [&](const Vec& v) {
      for (size_t d = 0; d < k; ++d) out[d] += v[d];
    };
    for (const std::string& text : context) add(pooled(text));
    add(pooled(query));
    add(pooled(response));
    return out;
  }
  Vec out(feature_dim(), 0.0);
  size_t pad = static_cast<size_t>(window_) - context.size();
  size_t pos = pad * k;
  auto put = [&](const Vec& v) {
    std::copy(v.begin(), v.end(), out.begin() + pos);
    pos += k;
  };
  for (const std::string& text : context) put(pooled(text));
  put(pooled(query));
  put(pooled(response));
  return out;
}

}  // namespace nrs
