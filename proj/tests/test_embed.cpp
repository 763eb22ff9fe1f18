#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "nrs/embed.hpp"
#include "nrs/errors.hpp"
#include "nrs/rng.hpp"

using namespace nrs;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "nrs_embed_tests";
  fs::create_directories(dir);
  return dir / name;
}

double norm(const Vec& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("tokenize lowercases and splits on whitespace") {
  CHECK(tokenize("Hello  World").tokens ==
        std::vector<std::string>{"hello", "world"});
  CHECK(tokenize("").tokens == std::vector<std::string>{"<empty>"});
  CHECK(tokenize("   \t\n").tokens == std::vector<std::string>{"<empty>"});
  CHECK(tokenize("topic T ask S").tokens.size() == 4);
}

TEST_CASE("hashed embedder single token equals its base vector") {
  HashedEmbedder emb(8, 3);
  auto m = emb.embed(tokenize("hello"));
  REQUIRE(m.rows.size() == 1);
  CHECK(m.rows[0] == emb.base_vector("hello"));
}

TEST_CASE("repeated token is a fixed point of the recurrence") {
  HashedEmbedder emb(16, 7, 0.7);
  auto m = emb.embed(tokenize("a a a"));
  REQUIRE(m.rows.size() == 3);
  Vec base = emb.base_vector("a");
  for (const Vec& row : m.rows)
    for (size_t d = 0; d < row.size(); ++d)
      CHECK(row[d] == doctest::Approx(base[d]).epsilon(1e-12));
}

TEST_CASE("hashed embedder is bit-deterministic") {
  HashedEmbedder a(32, 5);
  HashedEmbedder b(32, 5);
  auto ma = a.embed(tokenize("the quick brown fox"));
  auto mb = b.embed(tokenize("the quick brown fox"));
  CHECK(ma.rows == mb.rows);
  HashedEmbedder c(32, 6);
  CHECK(c.embed(tokenize("the quick brown fox")).rows != ma.rows);
}

TEST_CASE("hashed embedder rows have unit norm") {
  HashedEmbedder emb(64, 1);
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    std::string text;
    int n = 1 + static_cast<int>(rng.below(6));
    for (int i = 0; i < n; ++i)
      text += "tok" + std::to_string(rng.below(50)) + " ";
    auto m = emb.embed(tokenize(text));
    for (const Vec& row : m.rows)
      CHECK(std::fabs(norm(row) - 1.0) < 1e-9);
  }
}

TEST_CASE("file provider lookup and errors") {
  auto path = temp_file("vectors.jsonl");
  {
    std::ofstream out(path);
    out << R"({"key":"hello","vectors":[[0.1,0.2]]})" << "\n";
    out << R"({"key":"hello there","vectors":[[1,0],[0,1]]})" << "\n";
  }
  FileProvider provider(path.string(), 2);
  auto m = provider.embed(tokenize("Hello"));
  REQUIRE(m.rows.size() == 1);
  CHECK(m.rows[0] == Vec{0.1, 0.2});
  CHECK(provider.embed(tokenize("hello there")).rows.size() == 2);
  try {
    provider.embed(tokenize("absent key"));
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("absent key") != std::string::npos);
  }
}

TEST_CASE("file provider rejects wrong dimensions at load") {
  auto path = temp_file("badvec.jsonl");
  {
    std::ofstream out(path);
    out << R"({"key":"x","vectors":[[0.1,0.2,0.3]]})" << "\n";
  }
  try {
    FileProvider provider(path.string(), 2);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("'x'") != std::string::npos);
  }
}

TEST_CASE("pool_tokens arithmetic") {
  EmbeddingMatrix m;
  m.dim = 2;
  m.rows = {{1, 3}, {3, 5}};
  CHECK(pool_tokens(m, TokenPool::kAvg) == Vec{2, 4});
  CHECK(pool_tokens(m, TokenPool::kLast) == Vec{3, 5});
  CHECK(pool_tokens(m, TokenPool::kMax) == Vec{3, 5});
  CHECK(pool_tokens(m, TokenPool::kSum) == Vec{4, 8});
}

TEST_CASE("avg of a single row is that row; max dominates avg") {
  HashedEmbedder emb(8, 2);
  auto m = emb.embed(tokenize("only"));
  CHECK(pool_tokens(m, TokenPool::kAvg) == m.rows[0]);
  auto m2 = emb.embed(tokenize("a few more tokens"));
  Vec mx = pool_tokens(m2, TokenPool::kMax);
  Vec av = pool_tokens(m2, TokenPool::kAvg);
  for (size_t d = 0; d < mx.size(); ++d) CHECK(mx[d] >= av[d]);
}

TEST_CASE("build_features pads missing context with zeros") {
  HashedEmbedder emb(3, 1);
  PoolingSpec spec{TokenPool::kLast, Combine::kConcat};
  Vec f = build_features(emb, spec, {}, "q", "r", 2);
  REQUIRE(f.size() == 12);
  for (size_t i = 0; i < 6; ++i) CHECK(f[i] == 0.0);
}

TEST_CASE("build_features concat dimension is (W+2)k") {
  HashedEmbedder emb(64, 1);
  PoolingSpec spec{TokenPool::kLast, Combine::kConcat};
  Vec f = build_features(emb, spec, {"c1", "c2"}, "q", "r", 2);
  CHECK(f.size() == 256);
  for (size_t len = 0; len <= 3; ++len) {
    std::vector<std::string> ctx(len, "c");
    CHECK(build_features(emb, spec, ctx, "q", "r", 3).size() == 5 * 64);
  }
}

TEST_CASE("sum combine of identical pooled vectors is 4v") {
  HashedEmbedder emb(8, 1);
  PoolingSpec spec{TokenPool::kLast, Combine::kSum};
  Vec v = pool_tokens(emb.embed(tokenize("same")), TokenPool::kLast);
  Vec f = build_features(emb, spec, {"same", "same"}, "same", "same", 2);
  REQUIRE(f.size() == v.size());
  for (size_t d = 0; d < v.size(); ++d)
    CHECK(f[d] == doctest::Approx(4 * v[d]).epsilon(1e-12));
}

TEST_CASE("feature builder matches build_features and caches") {
  auto provider = std::make_shared<HashedEmbedder>(16, 4);
  PoolingSpec spec{TokenPool::kAvg, Combine::kConcat};
  FeatureBuilder fb(provider, spec, 2);
  CHECK(fb.feature_dim() == 4 * 16);
  Vec direct = build_features(*provider, spec, {"a b"}, "q one", "r two", 2);
  Vec cached = fb.features({"a b"}, "q one", "r two");
  CHECK(direct == cached);
  CHECK(fb.features({"a b"}, "q one", "r two") == cached);

  FeatureBuilder fb_sum(provider,
                        PoolingSpec{TokenPool::kAvg, Combine::kSum}, 2);
  CHECK(fb_sum.feature_dim() == 16);
  CHECK(fb_sum.features({}, "q", "r").size() == 16);
}

TEST_CASE("providers are deterministic and dimension-stable") {
  auto provider = std::make_shared<HashedEmbedder>(24, 11);
  Rng rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    std::string text;
    int n = 1 + static_cast<int>(rng.below(8));
    for (int i = 0; i < n; ++i)
      text += "w" + std::to_string(rng.below(100)) + " ";
    auto a = provider->embed(tokenize(text));
    auto b = provider->embed(tokenize(text));
    CHECK(a.rows == b.rows);
    CHECK(a.dim == 24);
    for (const Vec& row : a.rows) CHECK(row.size() == 24);
  }
}

TEST_CASE("invalid constructions are rejected") {
  CHECK_THROWS_AS(HashedEmbedder(0, 1), ConfigError);
  CHECK_THROWS_AS(HashedEmbedder(8, 1, 0.0), ConfigError);
  CHECK_THROWS_AS(HashedEmbedder(8, 1, 1.5), ConfigError);
  HashedEmbedder emb(4, 1);
  PoolingSpec spec;
  CHECK_THROWS_AS(build_features(emb, spec, {"a", "b", "c"}, "q", "r", 2),
                  DataError);
}
