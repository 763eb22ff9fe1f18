#include "nrs/config.hpp"

#include <fstream>

#include "nrs/errors.hpp"

namespace nrs {

using nlohmann::json;

std::shared_ptr<const EmbeddingProvider> make_provider(const json& settings) {
  if (!settings.is_object())
    throw ConfigError("provider settings must be a JSON object");
  std::string kind = settings.value("kind", "hashed");
  if (kind == "hashed") {
    size_t k = settings.value("k", 64);
    uint64_t seed = settings.value("seed", 1ULL);
    double alpha = settings.value("alpha", 0.7);
    return std::make_shared<HashedEmbedder>(k, seed, alpha);
  }
  if (kind == "file") {
    if (!settings.contains("path"))
      throw ConfigError("file provider requires 'path'");
    size_t k = settings.value("k", 0);
    if (k < 1) throw ConfigError("file provider requires 'k' >= 1");
    return std::make_shared<FileProvider>(
        settings.at("path").get<std::string>(), k);
  }
  throw ConfigError("unknown provider kind: " + kind);
}

json provider_settings_or_default(const json& maybe) {
  if (maybe.is_object()) return maybe;
  return json{{"kind", "hashed"}, {"k", 64}, {"seed", 1}, {"alpha", 0.7}};
}

PoolingSpec pooling_from_json(const json& j) {
  PoolingSpec spec;
  if (j.is_null()) return spec;
  if (!j.is_object()) throw ConfigError("pooling spec must be a JSON object");
  if (j.contains("token_pool"))
    spec.token_pool =
        token_pool_from_string(j.at("token_pool").get<std::string>());
  if (j.contains("combine"))
    spec.combine = combine_from_string(j.at("combine").get<std::string>());
  return spec;
}

json pooling_to_json(const PoolingSpec& spec) {
  return json{{"token_pool", to_string(spec.token_pool)},
              {"combine", to_string(spec.combine)}};
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open file: " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("bad JSON in " + path + ": " + e.what());
  }
}

}  // namespace nrs
