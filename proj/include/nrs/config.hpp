#ifndef NRS_CONFIG_HPP_
#define NRS_CONFIG_HPP_

#include <memory>
#include <string>

#include <json.hpp>

#include "nrs/embed.hpp"

namespace nrs {

// Provider settings: {"kind":"hashed","k":64,"seed":1,"alpha":0.7}
//                 or {"kind":"file","path":"...","k":64}
std::shared_ptr<const EmbeddingProvider> make_provider(
    const nlohmann::json& settings);

nlohmann::json provider_settings_or_default(const nlohmann::json& maybe);

PoolingSpec pooling_from_json(const nlohmann::json& j);
nlohmann::json pooling_to_json(const PoolingSpec& spec);

nlohmann::json load_json_file(const std::string& path);

}  // namespace nrs

#endif  // NRS_CONFIG_HPP_
