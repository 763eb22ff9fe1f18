#include "nrs/serve.hpp"

#include <algorithm>
#include <future>
#include <unordered_set>

#include <httplib.h>
#include <json.hpp>

#include "nrs/config.hpp"
#include "nrs/errors.hpp"
#include "nrs/model.hpp"
#include "nrs/select.hpp"

namespace nrs {

using nlohmann::json;

ServiceConfig ServiceConfig::from_json(const json& j) {
  ServiceConfig config;
  if (j.contains("listen")) {
    const json& listen = j.at("listen");
    config.host = listen.value("host", config.host);
    config.port = listen.value("port", config.port);
  }
  if (!j.contains("checkpoint"))
    throw ConfigError("service config requires 'checkpoint'");
  config.checkpoint_path = j.at("checkpoint").get<std::string>();
  if (j.contains("provider")) config.provider = j.at("provider");
  config.max_history = j.value("max_history", config.max_history);
  if (config.max_history < 0)
    throw ConfigError("max_history must be >= 0");
  if (j.contains("agents")) {
    std::unordered_set<std::string> ids;
    for (const json& ja : j.at("agents")) {
      AgentEndpoint ep;
      ep.id = ja.at("id").get<std::string>();
      ep.url = ja.at("url").get<std::string>();
      ep.timeout_ms = ja.value("timeout_ms", ep.timeout_ms);
      if (ep.timeout_ms <= 0)
        throw ConfigError("agent '" + ep.id + "': timeout_ms must be > 0");
      if (!ids.insert(ep.id).second)
        throw ConfigError("duplicate agent id '" + ep.id + "'");
      config.agents.push_back(std::move(ep));
    }
  }
  return config;
}

struct SelectionService::Snapshot {
  ScorerParams params;
  json meta;
  std::shared_ptr<const EmbeddingProvider> provider;
  std::unique_ptr<FeatureBuilder> features;
  int window = 0;
};

struct SelectionService::Impl {
  httplib::Server server;
};

namespace {

// "http://host:port/path" -> {"http://host:port", "/path"}
std::pair<std::string, std::string> split_url(const std::string& url) {
  size_t scheme = url.find("://");
  size_t path_start =
      url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::vector<std::string> parse_history(const json& body, int max_history) {
  std::vector<std::string> texts;
  if (!body.contains("history")) return texts;
  for (const json& ju : body.at("history")) {
    std::string speaker = ju.at("speaker").get<std::string>();
    if (speaker != "user" && speaker != "engine")
      throw DataError("history speaker must be 'user' or 'engine'");
    texts.push_back(ju.at("text").get<std::string>());
  }
  if (texts.size() > static_cast<size_t>(max_history))
    texts.erase(texts.begin(), texts.end() - max_history);
  return texts;
}

void reply_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

}  // namespace

SelectionService::SelectionService(ServiceConfig config)
    : config_(std::move(config)), impl_(std::make_unique<Impl>()) {
  current_ = load_snapshot();  // fail fast on a bad checkpoint

  auto handle_select = [this](const httplib::Request& req,
                              httplib::Response& res) {
    auto snap = snapshot();
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception& e) {
      reply_json(res, 400, {{"error", std::string("bad JSON: ") + e.what()}});
      return;
    }
    try {
      std::vector<std::string> history =
          parse_history(body, config_.max_history);
      std::string query = body.at("query").get<std::string>();
      std::vector<Candidate> candidates;
      for (const json& jc : body.at("candidates")) {
        candidates.push_back({jc.at("agent").get<std::string>(),
                              jc.at("text").get<std::string>()});
      }
      if (candidates.empty()) {
        reply_json(res, 422, {{"error", "empty candidate list"}});
        return;
      }
      size_t take = std::min<size_t>(snap->window, history.size());
      std::vector<std::string> context(history.end() - take, history.end());
      auto [pick, scored] = select_best(snap->params, *snap->features, context,
                                        query, candidates);
      json scores = json::array();
      for (const ScoredCandidate& sc : scored)
        scores.push_back({{"agent", sc.agent_id}, {"score", sc.score}});
      reply_json(res, 200,
                 {{"selected",
                   {{"agent", candidates[pick].agent_id},
                    {"text", candidates[pick].text}}},
                  {"scores", std::move(scores)}});
    } catch (const json::exception& e) {
      reply_json(res, 400, {{"error", std::string("bad schema: ") + e.what()}});
    } catch (const std::exception&) {
      reply_json(res, 500, {{"error", "internal error"}});
    }
  };

  auto handle_converse = [this](const httplib::Request& req,
                                httplib::Response& res) {
    auto snap = snapshot();
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception& e) {
      reply_json(res, 400, {{"error", std::string("bad JSON: ") + e.what()}});
      return;
    }
    try {
      std::vector<std::string> history =
          parse_history(body, config_.max_history);
      std::string query = body.at("query").get<std::string>();

      json agent_request = {{"history", body.value("history", json::array())},
                            {"query", query}};
      std::string payload = agent_request.dump();

      struct FanoutResult {
        std::string id;
        bool ok = false;
        std::string text;
      };
      std::vector<std::future<FanoutResult>> futures;
      for (const AgentEndpoint& ep : config_.agents) {
        futures.push_back(std::async(std::launch::async, [ep, payload]() {
          FanoutResult out{ep.id};
          auto [base, path] = split_url(ep.url);
          httplib::Client client(base);
          client.set_connection_timeout(0, ep.timeout_ms * 1000);
          client.set_read_timeout(ep.timeout_ms / 1000,
                                  (ep.timeout_ms % 1000) * 1000);
          auto resp = client.Post(path, payload, "application/json");
          if (!resp || resp->status != 200) return out;
          try {
            json jr = json::parse(resp->body);
            out.text = jr.at("text").get<std::string>();
            out.ok = true;
          } catch (const json::exception&) {
            out.ok = false;
          }
          return out;
        }));
      }

      std::vector<Candidate> candidates;
      std::vector<std::string> failed;
      for (auto& fut : futures) {
        FanoutResult result = fut.get();
        if (result.ok) candidates.push_back({result.id, result.text});
        else failed.push_back(result.id);
      }
      if (candidates.empty()) {
        reply_json(res, 503,
                   {{"error", "all agents failed"}, {"failed", failed}});
        return;
      }
      size_t take = std::min<size_t>(snap->window, history.size());
      std::vector<std::string> context(history.end() - take, history.end());
      auto [pick, scored] = select_best(snap->params, *snap->features, context,
                                        query, candidates);
      json scores = json::array();
      for (const ScoredCandidate& sc : scored)
        scores.push_back({{"agent", sc.agent_id}, {"score", sc.score}});
      reply_json(res, 200,
                 {{"selected",
                   {{"agent", candidates[pick].agent_id},
                    {"text", candidates[pick].text}}},
                  {"scores", std::move(scores)},
                  {"failed", failed}});
    } catch (const json::exception& e) {
      reply_json(res, 400, {{"error", std::string("bad schema: ") + e.what()}});
    } catch (const std::exception&) {
      reply_json(res, 500, {{"error", "internal error"}});
    }
  };

  impl_->server.Post("/v1/select", handle_select);
  impl_->server.Post("/v1/converse", handle_converse);
  impl_->server.Get("/v1/health", [this](const httplib::Request&,
                                         httplib::Response& res) {
    auto snap = snapshot();
    reply_json(res, 200, {{"status", "ok"}, {"checkpoint", snap->meta}});
  });
}

SelectionService::~SelectionService() { stop(); }

std::shared_ptr<const SelectionService::Snapshot>
SelectionService::load_snapshot() const {
  auto snap = std::make_shared<Snapshot>();
  auto [params, meta] = load_checkpoint(config_.checkpoint_path);
  snap->params = std::move(params);
  snap->meta = std::move(meta);

  json provider_settings = config_.provider.is_object()
                               ? config_.provider
                               : snap->meta.value("provider", json());
  snap->provider = make_provider(provider_settings_or_default(provider_settings));

  size_t k = snap->meta.value("k", snap->provider->dim());
  if (snap->provider->dim() != k)
    throw ConfigError("provider dimension " +
                      std::to_string(snap->provider->dim()) +
                      " does not match checkpoint k=" + std::to_string(k));
  snap->window = snap->meta.value("window", 2);
  PoolingSpec spec = pooling_from_json(snap->meta.value("pooling", json()));
  snap->features =
      std::make_unique<FeatureBuilder>(snap->provider, spec, snap->window);
  if (snap->features->feature_dim() != snap->params.input_dim)
    throw ConfigError("checkpoint input_dim does not match provider/pooling");
  return snap;
}

std::shared_ptr<const SelectionService::Snapshot> SelectionService::snapshot()
    const {
  std::lock_guard<std::mutex> lock(mutex_);
  return current_;
}

void SelectionService::reload_checkpoint() {
  auto snap = load_snapshot();
  std::lock_guard<std::mutex> lock(mutex_);
  current_ = std::move(snap);
}

json SelectionService::checkpoint_meta() const { return snapshot()->meta; }

void SelectionService::run() {
  if (!impl_->server.listen(config_.host, config_.port))
    throw IoError("cannot listen on " + config_.host + ":" +
                  std::to_string(config_.port));
}

int SelectionService::start_background() {
  int port = impl_->server.bind_to_any_port(config_.host);
  if (port <= 0) throw IoError("cannot bind service port");
  worker_ = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void SelectionService::stop() {
  impl_->server.stop();
  if (worker_.joinable()) worker_.join();
}

}  // namespace nrs
