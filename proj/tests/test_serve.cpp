#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <memory>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "nrs/config.hpp"
#include "nrs/errors.hpp"
#include "nrs/model.hpp"
#include "nrs/select.hpp"
#include "nrs/serve.hpp"

using namespace nrs;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "nrs_serve_tests";
  fs::create_directories(dir);
  return dir / name;
}

json provider_settings() {
  return {{"kind", "hashed"}, {"k", 8}, {"seed", 1}, {"alpha", 0.7}};
}

// Checkpoint + feature builder pair built from the same settings, so the
// offline path and the service score identically.
struct Fixture {
  std::string checkpoint;
  std::shared_ptr<const EmbeddingProvider> provider;
  std::unique_ptr<FeatureBuilder> features;
  ScorerParams params;

  explicit Fixture(uint64_t seed) {
    provider = make_provider(provider_settings());
    PoolingSpec spec;  // defaults match pooling_to_json(spec)
    features = std::make_unique<FeatureBuilder>(provider, spec, 2);
    params = init_params(features->feature_dim(), 8, 3, seed);
    json meta = {{"k", 8},
                 {"window", 2},
                 {"pooling", pooling_to_json(spec)},
                 {"provider", provider_settings()}};
    auto path = temp_file("fixture_" + std::to_string(seed) + ".bin");
    save_checkpoint(path.string(), params, meta);
    checkpoint = path.string();
  }

  ServiceConfig config() const {
    ServiceConfig cfg;
    cfg.checkpoint_path = checkpoint;
    return cfg;
  }
};

json select_body() {
  return {{"history",
           {{{"speaker", "user"}, {"text", "earlier question"}},
            {{"speaker", "engine"}, {"text", "earlier answer"}}}},
          {"query", "what now"},
          {"candidates",
           {{{"agent", "a1"}, {"text", "one possible reply"}},
            {{"agent", "a2"}, {"text", "a different reply"}},
            {{"agent", "a3"}, {"text", "yet another reply"}}}}};
}

}  // namespace

TEST_CASE("service config parsing") {
  json j = {{"checkpoint", "m.bin"},
            {"listen", {{"host", "0.0.0.0"}, {"port", 9000}}},
            {"agents",
             {{{"id", "a"}, {"url", "http://x/r"}},
              {{"id", "b"}, {"url", "http://y/r"}, {"timeout_ms", 50}}}}};
  ServiceConfig cfg = ServiceConfig::from_json(j);
  CHECK(cfg.host == "0.0.0.0");
  CHECK(cfg.port == 9000);
  CHECK(cfg.agents.size() == 2);
  CHECK(cfg.agents[1].timeout_ms == 50);

  CHECK_THROWS_AS(ServiceConfig::from_json(json{{"listen", json::object()}}),
                  ConfigError);
  j["agents"][1]["id"] = "a";
  CHECK_THROWS_AS(ServiceConfig::from_json(j), ConfigError);
  j["agents"][1]["id"] = "b";
  j["agents"][1]["timeout_ms"] = 0;
  CHECK_THROWS_AS(ServiceConfig::from_json(j), ConfigError);
}

TEST_CASE("constructor fails fast on a missing checkpoint") {
  ServiceConfig cfg;
  cfg.checkpoint_path = temp_file("does_not_exist.bin").string();
  CHECK_THROWS_AS(SelectionService{cfg}, IoError);
}

TEST_CASE("select endpoint matches the offline selector byte for byte") {
  Fixture fx(11);
  SelectionService service(fx.config());
  int port = service.start_background();
  httplib::Client client("127.0.0.1", port);

  json body = select_body();
  auto res = client.Post("/v1/select", body.dump(), "application/json");
  REQUIRE(res);
  REQUIRE(res->status == 200);
  json out = json::parse(res->body);

  // Offline reference with the same context truncation.
  std::vector<std::string> context = {"earlier question", "earlier answer"};
  std::vector<Candidate> cands = {{"a1", "one possible reply"},
                                  {"a2", "a different reply"},
                                  {"a3", "yet another reply"}};
  auto [pick, scored] =
      select_best(fx.params, *fx.features, context, "what now", cands);
  CHECK(out.at("selected").at("agent") == cands[pick].agent_id);
  CHECK(out.at("selected").at("text") == cands[pick].text);
  REQUIRE(out.at("scores").size() == scored.size());
  for (size_t i = 0; i < scored.size(); ++i) {
    CHECK(out["scores"][i].at("agent") == scored[i].agent_id);
    CHECK(out["scores"][i].at("score").get<double>() == scored[i].score);
  }

  // Repeating the identical request returns the identical bytes.
  auto res2 = client.Post("/v1/select", body.dump(), "application/json");
  REQUIRE(res2);
  CHECK(res2->body == res->body);

  service.stop();
}

TEST_CASE("select endpoint rejects bad payloads") {
  Fixture fx(12);
  SelectionService service(fx.config());
  int port = service.start_background();
  httplib::Client client("127.0.0.1", port);

  auto res = client.Post("/v1/select", "{not json", "application/json");
  REQUIRE(res);
  CHECK(res->status == 400);

  json no_query = {{"candidates", json::array()}};
  res = client.Post("/v1/select", no_query.dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 400);

  json empty = {{"query", "q"}, {"candidates", json::array()}};
  res = client.Post("/v1/select", empty.dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 422);

  json bad_speaker = select_body();
  bad_speaker["history"][0]["speaker"] = "narrator";
  res = client.Post("/v1/select", bad_speaker.dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 500);  // DataError surfaces as internal error

  service.stop();
}

TEST_CASE("health endpoint reports checkpoint metadata") {
  Fixture fx(13);
  SelectionService service(fx.config());
  int port = service.start_background();
  httplib::Client client("127.0.0.1", port);
  auto res = client.Get("/v1/health");
  REQUIRE(res);
  CHECK(res->status == 200);
  json out = json::parse(res->body);
  CHECK(out.at("status") == "ok");
  CHECK(out.at("checkpoint").at("k") == 8);
  CHECK(out.at("checkpoint").at("window") == 2);
  service.stop();
}

TEST_CASE("reload swaps in the new checkpoint atomically") {
  Fixture fx(14);
  SelectionService service(fx.config());
  int port = service.start_background();
  httplib::Client client("127.0.0.1", port);

  json body = select_body();
  auto before = client.Post("/v1/select", body.dump(), "application/json");
  REQUIRE(before);

  // Overwrite the checkpoint file with different weights, then reload.
  Fixture other(99);
  json meta = {{"k", 8},
               {"window", 2},
               {"pooling", pooling_to_json(PoolingSpec{})},
               {"provider", provider_settings()}};
  save_checkpoint(fx.checkpoint, other.params, meta);
  service.reload_checkpoint();

  auto after = client.Post("/v1/select", body.dump(), "application/json");
  REQUIRE(after);
  json out = json::parse(after->body);
  auto [pick, scored] = select_best(other.params, *other.features,
                                    {"earlier question", "earlier answer"},
                                    "what now",
                                    {{"a1", "one possible reply"},
                                     {"a2", "a different reply"},
                                     {"a3", "yet another reply"}});
  CHECK(out.at("scores")[0].at("score").get<double>() == scored[0].score);
  service.stop();
}

namespace {

// Minimal stub agent: always answers with a fixed text, optionally slowly.
class StubAgent {
 public:
  StubAgent(std::string text, int delay_ms = 0)
      : text_(std::move(text)), delay_ms_(delay_ms) {
    server_.Post("/respond", [this](const httplib::Request& req,
                                    httplib::Response& res) {
      if (delay_ms_ > 0)
        std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms_));
      last_request_ = json::parse(req.body);
      res.set_content(json{{"text", text_}}.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    worker_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubAgent() {
    server_.stop();
    worker_.join();
  }
  int port() const { return port_; }
  const json& last_request() const { return last_request_; }

 private:
  std::string text_;
  int delay_ms_;
  httplib::Server server_;
  std::thread worker_;
  int port_ = 0;
  json last_request_;
};

ServiceConfig with_agents(const Fixture& fx,
                          const std::vector<std::pair<std::string, int>>& eps,
                          int timeout_ms = 2000) {
  ServiceConfig cfg = fx.config();
  for (const auto& [id, port] : eps)
    cfg.agents.push_back({id,
                          "http://127.0.0.1:" + std::to_string(port) +
                              "/respond",
                          timeout_ms});
  return cfg;
}

}  // namespace

TEST_CASE("converse fans out, drops the timed-out agent, and selects") {
  Fixture fx(21);
  StubAgent fast1("a sensible reply");
  StubAgent fast2("another fine reply");
  StubAgent slow("too late to matter", 1500);

  ServiceConfig cfg = with_agents(
      fx, {{"fast1", fast1.port()}, {"fast2", fast2.port()},
           {"slow", slow.port()}},
      300);
  SelectionService service(cfg);
  int port = service.start_background();
  httplib::Client client("127.0.0.1", port);

  json body = {{"history", json::array()}, {"query", "tell me something"}};
  auto res = client.Post("/v1/converse", body.dump(), "application/json");
  REQUIRE(res);
  REQUIRE(res->status == 200);
  json out = json::parse(res->body);
  CHECK(out.at("failed") == json::array({"slow"}));
  REQUIRE(out.at("scores").size() == 2);

  // The survivors were scored exactly like the offline selector.
  auto [pick, scored] =
      select_best(fx.params, *fx.features, {}, "tell me something",
                  {{"fast1", "a sensible reply"},
                   {"fast2", "another fine reply"}});
  std::vector<std::string> ids = {"fast1", "fast2"};
  CHECK(out.at("selected").at("agent") == ids[pick]);
  for (size_t i = 0; i < scored.size(); ++i)
    CHECK(out["scores"][i].at("score").get<double>() == scored[i].score);

  // Agents received the query and history verbatim.
  CHECK(fast1.last_request().at("query") == "tell me something");
  CHECK(fast1.last_request().at("history") == json::array());

  service.stop();
}

TEST_CASE("converse returns 503 when every agent fails") {
  Fixture fx(22);
  ServiceConfig cfg = with_agents(fx, {{"ghost", 1}}, 200);  // nothing listens
  SelectionService service(cfg);
  int port = service.start_background();
  httplib::Client client("127.0.0.1", port);

  json body = {{"query", "anyone there"}};
  auto res = client.Post("/v1/converse", body.dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 503);
  json out = json::parse(res->body);
  CHECK(out.at("failed") == json::array({"ghost"}));
  service.stop();
}
