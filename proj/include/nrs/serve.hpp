#ifndef NRS_SERVE_HPP_
#define NRS_SERVE_HPP_

#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

namespace httplib {
class Server;
}

namespace nrs {

struct AgentEndpoint {
  std::string id;
  std::string url;  // full POST target, e.g. http://127.0.0.1:9001/respond
  int timeout_ms = 2000;
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string checkpoint_path;
  nlohmann::json provider;  // optional; falls back to checkpoint metadata
  std::vector<AgentEndpoint> agents;
  int max_history = 64;

  static ServiceConfig from_json(const nlohmann::json& j);
};

class SelectionService {
 public:
  explicit SelectionService(ServiceConfig config);
  ~SelectionService();

  // Blocking; serves on config host/port.
  void run();

  // Test/embedding helpers: bind to an OS-assigned port and serve on a
  // background thread.
  int start_background();
  void stop();

  // Atomic snapshot swap; in-flight requests keep the old snapshot.
  void reload_checkpoint();

  nlohmann::json checkpoint_meta() const;

 private:
  struct Snapshot;
  struct Impl;

  std::shared_ptr<const Snapshot> load_snapshot() const;
  std::shared_ptr<const Snapshot> snapshot() const;

  ServiceConfig config_;
  std::unique_ptr<Impl> impl_;
  mutable std::mutex mutex_;
  std::shared_ptr<const Snapshot> current_;
  std::thread worker_;
};

}  // namespace nrs

#endif  // NRS_SERVE_HPP_
