#pragma once

#include "costq/policy.hpp"

#include <json.hpp>

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace httplib {
class Server;
}

namespace costq {

std::string_view version();

/// Human-readable label of an action at a state: "stop", "acquire test 1", ...
std::string action_label(int action);

/// Recommendation for a subject at `state` with the given observed blocks. Contrasts are
/// reported for ContrastPolicy instances; other policies report the action and risk only.
/// At S12 the result is terminal and carries no action.
nlohmann::json recommend(const Policy& policy, InformationState state, const Vector& x0,
                         const std::optional<Vector>& x1, const std::optional<Vector>& x2);

/// Admissible actions at `state` with their contrasts and cost deltas.
nlohmann::json what_if(const Policy& policy, const CostSchedule& costs, InformationState state, const Vector& x0,
                       const std::optional<Vector>& x1, const std::optional<Vector>& x2);

/// JSON error body {code, message, field?} together with its HTTP status.
struct ApiError {
  int status = 400;
  std::string code;
  std::string message;
  std::optional<std::string> field;

  nlohmann::json body() const;
};

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

/// In-memory sessions stepping subjects through one immutable policy. Each session has
/// its own mutex; sessions idle for longer than the TTL are evicted.
class SessionManager {
 public:
  using Clock = std::function<std::chrono::steady_clock::time_point()>;

  SessionManager(std::shared_ptr<const Policy> policy, nlohmann::json policy_json,
                 std::chrono::seconds ttl = std::chrono::hours(1), Clock clock = {});

  ApiResponse health() const;
  ApiResponse policy_info() const;
  ApiResponse create(const std::string& body);
  ApiResponse observe(const std::string& id, const std::string& body);
  ApiResponse what_if(const std::string& id);
  ApiResponse get(const std::string& id);

  std::size_t size() const;
  std::size_t evict_expired();

 private:
  struct Session {
    std::mutex mutex;
    std::string id;
    Vector x0;
    std::optional<Vector> x1;
    std::optional<Vector> x2;
    InformationState state = InformationState::S0;
    std::vector<int> observed;
    nlohmann::json history = nlohmann::json::array();
    std::chrono::steady_clock::time_point last_access;
  };

  std::shared_ptr<Session> find(const std::string& id);
  std::string new_id();
  nlohmann::json session_json(const Session& s) const;

  std::shared_ptr<const Policy> policy_;
  nlohmann::json policy_json_;
  CostSchedule costs_;
  std::chrono::seconds ttl_;
  Clock clock_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t counter_ = 0;
  std::uint64_t salt_;
};

/// Registers the HTTP routes on `server`.
void mount_routes(httplib::Server& server, SessionManager& sessions);

}  // namespace costq
