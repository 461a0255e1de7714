#include "costq/service.hpp"

#include "costq/dr_engine.hpp"
#include "costq/policy_io.hpp"

#include <httplib.h>

#include <cstdio>
#include <random>

namespace costq {

namespace {

constexpr const char* kJson = "application/json";

Vector concat(const Vector& a, const Vector& b) {
  Vector out(a.size() + b.size());
  out << a, b;
  return out;
}

Vector parse_vector(const nlohmann::json& body, const char* field, int expected) {
  if (!body.contains(field)) throw ApiError{400, "missing_field", std::string(field) + " is required", field};
  const auto& arr = body.at(field);
  if (!arr.is_array()) throw ApiError{400, "invalid_field", std::string(field) + " must be an array of numbers", field};
  if (static_cast<int>(arr.size()) != expected) {
    throw ApiError{400, "dimension_mismatch",
                   std::string(field) + " must have " + std::to_string(expected) + " entries, got " +
                       std::to_string(arr.size()),
                   field};
  }
  Vector v(expected);
  for (int k = 0; k < expected; ++k) {
    const auto& item = arr.at(static_cast<std::size_t>(k));
    if (!item.is_number()) {
      throw ApiError{400, "invalid_field", std::string(field) + " entries must be JSON numbers", field};
    }
    v[k] = item.get<double>();
  }
  return v;
}

nlohmann::json parse_body(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception&) {
    throw ApiError{400, "invalid_json", "request body is not valid JSON", std::nullopt};
  }
  if (!j.is_object()) throw ApiError{400, "invalid_json", "request body must be a JSON object", std::nullopt};
  return j;
}

ApiResponse error_response(const ApiError& e) { return {e.status, e.body()}; }

template <typename F>
ApiResponse guarded(F&& f) {
  try {
    return f();
  } catch (const ApiError& e) {
    return error_response(e);
  } catch (const DimMismatch& e) {
    return error_response({400, "dimension_mismatch", e.what(), std::nullopt});
  } catch (const std::exception& e) {
    return error_response({500, "internal_error", e.what(), std::nullopt});
  }
}

}  // namespace

std::string_view version() { return COSTQ_VERSION; }

std::string action_label(int action) {
  switch (action) {
    case 0: return "stop";
    case 1: return "acquire test 1";
    case 2: return "acquire test 2";
  }
  throw std::out_of_range("action outside {0, 1, 2}");
}

nlohmann::json ApiError::body() const {
  nlohmann::json j = {{"code", code}, {"message", message}};
  if (field) j["field"] = *field;
  return j;
}

nlohmann::json recommend(const Policy& policy, InformationState state, const Vector& x0,
                         const std::optional<Vector>& x1, const std::optional<Vector>& x2) {
  const auto* cp = dynamic_cast<const ContrastPolicy*>(&policy);
  nlohmann::json r = {{"state", std::string(to_string(state))}};
  switch (state) {
    case InformationState::S0: {
      const int action = policy.decide0(x0);
      r["action"] = action;
      r["label"] = action_label(action);
      r["terminal"] = false;
      r["risk"] = policy.predict(state, x0);
      if (cp) {
        const double d1 = cp->contrast_stage1(1, x0);
        const double d2 = cp->contrast_stage1(2, x0);
        r["contrasts"] = {{"1|0", d1}, {"2|0", d2}};
        r["loss_deltas"] = {{"stop", 0.0}, {"test1", d1}, {"test2", d2}};
      } else {
        r["contrasts"] = nlohmann::json::object();
      }
      return r;
    }
    case InformationState::S1only:
    case InformationState::S2only: {
      const int j = state == InformationState::S1only ? 1 : 2;
      const Vector xj = concat(x0, j == 1 ? *x1 : *x2);
      const int action = policy.decide_stage2(j, xj);
      const std::string key = std::to_string(other_test(j)) + "|" + std::to_string(j);
      r["action"] = action;
      r["label"] = action_label(action);
      r["terminal"] = false;
      r["risk"] = policy.predict(state, xj);
      if (cp) {
        const double d = cp->contrast_stage2(j, xj);
        r["contrasts"] = {{key, d}};
        r["loss_deltas"] = {{"stop", 0.0}, {"test" + std::to_string(other_test(j)), d}};
      } else {
        r["contrasts"] = nlohmann::json::object();
      }
      return r;
    }
    case InformationState::S12: {
      Vector full(x0.size() + x1->size() + x2->size());
      full << x0, *x1, *x2;
      r["action"] = nullptr;
      r["terminal"] = true;
      r["risk"] = policy.predict(state, full);
      r["contrasts"] = nlohmann::json::object();
      return r;
    }
  }
  return r;
}

nlohmann::json what_if(const Policy& policy, const CostSchedule& costs, InformationState state, const Vector& x0,
                       const std::optional<Vector>& x1, const std::optional<Vector>& x2) {
  const auto* cp = dynamic_cast<const ContrastPolicy*>(&policy);
  nlohmann::json rows = nlohmann::json::array();
  auto row = [&](int action, std::optional<double> contrast, int recommended) {
    const double cost = action == 0 ? 0.0 : costs.test_cost(action);
    nlohmann::json r = {{"action", action},
                        {"label", action_label(action)},
                        {"cost_delta", cost},
                        {"recommended", action == recommended}};
    if (contrast) {
      r["contrast"] = *contrast;
      r["prediction_loss_delta"] = *contrast - cost;
    } else {
      r["contrast"] = nullptr;
      r["prediction_loss_delta"] = nullptr;
    }
    rows.push_back(r);
  };
  if (state == InformationState::S0) {
    const int rec = policy.decide0(x0);
    row(0, 0.0, rec);
    for (int j : {1, 2}) row(j, cp ? std::optional(cp->contrast_stage1(j, x0)) : std::nullopt, rec);
  } else if (state != InformationState::S12) {
    const int j = state == InformationState::S1only ? 1 : 2;
    const Vector xj = concat(x0, j == 1 ? *x1 : *x2);
    const int rec = policy.decide_stage2(j, xj);
    row(0, 0.0, rec);
    row(other_test(j), cp ? std::optional(cp->contrast_stage2(j, xj)) : std::nullopt, rec);
  }
  return {{"state", std::string(to_string(state))}, {"actions", rows}};
}

// ---------------------------------------------------------------------------
// SessionManager
// ---------------------------------------------------------------------------

SessionManager::SessionManager(std::shared_ptr<const Policy> policy, nlohmann::json policy_json,
                               std::chrono::seconds ttl, Clock clock)
    : policy_(std::move(policy)),
      policy_json_(std::move(policy_json)),
      costs_(policy_json_.at("costs").at("c1").get<double>(), policy_json_.at("costs").at("c2").get<double>()),
      ttl_(ttl),
      clock_(clock ? std::move(clock) : Clock([] { return std::chrono::steady_clock::now(); })),
      salt_(std::random_device{}()) {}

ApiResponse SessionManager::health() const {
  return {200, {{"status", "ok"}, {"version", std::string(version())}, {"method", policy_->method()}}};
}

ApiResponse SessionManager::policy_info() const { return {200, policy_metadata(policy_json_)}; }

std::string SessionManager::new_id() {
  std::mt19937_64 g(salt_ ^ (++counter_ * 0x9E3779B97F4A7C15ULL));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(g()));
  return buf;
}

std::size_t SessionManager::size() const {
  std::lock_guard lock(mutex_);
  return sessions_.size();
}

std::size_t SessionManager::evict_expired() {
  std::lock_guard lock(mutex_);
  const auto now = clock_();
  std::size_t removed = 0;
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    std::unique_lock session_lock(it->second->mutex, std::try_to_lock);
    if (session_lock.owns_lock() && now - it->second->last_access > ttl_) {
      session_lock.unlock();
      it = sessions_.erase(it);
      ++removed;
    } else {
      ++it;
    }
  }
  return removed;
}

std::shared_ptr<SessionManager::Session> SessionManager::find(const std::string& id) {
  evict_expired();
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ApiError{404, "unknown_session", "no session with id " + id, std::nullopt};
  return it->second;
}

nlohmann::json SessionManager::session_json(const Session& s) const {
  nlohmann::json j = {{"id", s.id}, {"state", std::string(to_string(s.state))}, {"observed", s.observed},
                      {"history", s.history}};
  j["x0"] = std::vector<double>(s.x0.data(), s.x0.data() + s.x0.size());
  for (int b : {1, 2}) {
    const auto& block = b == 1 ? s.x1 : s.x2;
    j["x" + std::to_string(b)] =
        block ? nlohmann::json(std::vector<double>(block->data(), block->data() + block->size())) : nlohmann::json();
  }
  return j;
}

ApiResponse SessionManager::create(const std::string& body) {
  return guarded([&]() -> ApiResponse {
    const auto j = parse_body(body);
    auto s = std::make_shared<Session>();
    s->x0 = parse_vector(j, "x0", policy_->dims().p0);
    const auto rec = recommend(*policy_, InformationState::S0, s->x0, std::nullopt, std::nullopt);
    s->history.push_back({{"event", "create"}, {"recommendation", rec}});
    s->last_access = clock_();
    evict_expired();
    {
      std::lock_guard lock(mutex_);
      s->id = new_id();
      while (sessions_.count(s->id)) s->id = new_id();
      sessions_[s->id] = s;
    }
    return {201, {{"id", s->id}, {"state", "S0"}, {"recommendation", rec}}};
  });
}

ApiResponse SessionManager::observe(const std::string& id, const std::string& body) {
  return guarded([&]() -> ApiResponse {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    s->last_access = clock_();
    const auto j = parse_body(body);
    if (!j.contains("test") || !j.at("test").is_number_integer()) {
      throw ApiError{400, "invalid_field", "test must be the integer 1 or 2", "test"};
    }
    const int test = j.at("test").get<int>();
    if (test != 1 && test != 2) throw ApiError{400, "invalid_field", "test must be the integer 1 or 2", "test"};
    const bool already = test == 1 ? s->x1.has_value() : s->x2.has_value();
    if (already || s->state == InformationState::S12) {
      throw ApiError{409, "inadmissible_action",
                     "test " + std::to_string(test) + " is not admissible at state " + std::string(to_string(s->state)),
                     "test"};
    }
    Vector values = parse_vector(j, "values", policy_->dims().of(test));
    (test == 1 ? s->x1 : s->x2) = std::move(values);
    s->observed.push_back(test);
    s->state = s->x1 && s->x2 ? InformationState::S12 : single_test_state(test);

    const auto rec = recommend(*policy_, s->state, s->x0, s->x1, s->x2);
    s->history.push_back({{"event", "observe"}, {"test", test}, {"recommendation", rec}});
    nlohmann::json out = {{"id", s->id}, {"state", std::string(to_string(s->state))}};
    out[s->state == InformationState::S12 ? "terminal" : "recommendation"] = rec;
    return {200, out};
  });
}

ApiResponse SessionManager::what_if(const std::string& id) {
  return guarded([&]() -> ApiResponse {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    s->last_access = clock_();
    nlohmann::json out = costq::what_if(*policy_, costs_, s->state, s->x0, s->x1, s->x2);
    out["id"] = s->id;
    return {200, out};
  });
}

ApiResponse SessionManager::get(const std::string& id) {
  return guarded([&]() -> ApiResponse {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    s->last_access = clock_();
    return {200, session_json(*s)};
  });
}

// ---------------------------------------------------------------------------
// HTTP routes
// ---------------------------------------------------------------------------

void mount_routes(httplib::Server& server, SessionManager& sessions) {
  auto send = [](httplib::Response& res, const ApiResponse& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), kJson);
  };
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Content-Type"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  server.Get("/health", [&, send](const httplib::Request&, httplib::Response& res) { send(res, sessions.health()); });
  server.Get("/policy",
             [&, send](const httplib::Request&, httplib::Response& res) { send(res, sessions.policy_info()); });
  server.Post("/sessions", [&, send](const httplib::Request& req, httplib::Response& res) {
    send(res, sessions.create(req.body));
  });
  server.Get(R"(/sessions/([0-9a-f]+))", [&, send](const httplib::Request& req, httplib::Response& res) {
    send(res, sessions.get(req.matches[1]));
  });
  server.Post(R"(/sessions/([0-9a-f]+)/observe)", [&, send](const httplib::Request& req, httplib::Response& res) {
    send(res, sessions.observe(req.matches[1], req.body));
  });
  server.Get(R"(/sessions/([0-9a-f]+)/whatif)", [&, send](const httplib::Request& req, httplib::Response& res) {
    send(res, sessions.what_if(req.matches[1]));
  });
  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    const ApiError e{res.status, res.status == 404 ? "not_found" : "http_error", "request could not be served",
                     std::nullopt};
    res.set_content(e.body().dump(), kJson);
  });
}

}  // namespace costq
