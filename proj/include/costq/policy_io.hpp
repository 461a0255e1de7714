#pragma once

#include "costq/policy.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>

namespace costq {

inline constexpr const char* kPolicyFormat = "costq-policy";
inline constexpr int kPolicyFormatVersion = 1;

/// Serializes ContrastPolicy, OneTimePolicy and FixedPolicy instances.
nlohmann::json policy_to_json(const Policy& policy);
/// Throws SchemaError on unknown formats, versions or kinds.
std::unique_ptr<Policy> policy_from_json(const nlohmann::json& j);

void save_policy(const std::filesystem::path& path, const Policy& policy);
std::unique_ptr<Policy> load_policy(const std::filesystem::path& path);

/// Method, dims, per-block feature labels, costs and training metadata of a policy file.
nlohmann::json policy_metadata(const nlohmann::json& policy_json);

}  // namespace costq
