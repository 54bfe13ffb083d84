#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "vlur/core/common.hpp"
#include "vlur/losses/losses.hpp"
#include "vlur/restorer/restorer.hpp"

namespace vlur {

// Layered configuration with dotted keys. Precedence: flag overrides > config
// file > built-in defaults. The effective (merged, flat) map is echoed into
// every output artifact for provenance.
class Config {
 public:
  Config();

  void load_file(const std::string& path);
  // "key=value"; value parsed as JSON when possible, else taken as a string
  void set_override(const std::string& key_equals_value);
  void set(const std::string& key, const nlohmann::json& value);

  bool has(const std::string& key) const;
  double get_double(const std::string& key) const;
  int64_t get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::vector<int64_t> get_int_list(const std::string& key) const;

  // flat key -> value, fully merged
  nlohmann::json effective() const;

  restorer::RestorerConfig restorer_config() const;
  losses::LossWeights loss_weights() const;

  static const nlohmann::json& defaults();

 private:
  const nlohmann::json* find(const std::string& key) const;
  nlohmann::json file_;       // flattened
  nlohmann::json overrides_;  // flattened
};

}  // namespace vlur
