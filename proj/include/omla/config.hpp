#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "omla/data.hpp"
#include "omla/eval.hpp"
#include "omla/pretrain.hpp"

namespace omla {

enum class ConfigType { kInt, kUInt, kDouble, kBool, kString, kIntList };

struct ConfigKey {
  const char* name;
  ConfigType type;
  const char* default_value;
  const char* help;
  const char* provenance;  // "published", "ledger" or "desk"
};

/// Every recognised key, in documentation order.
const std::vector<ConfigKey>& config_keys();

/// Experiment configuration: `key = value` lines, `#` comments, UTF-8.
/// Unknown keys and malformed values raise ConfigError.
class ExperimentConfig {
 public:
  ExperimentConfig();

  static ExperimentConfig parse(const std::string& text, const std::string& source = "<config>");
  static ExperimentConfig load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  const std::string& raw(const std::string& key) const;

  long long get_int(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  const std::string& get_string(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;

  /// Canonical `key = value` dump of every key.
  std::string dump() const;

 private:
  std::map<std::string, std::string> values_;
};

/// Text listing every key with default and provenance, for --help.
std::string config_help();

NetConfig net_config(const ExperimentConfig& c);
LossConfig loss_config(const ExperimentConfig& c);
EvalConfig eval_config(const ExperimentConfig& c);
OnlineOptions online_options(const ExperimentConfig& c, const std::string& method);
StandardConfig standard_config(const ExperimentConfig& c);
MetaConfig meta_config(const ExperimentConfig& c);
DomainSpec domain_config(const ExperimentConfig& c, const std::string& prefix);  // "source" or "target"

}  // namespace omla
