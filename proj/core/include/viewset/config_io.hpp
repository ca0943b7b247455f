#pragma once

#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>

#include "viewset/config.hpp"

namespace viewset {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Everything a command can be configured with.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string features;
  std::string manifest;
  std::string out;
};

/// Parses `key=value` lines; '#' starts a comment. Keys absent from the file keep
/// the values already in `into`. Unknown keys and unparsable values throw ConfigError.
void parse_run_config(std::istream& in, RunConfig& into, const std::string& source = "<config>");
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);
/// Every recognized key with its current value, one `key=value` per line, in fixed order.
std::string format_run_config(const RunConfig& cfg);

std::string format_model_config(const ModelConfig& cfg);
/// Inverse of format_model_config; every model key must be present.
ModelConfig parse_model_config(const std::string& text, const std::string& source);

}  // namespace viewset
