#include "viewset/config_io.hpp"

#include <charconv>
#include <functional>
#include <istream>
#include <set>
#include <sstream>
#include <vector>

namespace viewset {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("invalid value '" + v + "' for key '" + key + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw ConfigError("invalid boolean '" + v + "' for key '" + key + "'");
}

// shortest text that parses back to the same double
std::string fmt_double(double d) {
  char buf[40];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, d);
  return std::string(buf, end);
}

struct Key {
  const char* name;
  bool model_key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SIZE_KEY(NAME, FIELD, IS_MODEL)                                                      \
  Key {                                                                                      \
    NAME, IS_MODEL,                                                                          \
        [](RunConfig& c, const std::string& v) { c.FIELD = parse_number<std::size_t>(NAME, v); }, \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                           \
  }
#define REAL_KEY(NAME, FIELD, IS_MODEL)                                                \
  Key {                                                                                \
    NAME, IS_MODEL,                                                                    \
        [](RunConfig& c, const std::string& v) { c.FIELD = parse_number<double>(NAME, v); }, \
        [](const RunConfig& c) { return fmt_double(c.FIELD); }                         \
  }
#define BOOL_KEY(NAME, FIELD, IS_MODEL)                                               \
  Key {                                                                               \
    NAME, IS_MODEL, [](RunConfig& c, const std::string& v) { c.FIELD = parse_bool(NAME, v); }, \
        [](const RunConfig& c) { return std::string(c.FIELD ? "true" : "false"); }    \
  }
#define STR_KEY(NAME, FIELD)                                                           \
  Key {                                                                                \
    NAME, false, [](RunConfig& c, const std::string& v) { c.FIELD = v; },              \
        [](const RunConfig& c) { return c.FIELD; }                                     \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      SIZE_KEY("dim_in", model.dim_in, true),
      SIZE_KEY("dim_view", model.dim_view, true),
      SIZE_KEY("num_blocks", model.num_blocks, true),
      SIZE_KEY("num_heads", model.num_heads, true),
      SIZE_KEY("mlp_ratio", model.mlp_ratio, true),
      REAL_KEY("dropout_rate", model.dropout_rate, true),
      SIZE_KEY("num_classes", model.num_classes, true),
      BOOL_KEY("use_position_encoding", model.use_position_encoding, true),
      BOOL_KEY("use_class_token", model.use_class_token, true),
      SIZE_KEY("max_views", model.max_views, true),
      SIZE_KEY("decoder_depth", model.decoder_depth, true),
      SIZE_KEY("decoder_hidden", model.decoder_hidden, true),
      REAL_KEY("norm_eps", model.norm_eps, true),
      REAL_KEY("bn_momentum", model.bn_momentum, true),
      SIZE_KEY("epochs", train.epochs, false),
      REAL_KEY("peak_lr", train.peak_lr, false),
      SIZE_KEY("restart_interval", train.restart_interval, false),
      SIZE_KEY("warmup_epochs", train.warmup_epochs, false),
      REAL_KEY("peak_decay", train.peak_decay, false),
      REAL_KEY("weight_decay", train.weight_decay, false),
      REAL_KEY("beta1", train.beta1, false),
      REAL_KEY("beta2", train.beta2, false),
      REAL_KEY("adam_eps", train.adam_eps, false),
      SIZE_KEY("batch_size", train.batch_size, false),
      Key{"seed", false,
          [](RunConfig& c, const std::string& v) { c.train.seed = parse_number<std::uint64_t>("seed", v); },
          [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      SIZE_KEY("views_per_shape", train.views_per_shape, false),
      BOOL_KEY("freeze_adapter", train.freeze_adapter, false),
      STR_KEY("features", features),
      STR_KEY("manifest", manifest),
      STR_KEY("out", out),
  };
  return table;
}

const Key* find_key(const std::string& name) {
  for (const auto& k : keys())
    if (name == k.name) return &k;
  return nullptr;
}

}  // namespace

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  const Key* k = find_key(key);
  if (!k) throw ConfigError("unknown config key '" + key + "'");
  k->set(cfg, value);
}

void parse_run_config(std::istream& in, RunConfig& into, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw ConfigError(where + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError(where + ": duplicate key '" + key + "'");
    try {
      apply_setting(into, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
}

std::string format_run_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : keys()) out += std::string(k.name) + "=" + k.get(cfg) + "\n";
  return out;
}

std::string format_model_config(const ModelConfig& cfg) {
  RunConfig rc;
  rc.model = cfg;
  std::string out;
  for (const auto& k : keys())
    if (k.model_key) out += std::string(k.name) + "=" + k.get(rc) + "\n";
  return out;
}

ModelConfig parse_model_config(const std::string& text, const std::string& source) {
  RunConfig rc;
  std::istringstream in(text);
  parse_run_config(in, rc, source);
  for (const auto& k : keys()) {
    if (!k.model_key) continue;
    if (text.find(std::string(k.name) + "=") == std::string::npos) {
      throw ConfigError(source + ": model config lacks key '" + k.name + "'");
    }
  }
  return rc.model;
}

}  // namespace viewset
