#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cbo::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ValueType { number, integer, text, list };

struct KeySchema {
  std::string section, key;
  ValueType type;
  std::string default_value;  // empty: required
  std::vector<std::string> choices{};
};

// Every key the tool understands, with its type and default.
inline const std::vector<KeySchema>& config_schema() {
  static const std::vector<KeySchema> schema = {
      {"objective", "kind", ValueType::text, "quadratic", {"quadratic"}},
      {"objective", "minimizer", ValueType::list, "0"},
      {"objective", "scale", ValueType::number, "1"},
      {"cutoff", "center", ValueType::list, "0"},
      {"cutoff", "radius", ValueType::number, "0.5"},
      {"params", "lambda", ValueType::number, "5"},
      {"params", "sigma", ValueType::number, "0.3"},
      {"params", "alpha", ValueType::number, "0.5"},
      {"params", "dim", ValueType::integer, "1"},
      {"params", "dt", ValueType::number, "0.0002"},
      {"params", "horizon", ValueType::number, "1"},
      {"params", "n_snapshots", ValueType::integer, "11"},
      {"params", "n_particles", ValueType::integer, "64"},
      {"experiment", "init", ValueType::text, "uniform", {"uniform", "point"}},
      {"experiment", "init_lo", ValueType::number, "-0.4"},
      {"experiment", "init_hi", ValueType::number, "0.4"},
      {"experiment", "init_at", ValueType::list, "0"},
      {"experiment", "study", ValueType::text, "weak", {"weak", "joint"}},
      {"experiment", "functional", ValueType::text, "variance", {"variance", "centered_fw", "centered_moment"}},
      {"experiment", "moment_coeffs", ValueType::list, "0,0,1"},
      {"experiment", "metric", ValueType::text, "w2", {"w2", "fw"}},
      {"experiment", "fw_s", ValueType::number, "4.5"},
      {"experiment", "xi_max", ValueType::number, "64"},
      {"experiment", "n_nodes", ValueType::integer, "1024"},
      {"experiment", "n_list", ValueType::list, "16,32,64,128,256"},
      {"experiment", "replicas", ValueType::integer, "2000"},
      {"experiment", "reference", ValueType::text, "grid", {"grid", "surrogate"}},
      {"experiment", "n_cells", ValueType::integer, "1024"},
      {"experiment", "n_ref", ValueType::integer, "4096"},
      {"experiment", "ref_replicas", ValueType::integer, "64"},
      {"experiment", "decay_slack", ValueType::number, "0.15"},
      {"experiment", "kind", ValueType::text, "m1", {"m1", "d1", "m2", "d2", "tangent"}},
      {"experiment", "z", ValueType::number, "-0.2"},
      {"experiment", "z2", ValueType::number, "0.3"},
      {"experiment", "mollify_width", ValueType::number, "0"},
      {"experiment", "dictionary_size", ValueType::integer, "48"},
      {"experiment", "dictionary_seed", ValueType::integer, "7"},
      {"experiment", "tangent_x", ValueType::number, "0.3"},
      {"experiment", "tangent_replicas", ValueType::integer, "100000"},
      {"experiment", "tangent_dt", ValueType::number, "0.001"},
      {"experiment", "tangent_offsets", ValueType::list, "0.1,0.5,1"},
      {"output", "tag", ValueType::text, "run"},
  };
  return schema;
}

inline std::string trim(std::string s) {
  auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
  return s;
}

// Shortest text that parses back to the same double.
inline std::string format_number(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline bool parse_double(const std::string& s, double& out) {
  const std::string t = trim(s);
  if (t.empty()) return false;
  const char* b = t.data();
  const char* e = b + t.size();
  if (*b == '+') ++b;
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e && std::isfinite(out);
}

inline std::vector<std::string> split_list(std::string s) {
  s = trim(s);
  if (!s.empty() && s.front() == '[' && s.back() == ']') s = s.substr(1, s.size() - 2);
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Typed, canonicalized value; throws with the key name when malformed.
inline std::string canonical_value(const KeySchema& k, const std::string& raw, const std::string& where) {
  const std::string v = trim(raw);
  auto bad = [&](const std::string& what) {
    throw ConfigError(where + "key '" + k.section + "." + k.key + "': " + what + " (got '" + v + "')");
  };
  switch (k.type) {
    case ValueType::number: {
      double d;
      if (!parse_double(v, d)) bad("expected a number");
      return format_number(d);
    }
    case ValueType::integer: {
      double d;
      if (!parse_double(v, d) || d < 0 || d != std::floor(d) || d > 9.0e15) bad("expected a nonnegative integer");
      return std::to_string(static_cast<std::uint64_t>(d));
    }
    case ValueType::text: {
      if (v.empty()) bad("expected a value");
      if (!k.choices.empty() && std::find(k.choices.begin(), k.choices.end(), v) == k.choices.end()) {
        std::string all;
        for (const auto& c : k.choices) all += (all.empty() ? "" : "|") + c;
        bad("expected one of " + all);
      }
      return v;
    }
    case ValueType::list: {
      const auto items = split_list(v);
      if (items.empty()) bad("expected a comma-separated list of numbers");
      std::string out;
      for (const auto& it : items) {
        double d;
        if (!parse_double(it, d)) bad("list entries must be numbers");
        out += (out.empty() ? "" : ",") + format_number(d);
      }
      return out;
    }
  }
  return v;
}

// Resolved configuration: every schema key present with a canonical value.
class Config {
 public:
  static Config parse(const std::string& text, const std::string& origin = "config") {
    std::map<std::string, std::map<std::string, std::string>> given;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    const auto& schema = config_schema();
    while (std::getline(in, line)) {
      ++lineno;
      const std::string where = origin + ":" + std::to_string(lineno) + ": ";
      std::string s = line;
      const auto hash = s.find_first_of("#;");
      if (hash != std::string::npos) s = s.substr(0, hash);
      s = trim(s);
      if (s.empty()) continue;
      if (s.front() == '[') {
        if (s.back() != ']') throw ConfigError(where + "unterminated section header");
        section = trim(s.substr(1, s.size() - 2));
        const bool known = std::any_of(schema.begin(), schema.end(), [&](const KeySchema& k) { return k.section == section; });
        if (!known) throw ConfigError(where + "unknown section [" + section + "]");
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
      const std::string key = trim(s.substr(0, eq));
      if (section.empty()) throw ConfigError(where + "key '" + key + "' appears before any section");
      const auto it = std::find_if(schema.begin(), schema.end(),
                                   [&](const KeySchema& k) { return k.section == section && k.key == key; });
      if (it == schema.end()) throw ConfigError(where + "unknown key '" + section + "." + key + "'");
      if (given[section].count(key)) throw ConfigError(where + "duplicate key '" + section + "." + key + "'");
      given[section][key] = canonical_value(*it, s.substr(eq + 1), where);
    }
    Config c;
    for (const auto& k : schema) {
      auto sec = given.find(k.section);
      if (sec != given.end() && sec->second.count(k.key))
        c.values_[k.section][k.key] = sec->second.at(k.key);
      else
        c.values_[k.section][k.key] = canonical_value(k, k.default_value, origin + ": default for ");
    }
    return c;
  }

  static Config load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path);
  }

  static Config defaults() { return parse(""); }

  const std::string& raw(const std::string& section, const std::string& key) const {
    auto s = values_.find(section);
    if (s == values_.end() || !s->second.count(key)) throw ConfigError("no such key " + section + "." + key);
    return s->second.at(key);
  }
  double number(const std::string& section, const std::string& key) const {
    double d = 0.0;
    parse_double(raw(section, key), d);
    return d;
  }
  std::uint64_t integer(const std::string& section, const std::string& key) const {
    return static_cast<std::uint64_t>(number(section, key));
  }
  const std::string& text(const std::string& section, const std::string& key) const { return raw(section, key); }
  std::vector<double> list(const std::string& section, const std::string& key) const {
    std::vector<double> out;
    for (const auto& it : split_list(raw(section, key))) {
      double d = 0.0;
      parse_double(it, d);
      out.push_back(d);
    }
    return out;
  }

  // Overrides one key with validation (used by tests and scripted sweeps).
  void set(const std::string& section, const std::string& key, const std::string& value) {
    const auto& schema = config_schema();
    const auto it = std::find_if(schema.begin(), schema.end(),
                                 [&](const KeySchema& k) { return k.section == section && k.key == key; });
    if (it == schema.end()) throw ConfigError("unknown key '" + section + "." + key + "'");
    values_[section][key] = canonical_value(*it, value, "");
  }

  // Sorted sections and keys, one 'key = value' per line.
  std::string canonical() const {
    std::string out;
    for (const auto& [sec, kv] : values_) {
      out += "[" + sec + "]\n";
      for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    }
    return out;
  }

  const std::map<std::string, std::map<std::string, std::string>>& values() const { return values_; }

  bool operator==(const Config& o) const { return values_ == o.values_; }

 private:
  std::map<std::string, std::map<std::string, std::string>> values_;
};

inline constexpr const char* kVersionTag = "cbo-1.0";

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string make_run_id(const std::string& command, const Config& cfg, std::uint64_t seed) {
  const std::string doc = command + "\n" + cfg.canonical() + "seed=" + std::to_string(seed) + "\n" + kVersionTag;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(doc)));
  return command + "-" + buf;
}

}  // namespace cbo::cli
