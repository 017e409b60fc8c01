#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cfinet {

// Flat key=value configuration with '#' comments. Layering: values parsed
// later overwrite earlier ones, so file < CLI overrides.
class ConfigMap {
 public:
  ConfigMap() = default;

  static ConfigMap from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    ConfigMap c;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      c.parse_line(line, path, lineno);
    }
    return c;
  }

  void parse_line(const std::string& raw, const std::string& src = "<string>", int lineno = 0) {
    std::string line = raw;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) return;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: missing '=' at " + src + ":" + std::to_string(lineno));
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error("config: empty key at " + src + ":" + std::to_string(lineno));
    kv_[key] = val;
  }

  // Accepts "key=value" override strings from the CLI.
  void apply_override(const std::string& kveq) {
    auto eq = kveq.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: override must be key=value, got '" + kveq + "'");
    kv_[trim(kveq.substr(0, eq))] = trim(kveq.substr(eq + 1));
  }

  void merge_from(const ConfigMap& other) {
    for (const auto& [k, v] : other.kv_) kv_[k] = v;
  }

  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  std::string get_str(const std::string& key, const std::string& dflt) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? dflt : it->second;
  }
  double get_double(const std::string& key, double dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    try {
      size_t pos = 0;
      double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw std::runtime_error("config: bad number for " + key + ": '" + it->second + "'");
    }
  }
  int64_t get_int(const std::string& key, int64_t dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    try {
      size_t pos = 0;
      int64_t v = std::stoll(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw std::runtime_error("config: bad integer for " + key + ": '" + it->second + "'");
    }
  }
  bool get_bool(const std::string& key, bool dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    const std::string& s = it->second;
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw std::runtime_error("config: bad bool for " + key + ": '" + s + "'");
  }

  void set_str(const std::string& key, const std::string& v) { kv_[key] = v; }
  void set_double(const std::string& key, double v) { kv_[key] = format_double(v); }
  void set_int(const std::string& key, int64_t v) { kv_[key] = std::to_string(v); }
  void set_bool(const std::string& key, bool v) { kv_[key] = v ? "true" : "false"; }

  // Shortest decimal string that round-trips the double exactly.
  static std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    double back = 0.0;
    std::sscanf(buf, "%lf", &back);
    for (int prec = 1; prec < 17; ++prec) {
      char shorter[64];
      std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
      std::sscanf(shorter, "%lf", &back);
      if (back == v) return shorter;
    }
    return buf;
  }

  // Sorted, normalized dump; parsing it back reproduces the map exactly.
  std::string serialize() const {
    std::ostringstream out;
    for (const auto& [k, v] : kv_) out << k << " = " << v << "\n";
    return out.str();
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("config: cannot write " + path);
    out << serialize();
  }

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  static std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> kv_;
};

}  // namespace cfinet
