#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gvb {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat key-value configuration with [section] headers, '=' assignments and
// '#' comments.
class Config {
 public:
  using Section = std::map<std::string, std::string>;

  static Config parse_string(const std::string& text, const std::string& origin) {
    Config cfg;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw ConfigError(origin + ": line " + std::to_string(lineno) +
                            ": malformed section header");
        section = trim(line.substr(1, line.size() - 2));
        cfg.sections_[section];
        continue;
      }
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ": line " + std::to_string(lineno) +
                          ": expected key = value");
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (key.empty())
        throw ConfigError(origin + ": line " + std::to_string(lineno) + ": empty key");
      cfg.sections_[section][key] = value;
    }
    return cfg;
  }

  static Config parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str(), path);
  }

  bool has(const std::string& section, const std::string& key) const {
    auto s = sections_.find(section);
    return s != sections_.end() && s->second.count(key) > 0;
  }

  std::string get(const std::string& section, const std::string& key) const {
    auto s = sections_.find(section);
    if (s == sections_.end() || !s->second.count(key))
      throw ConfigError("missing config key [" + section + "] " + key);
    return s->second.at(key);
  }

  std::string get_or(const std::string& section, const std::string& key,
                     const std::string& fallback) const {
    return has(section, key) ? get(section, key) : fallback;
  }

  double get_double(const std::string& section, const std::string& key) const {
    return to_double(section, key, get(section, key));
  }
  double get_double_or(const std::string& section, const std::string& key,
                       double fallback) const {
    return has(section, key) ? get_double(section, key) : fallback;
  }
  int get_int_or(const std::string& section, const std::string& key,
                 int fallback) const {
    return has(section, key)
               ? static_cast<int>(to_double(section, key, get(section, key)))
               : fallback;
  }
  bool get_bool_or(const std::string& section, const std::string& key,
                   bool fallback) const {
    if (!has(section, key)) return fallback;
    std::string v = get(section, key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key [" + section + "] " + key +
                      ": expected a boolean, got '" + v + "'");
  }

  std::vector<double> get_list(const std::string& section,
                               const std::string& key) const {
    std::vector<double> out;
    std::stringstream ss(get(section, key));
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      cell = trim(cell);
      if (cell.empty()) continue;
      out.push_back(to_double(section, key, cell));
    }
    return out;
  }

  const std::map<std::string, Section>& sections() const { return sections_; }

 private:
  static std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  double to_double(const std::string& section, const std::string& key,
                   const std::string& v) const {
    try {
      std::size_t used = 0;
      double x = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument("trailing");
      return x;
    } catch (const std::exception&) {
      throw ConfigError("config key [" + section + "] " + key +
                        ": expected a number, got '" + v + "'");
    }
  }

  std::map<std::string, Section> sections_;
};

}  // namespace gvb
