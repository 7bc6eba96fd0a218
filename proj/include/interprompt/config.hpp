#pragma once

// Human-editable key-value config files:
//
//   [template]
//   separator = "\n\nIntent:\n\n"
//   [backend]
//   max_parallel = 4
//
// Values may be double-quoted; quoted values use C escapes (\n, \t, \", \\)
// so leading/trailing whitespace and newlines survive.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include "interprompt/text.hpp"

namespace interprompt {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Config {
 public:
  Config() = default;

  static Config parse(const std::string& content) {
    std::istringstream in(content);
    boost::property_tree::ptree tree;
    try {
      boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    Config cfg;
    for (const auto& [section, body] : tree) {
      if (body.empty()) {
        cfg.values_[section] = decode(body.data());
        continue;
      }
      for (const auto& [key, leaf] : body) cfg.values_[section + "." + key] = decode(leaf.data());
    }
    return cfg;
  }

  static Config load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config file not found: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  std::optional<std::string> get(const std::string& section, const std::string& key) const {
    auto it = values_.find(section + "." + key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  void set(const std::string& section, const std::string& key, std::string value) {
    values_[section + "." + key] = std::move(value);
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  /// Serializes one section with every value quoted and escaped.
  std::string section_text(const std::string& section) const {
    std::string out = "[" + section + "]\n";
    const std::string prefix = section + ".";
    for (const auto& [k, v] : values_)
      if (k.rfind(prefix, 0) == 0) out += k.substr(prefix.size()) + " = \"" + text::escape(v) + "\"\n";
    return out;
  }

 private:
  static std::string decode(const std::string& raw) {
    const auto v = text::trim_view(raw);
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return text::unescape(v.substr(1, v.size() - 2));
    return std::string(v);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace interprompt
