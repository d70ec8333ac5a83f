#pragma once

// Study configuration: JSON parsing with line-numbered errors, defaults, and the resolved
// configuration that is echoed into report.json.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "target.hpp"

namespace wassdiff {

inline const std::vector<std::string>& study_names() {
  static const std::vector<std::string> names{"rates",           "bounds-check", "init-asymptotics",
                                              "early-stopping",  "explosion",    "w2-selftest"};
  return names;
}

/// A configuration problem, located at a line of the source file (0 if unknown).
class ConfigError : public Error {
 public:
  ConfigError(const std::string& source, std::size_t line, const std::string& message)
      : Error(ErrorKind::invalid_input,
              source + ":" + std::to_string(line) + ": " + message),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// The raw text of a configuration, its parsed form, and the means to locate keys in it.
class ConfigSource {
 public:
  static ConfigSource from_text(std::string text, std::string name,
                                std::filesystem::path base_dir = ".") {
    ConfigSource src;
    src.text_ = std::move(text);
    src.name_ = std::move(name);
    src.base_dir_ = std::move(base_dir);
    try {
      src.root_ = nlohmann::json::parse(src.text_);
    } catch (const nlohmann::json::parse_error& e) {
      const std::size_t offset = e.byte == 0 ? 0 : e.byte - 1;
      std::string what = e.what();
      // Drop the library prefix "[json.exception.parse_error.101] parse error at line ..., ".
      const auto colon = what.find(": ");
      if (colon != std::string::npos) what = what.substr(colon + 2);
      throw ConfigError(src.name_, src.line_at(offset), "malformed JSON: " + what);
    }
    if (!src.root_.is_object()) throw ConfigError(src.name_, 1, "configuration must be a JSON object");
    return src;
  }

  static ConfigSource from_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) throw ConfigError(path.string(), 0, "cannot open configuration file");
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_text(buf.str(), path.string(), path.parent_path());
  }

  const nlohmann::json& root() const { return root_; }
  const std::string& name() const { return name_; }
  const std::filesystem::path& base_dir() const { return base_dir_; }

  std::size_t line_at(std::size_t offset) const {
    offset = std::min(offset, text_.size());
    return 1 + static_cast<std::size_t>(std::count(text_.begin(), text_.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
  }

  /// Line of the deepest key of a dotted path that can be found, searching each component
  /// after the previous one. Falls back to line 1.
  std::size_t line_of(const std::string& dotted) const {
    std::size_t pos = 0;
    std::size_t found = std::string::npos;
    std::stringstream parts(dotted);
    std::string key;
    while (std::getline(parts, key, '.')) {
      if (key.empty()) continue;
      const auto p = text_.find("\"" + key + "\"", pos);
      if (p == std::string::npos) break;
      pos = p;
      found = p;
    }
    return found == std::string::npos ? 1 : line_at(found);
  }

  [[noreturn]] void fail(const std::string& dotted, const std::string& message) const {
    throw ConfigError(name_, line_of(dotted), message);
  }

 private:
  std::string text_;
  std::string name_;
  std::filesystem::path base_dir_;
  nlohmann::json root_;
};

/// Typed access to one JSON object of the configuration. Every read records the resolved
/// value (given or default) into `out`; finish() rejects keys that were never read.
class Section {
 public:
  Section(const ConfigSource& src, const nlohmann::json& obj, std::string path, nlohmann::json& out)
      : src_(&src), obj_(&obj), path_(std::move(path)), out_(&out) {
    if (!out_->is_object()) *out_ = nlohmann::json::object();
  }

  bool has(const std::string& key) const { return obj_->contains(key); }

  [[noreturn]] void fail(const std::string& key, const std::string& message) const {
    src_->fail(full(key), full(key) + ": " + message);
  }

  double number(const std::string& key, std::optional<double> fallback = std::nullopt) {
    const auto* v = lookup(key);
    double value;
    if (!v) {
      if (!fallback) fail(key, "required number is missing");
      value = *fallback;
    } else {
      if (!v->is_number()) fail(key, "expected a number");
      value = v->get<double>();
    }
    if (!std::isfinite(value)) fail(key, "must be finite");
    (*out_)[key] = value;
    return value;
  }

  double positive(const std::string& key, std::optional<double> fallback = std::nullopt) {
    const double v = number(key, fallback);
    if (!(v > 0.0)) fail(key, "must be > 0");
    return v;
  }

  std::uint64_t integer(const std::string& key, std::optional<std::uint64_t> fallback = std::nullopt,
                        std::uint64_t min = 0) {
    const auto* v = lookup(key);
    std::uint64_t value;
    if (!v) {
      if (!fallback) fail(key, "required integer is missing");
      value = *fallback;
    } else {
      if (v->is_number_unsigned()) {
        value = v->get<std::uint64_t>();
      } else if (v->is_number_float() && v->get<double>() >= 0.0 &&
                 v->get<double>() == std::floor(v->get<double>()) && v->get<double>() < 0x1p63) {
        value = static_cast<std::uint64_t>(v->get<double>());
      } else {
        fail(key, "expected a non-negative integer");
      }
    }
    if (value < min) fail(key, "must be >= " + std::to_string(min));
    (*out_)[key] = value;
    return value;
  }

  std::string text(const std::string& key, std::optional<std::string> fallback = std::nullopt) {
    const auto* v = lookup(key);
    std::string value;
    if (!v) {
      if (!fallback) fail(key, "required string is missing");
      value = *fallback;
    } else {
      if (!v->is_string()) fail(key, "expected a string");
      value = v->get<std::string>();
    }
    (*out_)[key] = value;
    return value;
  }

  std::string choice(const std::string& key, const std::vector<std::string>& allowed,
                     std::optional<std::string> fallback = std::nullopt) {
    const std::string value = text(key, std::move(fallback));
    if (std::find(allowed.begin(), allowed.end(), value) == allowed.end()) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      fail(key, "'" + value + "' is not one of: " + list);
    }
    return value;
  }

  bool flag(const std::string& key, bool fallback) {
    const auto* v = lookup(key);
    bool value = fallback;
    if (v) {
      if (!v->is_boolean()) fail(key, "expected true or false");
      value = v->get<bool>();
    }
    (*out_)[key] = value;
    return value;
  }

  /// A non-empty array of numbers.
  std::vector<double> numbers(const std::string& key,
                              std::optional<std::vector<double>> fallback = std::nullopt) {
    const auto* v = lookup(key);
    std::vector<double> value;
    if (!v) {
      if (!fallback) fail(key, "required array is missing");
      value = *fallback;
    } else {
      if (!v->is_array()) fail(key, "expected an array of numbers");
      for (const auto& e : *v) {
        if (!e.is_number()) fail(key, "expected an array of numbers");
        value.push_back(e.get<double>());
      }
    }
    if (value.empty()) fail(key, "must not be empty");
    for (double x : value) {
      if (!std::isfinite(x)) fail(key, "entries must be finite");
    }
    (*out_)[key] = value;
    return value;
  }

  std::vector<double> positives(const std::string& key,
                                std::optional<std::vector<double>> fallback = std::nullopt) {
    auto value = numbers(key, std::move(fallback));
    for (double x : value) {
      if (!(x > 0.0)) fail(key, "entries must be > 0");
    }
    return value;
  }

  std::vector<std::uint64_t> integers(const std::string& key,
                                      std::optional<std::vector<std::uint64_t>> fallback,
                                      std::uint64_t min = 0) {
    const auto* v = lookup(key);
    std::vector<std::uint64_t> value;
    if (!v) {
      if (!fallback) fail(key, "required array is missing");
      value = *fallback;
    } else {
      if (!v->is_array()) fail(key, "expected an array of integers");
      for (const auto& e : *v) {
        if (!e.is_number_unsigned()) fail(key, "expected an array of non-negative integers");
        value.push_back(e.get<std::uint64_t>());
      }
    }
    if (value.empty()) fail(key, "must not be empty");
    for (auto x : value) {
      if (x < min) fail(key, "entries must be >= " + std::to_string(min));
    }
    (*out_)[key] = value;
    return value;
  }

  std::vector<std::string> texts(const std::string& key,
                                 std::optional<std::vector<std::string>> fallback = std::nullopt) {
    const auto* v = lookup(key);
    std::vector<std::string> value;
    if (!v) {
      if (!fallback) fail(key, "required array is missing");
      value = *fallback;
    } else {
      if (!v->is_array()) fail(key, "expected an array of strings");
      for (const auto& e : *v) {
        if (!e.is_string()) fail(key, "expected an array of strings");
        value.push_back(e.get<std::string>());
      }
    }
    if (value.empty()) fail(key, "must not be empty");
    (*out_)[key] = value;
    return value;
  }

  /// A nested object; a missing key gives an empty object, so every field takes its default.
  Section child(const std::string& key) {
    const auto* v = lookup(key);
    if (v && !v->is_object()) fail(key, "expected an object");
    static const nlohmann::json empty = nlohmann::json::object();
    return Section(*src_, v ? *v : empty, full(key), (*out_)[key]);
  }

  /// Raw access for fields with their own parser. Marks the key as known.
  const nlohmann::json* raw(const std::string& key) { return lookup(key); }
  nlohmann::json& resolved(const std::string& key) { return (*out_)[key]; }
  void ignore(const std::string& key) { known_.insert(key); }

  void finish() const {
    for (auto it = obj_->begin(); it != obj_->end(); ++it) {
      if (!known_.count(it.key())) fail(it.key(), "unknown key");
    }
  }

  std::string full(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  const ConfigSource& source() const { return *src_; }

 private:
  const nlohmann::json* lookup(const std::string& key) {
    known_.insert(key);
    const auto it = obj_->find(key);
    return it == obj_->end() ? nullptr : &*it;
  }

  const ConfigSource* src_;
  const nlohmann::json* obj_;
  std::string path_;
  nlohmann::json* out_;
  std::set<std::string> known_;
};

/// A fully resolved study configuration.
struct ExperimentConfig {
  std::string study;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
  int threads = 1;
  std::shared_ptr<const TargetDistribution> target;  // null when the study takes none
  nlohmann::json resolved;  // every parameter with defaults filled in; no out or threads
};

struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out_dir;
  int threads = 1;
};

namespace detail {

/// Reads the target (inline object or path to a JSON file) and stores it inline in `out`.
inline std::shared_ptr<const TargetDistribution> read_target(Section& top, bool required) {
  const auto* v = top.raw("target");
  if (!v) {
    if (required) top.fail("target", "required target is missing");
    return nullptr;
  }
  nlohmann::json doc;
  if (v->is_string()) {
    std::filesystem::path path = v->get<std::string>();
    if (path.is_relative()) path = top.source().base_dir() / path;
    std::ifstream in(path);
    if (!in.good()) top.fail("target", "target file '" + path.string() + "' does not exist");
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      top.fail("target", "target file '" + path.string() + "' is not valid JSON");
    }
  } else if (v->is_object()) {
    doc = *v;
  } else {
    top.fail("target", "expected an object or a file path");
  }
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (it.key() != "points" && it.key() != "weights" && it.key() != "tau") {
      top.fail("target", "unknown target key '" + it.key() + "'");
    }
  }
  try {
    auto target = std::make_shared<const TargetDistribution>(target_from_json(doc));
    top.resolved("target") = doc;
    return target;
  } catch (const Error& e) {
    top.fail("target", e.what());
  } catch (const nlohmann::json::exception& e) {
    top.fail("target", std::string("malformed target: ") + e.what());
  }
}

}  // namespace detail

}  // namespace wassdiff
