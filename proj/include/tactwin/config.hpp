#pragma once

// Sectioned key-value text files:
//
//   # comment
//   [section]
//   key = value
//
// Every entry remembers its line so that consumers can reject unknown keys
// and report bad values with a location. Duplicate sections and duplicate
// keys within a section are errors.

#include "tactwin/core.hpp"

#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace tactwin::config {

struct Entry {
  std::string key;
  std::string value;
  int line = 0;
  mutable bool used = false;
};

struct Section {
  std::string name;
  int line = 0;
  std::vector<Entry> entries;
  mutable bool used = false;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

class Document {
 public:
  Document() = default;
  explicit Document(std::string source) : source_(std::move(source)) {}

  static Document parse(std::string_view text, std::string source = "<string>") {
    Document doc(std::move(source));
    std::istringstream in{std::string(text)};
    std::string raw;
    int line_no = 0;
    Section* current = nullptr;
    while (std::getline(in, raw)) {
      ++line_no;
      std::string line = detail::trim(raw);
      if (line.empty() || line[0] == '#' || line[0] == ';') continue;
      if (line.front() == '[') {
        if (line.back() != ']') doc.fail(line_no, "unterminated section header");
        std::string name = detail::trim(std::string_view(line).substr(1, line.size() - 2));
        if (name.empty()) doc.fail(line_no, "empty section name");
        if (const Section* prev = doc.find(name)) {
          doc.fail(line_no, "duplicate section [" + name + "] (first defined on line " +
                                std::to_string(prev->line) + ")");
        }
        doc.sections_.push_back(Section{name, line_no, {}});
        current = &doc.sections_.back();
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) doc.fail(line_no, "expected 'key = value'");
      if (current == nullptr) doc.fail(line_no, "key outside of any section");
      std::string key = detail::trim(std::string_view(line).substr(0, eq));
      std::string value = detail::trim(std::string_view(line).substr(eq + 1));
      if (key.empty()) doc.fail(line_no, "empty key");
      for (const auto& e : current->entries) {
        if (e.key == key) {
          doc.fail(line_no, "duplicate key '" + key + "' in [" + current->name +
                                "] (first defined on line " + std::to_string(e.line) + ")");
        }
      }
      current->entries.push_back(Entry{std::move(key), std::move(value), line_no});
    }
    return doc;
  }

  static Document load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError(path + ": cannot open file");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path);
  }

  [[nodiscard]] const std::string& source() const { return source_; }
  [[nodiscard]] const std::vector<Section>& sections() const { return sections_; }

  [[nodiscard]] const Section* find(std::string_view name) const {
    for (const auto& s : sections_) {
      if (s.name == name) return &s;
    }
    return nullptr;
  }

  /// Marks the section as consumed and returns it (nullptr if absent).
  const Section* take(std::string_view name) const {
    const Section* s = find(name);
    if (s != nullptr) s->used = true;
    return s;
  }

  [[noreturn]] void fail(int line, const std::string& what) const {
    throw ConfigError(source_ + ":" + std::to_string(line) + ": " + what);
  }

  /// Throws for the first section or key that no consumer looked at.
  void reject_unused() const {
    for (const auto& s : sections_) {
      if (!s.used) fail(s.line, "unknown section [" + s.name + "]");
      for (const auto& e : s.entries) {
        if (!e.used) fail(e.line, "unknown key '" + e.key + "' in [" + s.name + "]");
      }
    }
  }

  // Builders for serialization.
  Section& add_section(std::string name) {
    sections_.push_back(Section{std::move(name), 0, {}});
    return sections_.back();
  }

  [[nodiscard]] std::string to_string() const {
    std::ostringstream out;
    bool first = true;
    for (const auto& s : sections_) {
      if (!first) out << '\n';
      first = false;
      out << '[' << s.name << "]\n";
      for (const auto& e : s.entries) out << e.key << " = " << e.value << '\n';
    }
    return out.str();
  }

 private:
  std::string source_ = "<string>";
  std::vector<Section> sections_;
};

/// Typed accessor over one section; records which keys were read.
class Reader {
 public:
  Reader(const Document& doc, const Section& section) : doc_(&doc), section_(&section) {
    section.used = true;
  }

  [[nodiscard]] const Entry* entry(std::string_view key) const {
    for (const auto& e : section_->entries) {
      if (e.key == key) {
        e.used = true;
        return &e;
      }
    }
    return nullptr;
  }

  [[nodiscard]] bool has(std::string_view key) const { return entry(key) != nullptr; }

  [[nodiscard]] std::string str(std::string_view key, std::optional<std::string> fallback = std::nullopt) const {
    if (const Entry* e = entry(key)) return e->value;
    if (fallback) return *fallback;
    missing(key);
  }

  [[nodiscard]] double number(std::string_view key, std::optional<double> fallback = std::nullopt) const {
    const Entry* e = entry(key);
    if (e == nullptr) {
      if (fallback) return *fallback;
      missing(key);
    }
    return parse_number(*e, e->value);
  }

  [[nodiscard]] long integer(std::string_view key, std::optional<long> fallback = std::nullopt) const {
    const Entry* e = entry(key);
    if (e == nullptr) {
      if (fallback) return *fallback;
      missing(key);
    }
    const double v = parse_number(*e, e->value);
    if (v != std::floor(v)) doc_->fail(e->line, "'" + e->key + "' must be an integer");
    return static_cast<long>(v);
  }

  [[nodiscard]] std::vector<double> list(std::string_view key, std::optional<std::vector<double>> fallback = std::nullopt) const {
    const Entry* e = entry(key);
    if (e == nullptr) {
      if (fallback) return *fallback;
      missing(key);
    }
    return parse_list(*e);
  }

  [[nodiscard]] Vec3 vec3(std::string_view key, std::optional<Vec3> fallback = std::nullopt) const {
    const Entry* e = entry(key);
    if (e == nullptr) {
      if (fallback) return *fallback;
      missing(key);
    }
    const auto v = parse_list(*e);
    if (v.size() != 3) doc_->fail(e->line, "'" + e->key + "' needs 3 comma-separated numbers");
    return {v[0], v[1], v[2]};
  }

  [[nodiscard]] const Section& section() const { return *section_; }
  [[noreturn]] void fail(std::string_view key, const std::string& what) const {
    const Entry* e = entry(key);
    doc_->fail(e != nullptr ? e->line : section_->line, what);
  }

  [[nodiscard]] double parse_number(const Entry& e, const std::string& text) const {
    try {
      std::size_t pos = 0;
      const double v = std::stod(text, &pos);
      if (detail::trim(std::string_view(text).substr(pos)).empty() && std::isfinite(v)) return v;
    } catch (const std::exception&) {
    }
    doc_->fail(e.line, "'" + e.key + "': expected a number, got '" + text + "'");
  }

  [[nodiscard]] std::vector<double> parse_list(const Entry& e) const {
    std::vector<double> out;
    std::stringstream ss(e.value);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_number(e, detail::trim(item)));
    return out;
  }

 private:
  [[noreturn]] void missing(std::string_view key) const {
    doc_->fail(section_->line, "missing key '" + std::string(key) + "' in [" + section_->name + "]");
  }

  const Document* doc_;
  const Section* section_;
};

// Formatting helpers for serializers. Uses max_digits10 so values round-trip.
inline std::string fmt_number(double v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

inline std::string fmt_vec3(const Vec3& v) {
  return fmt_number(v.x()) + ", " + fmt_number(v.y()) + ", " + fmt_number(v.z());
}

inline void put(Section& s, std::string key, std::string value) {
  s.entries.push_back(Entry{std::move(key), std::move(value), 0});
}

}  // namespace tactwin::config
