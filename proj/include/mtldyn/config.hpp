/*
 * Copyright 2026 The mtldyn Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Key-value configuration files:
//
//   # comment
//   [section]
//   key = 1.5
//   name = "quoted string"
//   list = [0, 0.4, 0.8]
//
// Keys are addressed as "section.key". Values keep their source text, so
// parse -> serialize -> parse reproduces the same tree.

#ifndef MTLDYN_CONFIG_HPP
#define MTLDYN_CONFIG_HPP

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mtldyn/errors.hpp"

namespace mtldyn {

struct ConfigValue {
  bool is_list = false;
  std::vector<std::string> items;

  bool operator==(const ConfigValue&) const = default;
};

using ConfigTree = std::map<std::string, ConfigValue>;

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-'; }

inline bool valid_ident(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!ident_char(c)) return false;
  return true;
}

inline bool bare_safe(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!(ident_char(c) || c == '.' || c == '+' || c == '/' || c == ':')) return false;
  return true;
}

class ValueParser {
 public:
  ValueParser(std::string_view text, int line) : s_(text), line_(line) {}

  ConfigValue parse() {
    ConfigValue v;
    skip_ws();
    if (peek() == '[') {
      ++pos_;
      v.is_list = true;
      skip_ws();
      if (peek() == ']') {
        ++pos_;
      } else {
        for (;;) {
          v.items.push_back(item(true));
          skip_ws();
          if (peek() == ',') {
            ++pos_;
            continue;
          }
          if (peek() == ']') {
            ++pos_;
            break;
          }
          fail("expected ',' or ']'");
        }
      }
    } else {
      v.items.push_back(item(false));
    }
    skip_ws();
    if (peek() == '#') pos_ = s_.size();
    if (pos_ != s_.size()) fail("trailing characters after value");
    return v;
  }

 private:
  char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }
  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError("config line " + std::to_string(line_) + ": " + msg);
  }

  std::string item(bool in_list) {
    skip_ws();
    if (peek() == '"') {
      ++pos_;
      std::string out;
      for (;;) {
        if (pos_ >= s_.size()) fail("unterminated string");
        char c = s_[pos_++];
        if (c == '"') break;
        if (c == '\\') {
          if (pos_ >= s_.size()) fail("dangling escape");
          char e = s_[pos_++];
          if (e == 'n')
            out.push_back('\n');
          else if (e == 't')
            out.push_back('\t');
          else if (e == '"' || e == '\\')
            out.push_back(e);
          else
            fail("unknown escape");
        } else {
          out.push_back(c);
        }
      }
      return out;
    }
    std::size_t b = pos_;
    while (pos_ < s_.size() && s_[pos_] != '#' && !(in_list && (s_[pos_] == ',' || s_[pos_] == ']'))) ++pos_;
    std::string t = trim(s_.substr(b, pos_ - b));
    if (t.empty()) fail("empty value");
    if (t.find('"') != std::string::npos || t.find('[') != std::string::npos) fail("malformed value");
    return t;
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  int line_;
};

inline std::string quote(const std::string& s) {
  if (bare_safe(s)) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') {
      out.push_back('\\');
      out.push_back(c);
    } else if (c == '\n') {
      out += "\\n";
    } else if (c == '\t') {
      out += "\\t";
    } else {
      out.push_back(c);
    }
  }
  return out + "\"";
}

}  // namespace detail

inline ConfigTree parse_config(std::string_view text) {
  ConfigTree tree;
  std::string section;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string line = detail::trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty() || line[0] == '#') {
      if (nl == text.size()) break;
      continue;
    }
    if (line[0] == '[') {
      std::size_t close = line.find(']');
      if (close == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": missing ']'");
      std::string rest = detail::trim(std::string_view(line).substr(close + 1));
      if (!rest.empty() && rest[0] != '#')
        throw ConfigError("config line " + std::to_string(line_no) + ": text after section header");
      section = detail::trim(std::string_view(line).substr(1, close - 1));
      if (!detail::valid_ident(section))
        throw ConfigError("config line " + std::to_string(line_no) + ": bad section name");
    } else {
      std::size_t eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
      std::string key = detail::trim(std::string_view(line).substr(0, eq));
      if (!detail::valid_ident(key)) throw ConfigError("config line " + std::to_string(line_no) + ": bad key '" + key + "'");
      std::string full = section.empty() ? key : section + "." + key;
      if (tree.count(full)) throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key " + full);
      tree[full] = detail::ValueParser(std::string_view(line).substr(eq + 1), line_no).parse();
    }
    if (nl == text.size()) break;
  }
  return tree;
}

inline std::string serialize_config(const ConfigTree& tree) {
  std::map<std::string, std::vector<std::pair<std::string, const ConfigValue*>>> sections;
  for (const auto& [k, v] : tree) {
    std::size_t dot = k.find('.');
    if (dot == std::string::npos)
      sections[""].emplace_back(k, &v);
    else
      sections[k.substr(0, dot)].emplace_back(k.substr(dot + 1), &v);
  }
  std::ostringstream os;
  bool first = true;
  for (const auto& [name, entries] : sections) {
    if (!name.empty()) {
      if (!first) os << "\n";
      os << "[" << name << "]\n";
    }
    first = false;
    for (const auto& [k, v] : entries) {
      os << k << " = ";
      if (v->is_list) {
        os << "[";
        for (std::size_t i = 0; i < v->items.size(); ++i) os << (i ? ", " : "") << detail::quote(v->items[i]);
        os << "]";
      } else {
        os << detail::quote(v->items.at(0));
      }
      os << "\n";
    }
  }
  return os.str();
}

inline ConfigTree load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

// ---------------------------------------------------------------------------
// typed access

inline double parse_real(const std::string& key, const std::string& s) {
  if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || std::isnan(v)) throw ConfigError(key + ": expected a number, got '" + s + "'");
  return v;
}

inline long long parse_integer(const std::string& key, const std::string& s) {
  long long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError(key + ": expected an integer, got '" + s + "'");
  return v;
}

inline std::uint64_t parse_unsigned(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError(key + ": expected an unsigned integer, got '" + s + "'");
  return v;
}

inline std::string format_real(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // prefer the shortest text that reads back to the same value
  for (int p = 1; p <= 17; ++p) {
    char tmp[64];
    std::snprintf(tmp, sizeof tmp, "%.*g", p, v);
    if (std::strtod(tmp, nullptr) == v) return tmp;
  }
  return buf;
}

}  // namespace mtldyn

#endif
