#include "riskpia/toml.hpp"

#include <cctype>
#include <charconv>
#include <set>
#include <cmath>
#include <string>
#include <vector>

#include "riskpia/error.hpp"

namespace riskpia {

namespace {

using nlohmann::json;

class TomlReader {
 public:
  explicit TomlReader(std::string_view s) : s_(s) {}

  json document() {
    json root = json::object();
    json* table = &root;
    while (true) {
      skip_blank_lines();
      if (eof()) break;
      if (peek() == '[') {
        if (s_.substr(pos_, 2) == "[[") fail("arrays of tables are not supported");
        ++pos_;
        skip_ws();
        const std::vector<std::string> path = key_path();
        skip_ws();
        expect(']');
        end_of_line();
        table = &root;
        for (const std::string& k : path) {
          if (!table->contains(k)) (*table)[k] = json::object();
          table = &(*table)[k];
          if (!table->is_object()) fail("'" + k + "' is not a table");
        }
        if (defined_tables_.count(join(path))) fail("table [" + join(path) + "] defined twice");
        defined_tables_.insert(join(path));
        continue;
      }
      key_value(*table);
      end_of_line();
    }
    return root;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError("config line " + std::to_string(line_) + ": " + msg);
  }

  bool eof() const { return pos_ >= s_.size(); }
  char peek() const { return eof() ? '\0' : s_[pos_]; }

  void skip_ws() {
    while (!eof() && (peek() == ' ' || peek() == '\t')) ++pos_;
  }
  void skip_comment() {
    if (peek() == '#') {
      while (!eof() && peek() != '\n') ++pos_;
    }
  }
  void newline() {
    if (peek() == '\r') ++pos_;
    if (peek() == '\n') {
      ++pos_;
      ++line_;
    }
  }
  void skip_blank_lines() {
    while (!eof()) {
      skip_ws();
      skip_comment();
      if (peek() == '\n' || peek() == '\r') {
        newline();
      } else {
        break;
      }
    }
  }
  // Whitespace, comments and newlines inside arrays.
  void skip_space_in_array() {
    while (!eof()) {
      skip_ws();
      skip_comment();
      if (peek() == '\n' || peek() == '\r') {
        newline();
      } else {
        return;
      }
    }
  }
  void end_of_line() {
    skip_ws();
    skip_comment();
    if (eof()) return;
    if (peek() != '\n' && peek() != '\r') fail(std::string("unexpected '") + peek() + "'");
    newline();
  }
  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  static std::string join(const std::vector<std::string>& path) {
    std::string s;
    for (const auto& p : path) s += (s.empty() ? "" : ".") + p;
    return s;
  }

  std::string simple_key() {
    if (peek() == '"') return basic_string();
    if (peek() == '\'') return literal_string();
    std::string k;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-')) {
      k += s_[pos_++];
    }
    if (k.empty()) fail("expected a key");
    return k;
  }
  std::vector<std::string> key_path() {
    std::vector<std::string> path{simple_key()};
    skip_ws();
    while (peek() == '.') {
      ++pos_;
      skip_ws();
      path.push_back(simple_key());
      skip_ws();
    }
    return path;
  }

  void key_value(json& table) {
    const std::vector<std::string> path = key_path();
    skip_ws();
    expect('=');
    skip_ws();
    json v = value();
    json* t = &table;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      if (!t->contains(path[i])) (*t)[path[i]] = json::object();
      t = &(*t)[path[i]];
      if (!t->is_object()) fail("'" + path[i] + "' is not a table");
    }
    if (t->contains(path.back())) fail("duplicate key '" + join(path) + "'");
    (*t)[path.back()] = std::move(v);
  }

  json value() {
    const char c = peek();
    if (c == '"') return basic_string();
    if (c == '\'') return literal_string();
    if (c == '[') return array();
    if (c == '{') return inline_table();
    if (s_.substr(pos_, 4) == "true") {
      pos_ += 4;
      return true;
    }
    if (s_.substr(pos_, 5) == "false") {
      pos_ += 5;
      return false;
    }
    return number();
  }

  std::string basic_string() {
    expect('"');
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      const char c = s_[pos_++];
      if (c == '"') break;
      if (c != '\\') {
        out += c;
        continue;
      }
      if (eof()) fail("unterminated string");
      const char e = s_[pos_++];
      switch (e) {
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        default: fail(std::string("unsupported escape '\\") + e + "'");
      }
    }
    return out;
  }

  std::string literal_string() {
    expect('\'');
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      const char c = s_[pos_++];
      if (c == '\'') break;
      out += c;
    }
    return out;
  }

  json array() {
    expect('[');
    json arr = json::array();
    while (true) {
      skip_space_in_array();
      if (peek() == ']') {
        ++pos_;
        return arr;
      }
      arr.push_back(value());
      skip_space_in_array();
      if (peek() == ',') {
        ++pos_;
        continue;
      }
      skip_space_in_array();
      expect(']');
      return arr;
    }
  }

  json inline_table() {
    expect('{');
    json t = json::object();
    skip_ws();
    if (peek() == '}') {
      ++pos_;
      return t;
    }
    while (true) {
      skip_ws();
      key_value(t);
      skip_ws();
      if (peek() == ',') {
        ++pos_;
        continue;
      }
      expect('}');
      return t;
    }
  }

  json number() {
    std::string tok;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '+' || peek() == '-' ||
                      peek() == '.' || peek() == '_')) {
      if (peek() != '_') tok += peek();
      ++pos_;
    }
    if (tok.empty()) fail("expected a value");
    std::string body = tok;
    if (body[0] == '+') body.erase(0, 1);
    if (body == "inf" || body == "-inf" || body == "nan" || body == "-nan") {
      fail("non-finite numbers are not allowed");
    }
    const bool is_float = body.find_first_of(".eE") != std::string::npos;
    if (!is_float) {
      std::int64_t v = 0;
      const auto [p, ec] = std::from_chars(body.data(), body.data() + body.size(), v);
      if (ec != std::errc() || p != body.data() + body.size()) fail("bad value '" + tok + "'");
      return v;
    }
    double v = 0.0;
    const auto [p, ec] = std::from_chars(body.data(), body.data() + body.size(), v);
    if (ec != std::errc() || p != body.data() + body.size() || !std::isfinite(v)) {
      fail("bad value '" + tok + "'");
    }
    return v;
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::set<std::string> defined_tables_;
};

}  // namespace

nlohmann::json parse_toml(std::string_view text) { return TomlReader(text).document(); }

}  // namespace riskpia
