#include "usplat/io/toml_lite.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace usplat {

namespace {

[[noreturn]] void fail(int line_no, const std::string& what) {
  throw std::runtime_error("toml parse error at line " +
                           std::to_string(line_no) + ": " + what);
}

std::string strip(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Removes a trailing comment, respecting quoted strings.
std::string strip_comment(const std::string& s) {
  bool in_str = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_str = !in_str;
    if (s[i] == '#' && !in_str) return s.substr(0, i);
  }
  return s;
}

nlohmann::json parse_scalar(const std::string& tok, int line_no) {
  if (tok.empty()) fail(line_no, "empty value");
  if (tok.front() == '"') {
    if (tok.size() < 2 || tok.back() != '"') fail(line_no, "unterminated string");
    std::string out;
    for (std::size_t i = 1; i + 1 < tok.size(); ++i) {
      if (tok[i] == '\\' && i + 2 < tok.size()) {
        ++i;
        switch (tok[i]) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          default: fail(line_no, "unsupported escape");
        }
      } else {
        out += tok[i];
      }
    }
    return out;
  }
  if (tok == "true") return true;
  if (tok == "false") return false;
  // Number: integer when it survives a round trip as long long.
  try {
    std::size_t used = 0;
    if (tok.find_first_of(".eE") == std::string::npos) {
      const long long v = std::stoll(tok, &used);
      if (used == tok.size()) return v;
    }
    const double v = std::stod(tok, &used);
    if (used == tok.size()) return v;
  } catch (const std::exception&) {
  }
  fail(line_no, "cannot parse value: " + tok);
}

std::vector<std::string> split_top_level(const std::string& body, int line_no) {
  std::vector<std::string> parts;
  std::string cur;
  bool in_str = false;
  for (std::size_t i = 0; i < body.size(); ++i) {
    const char c = body[i];
    if (c == '"' && (i == 0 || body[i - 1] != '\\')) in_str = !in_str;
    if (c == ',' && !in_str) {
      parts.push_back(strip(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  const std::string last = strip(cur);
  if (!last.empty()) parts.push_back(last);
  if (in_str) fail(line_no, "unterminated string in array");
  return parts;
}

nlohmann::json parse_value(const std::string& tok, int line_no) {
  if (!tok.empty() && tok.front() == '[') {
    if (tok.back() != ']') fail(line_no, "unterminated array");
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& part :
         split_top_level(tok.substr(1, tok.size() - 2), line_no))
      arr.push_back(parse_scalar(part, line_no));
    return arr;
  }
  return parse_scalar(tok, line_no);
}

nlohmann::json* descend(nlohmann::json& root, const std::string& dotted,
                        int line_no) {
  nlohmann::json* node = &root;
  std::istringstream parts(dotted);
  std::string key;
  while (std::getline(parts, key, '.')) {
    key = strip(key);
    if (key.empty()) fail(line_no, "empty section segment");
    node = &(*node)[key];
    if (!node->is_object() && !node->is_null())
      fail(line_no, "section collides with a value: " + dotted);
  }
  return node;
}

}  // namespace

nlohmann::json parse_toml_lite(const std::string& text) {
  nlohmann::json root = nlohmann::json::object();
  nlohmann::json* section = &root;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = strip(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(line_no, "unterminated section header");
      section = descend(root, strip(line.substr(1, line.size() - 2)), line_no);
      if (section->is_null()) *section = nlohmann::json::object();
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) fail(line_no, "expected key = value");
    const std::string key = strip(line.substr(0, eq));
    if (key.empty()) fail(line_no, "empty key");
    (*section)[key] = parse_value(strip(line.substr(eq + 1)), line_no);
  }
  return root;
}

nlohmann::json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_config_file: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  const bool is_json =
      path.size() >= 5 && path.compare(path.size() - 5, 5, ".json") == 0;
  if (is_json) return nlohmann::json::parse(buf.str());
  return parse_toml_lite(buf.str());
}

}  // namespace usplat
