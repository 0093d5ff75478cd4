#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <istream>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>

namespace nbslam::kv {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("not a number: '" + text + "'");
  return value;
}

inline bool parse_bool(const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw std::invalid_argument("not a boolean: '" + text + "'");
}

using Setter = std::function<void(const std::string&)>;

inline Setter bind(double& v) {
  return [&v](const std::string& s) { v = parse_number<double>(s); };
}
inline Setter bind(int& v) {
  return [&v](const std::string& s) { v = parse_number<int>(s); };
}
inline Setter bind(std::uint64_t& v) {
  return [&v](const std::string& s) { v = parse_number<std::uint64_t>(s); };
}
inline Setter bind(bool& v) {
  return [&v](const std::string& s) { v = parse_bool(s); };
}
inline Setter bind(std::string& v) {
  return [&v](const std::string& s) { v = s; };
}
inline Setter bind(std::filesystem::path& v) {
  return [&v](const std::string& s) { v = s; };
}

/// Applies `key = value` lines; '#' starts a comment.
inline void parse(std::istream& in, const std::map<std::string, Setter>& setters, const char* what) {
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = std::string(what) + " line " + std::to_string(line_no);
    if (eq == std::string::npos) throw std::runtime_error(where + ": expected key = value");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) throw std::runtime_error(where + ": unknown key '" + key + "'");
    try {
      it->second(value);
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(where + ": " + key + ": " + e.what());
    }
  }
}

}  // namespace nbslam::kv
