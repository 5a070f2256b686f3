#include "fodnet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace fodnet {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

bool valid_key(std::string_view k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
  return true;
}

bool valid_section(std::string_view s) {
  std::size_t start = 0;
  while (true) {
    const auto dot = s.find('.', start);
    if (!valid_key(s.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start))) return false;
    if (dot == std::string_view::npos) return true;
    start = dot + 1;
  }
}

}  // namespace

Config Config::parse(std::string_view text, const std::string& source) {
  Config cfg;
  cfg.source_ = source;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(std::string_view(t).substr(1, t.size() - 2));
      if (!valid_section(section)) throw ConfigError(where + "invalid section name '" + section + "'");
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    if (!valid_key(key)) throw ConfigError(where + "invalid key '" + key + "'");
    const std::string full = section.empty() ? key : section + "." + key;
    if (cfg.values_.count(full)) throw ConfigError(where + "duplicate key '" + full + "'");
    cfg.values_[full] = trim(std::string_view(t).substr(eq + 1));
    cfg.lines_[full] = lineno;
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void Config::fail(const std::string& key, const std::string& what) const {
  std::string where = source_;
  if (auto it = lines_.find(key); it != lines_.end()) where += ":" + std::to_string(it->second);
  throw ConfigError(where + ": key '" + key + "': " + what);
}

std::string Config::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) fail(key, "missing");
  return it->second;
}

std::string Config::get(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key) const {
  const std::string v = get(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    fail(key, "not a number: '" + v + "'");
  }
}

double Config::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

long long Config::get_int(const std::string& key) const {
  const std::string v = get(key);
  try {
    std::size_t used = 0;
    const long long d = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    fail(key, "not an integer: '" + v + "'");
  }
}

long long Config::get_int(const std::string& key, long long fallback) const {
  return has(key) ? get_int(key) : fallback;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get(key);
  if (v == "true" || v == "yes" || v == "1" || v == "on") return true;
  if (v == "false" || v == "no" || v == "0" || v == "off") return false;
  fail(key, "not a boolean: '" + v + "'");
}

std::vector<std::string> Config::get_list(const std::string& key) const {
  std::vector<std::string> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

Eigen::Vector3d Config::get_vec3(const std::string& key) const {
  const auto items = get_list(key);
  if (items.size() != 3) fail(key, "expected three comma-separated numbers");
  Eigen::Vector3d v;
  for (int i = 0; i < 3; ++i) {
    try {
      std::size_t used = 0;
      v[i] = std::stod(items[i], &used);
      if (used != items[i].size()) throw std::invalid_argument(items[i]);
    } catch (const std::exception&) {
      fail(key, "not a number: '" + items[i] + "'");
    }
  }
  return v;
}

std::vector<std::string> Config::sections(const std::string& prefix) const {
  std::set<std::string> names;
  const std::string p = prefix.empty() ? "" : prefix + ".";
  for (const auto& [k, v] : values_) {
    if (k.compare(0, p.size(), p) != 0) continue;
    const std::string rest = k.substr(p.size());
    const auto dot = rest.find('.');
    if (dot != std::string::npos) names.insert(rest.substr(0, dot));
  }
  return {names.begin(), names.end()};
}

Config Config::subtree(const std::string& prefix) const {
  Config out;
  out.source_ = source_;
  const std::string p = prefix + ".";
  for (const auto& [k, v] : values_) {
    if (k.compare(0, p.size(), p) != 0) continue;
    out.values_[k.substr(p.size())] = v;
    if (auto it = lines_.find(k); it != lines_.end()) out.lines_[k.substr(p.size())] = it->second;
  }
  return out;
}

std::string Config::dump() const {
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> by_section;
  for (const auto& [k, v] : values_) {
    const auto dot = k.rfind('.');
    if (dot == std::string::npos)
      by_section[""].emplace_back(k, v);
    else
      by_section[k.substr(0, dot)].emplace_back(k.substr(dot + 1), v);
  }
  std::ostringstream out;
  bool first = true;
  for (const auto& [section, items] : by_section) {
    if (!section.empty()) out << (first ? "" : "\n") << "[" << section << "]\n";
    for (const auto& [k, v] : items) out << k << " = " << v << "\n";
    first = false;
  }
  return out.str();
}

}  // namespace fodnet
