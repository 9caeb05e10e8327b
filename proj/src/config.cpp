#include "vtfuse/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "vtfuse/errors.hpp"

namespace vtfuse {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

RunConfig::RunConfig(std::vector<KeySpec> schema) : schema_(std::move(schema)) {
  if (!knows("seed")) schema_.push_back({"seed", "0", "seed for every random stream"});
  for (const KeySpec& k : schema_) values_[k.name] = k.default_value;
}

bool RunConfig::knows(std::string_view key) const {
  for (const KeySpec& k : schema_)
    if (k.name == key) return true;
  return false;
}

void RunConfig::load_text(std::string_view text, const std::string& source) {
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw ConfigError(where + ": missing key");
    if (!seen.insert(key).second) throw ConfigError(where + ": duplicate key '" + key + "'");
    if (!knows(key)) throw ConfigError(where + ": unknown key '" + key + "'");
    values_[key] = std::string(trim(line.substr(eq + 1)));
  }
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::ostringstream text;
  text << in.rdbuf();
  load_text(text.str(), path);
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!knows(key)) throw ConfigError("unknown key '" + key + "'");
  values_[key] = value;
}

const std::string& RunConfig::lookup(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
  return it->second;
}

bool RunConfig::has(const std::string& key) const { return !lookup(key).empty(); }

const std::string& RunConfig::get(const std::string& key) const { return lookup(key); }

const std::string& RunConfig::require(const std::string& key) const {
  const std::string& v = lookup(key);
  if (v.empty()) throw ConfigError("missing required key '" + key + "'");
  return v;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = require(key);
  double out = 0.0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || end != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError("key '" + key + "': '" + v + "' is not a number");
  }
  return out;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string& v = require(key);
  std::uint64_t out = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || end != v.data() + v.size()) {
    throw ConfigError("key '" + key + "': '" + v + "' is not a non-negative integer");
  }
  return out;
}

std::size_t RunConfig::get_size(const std::string& key) const { return static_cast<std::size_t>(get_u64(key)); }

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = require(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("key '" + key + "': '" + v + "' is not a boolean");
}

void RunConfig::echo(std::ostream& out) const {
  for (const KeySpec& k : schema_) out << k.name << " = " << values_.at(k.name) << '\n';
}

}  // namespace vtfuse
