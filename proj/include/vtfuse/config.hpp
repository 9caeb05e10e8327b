#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace vtfuse {

struct KeySpec {
  std::string name;
  std::string default_value;  // empty means "unset"
  std::string help;
};

// Settings for one command: declared keys with defaults, then a config file,
// then flag overrides. Later sources win. Unknown keys are errors.
class RunConfig {
 public:
  explicit RunConfig(std::vector<KeySpec> schema);

  const std::vector<KeySpec>& schema() const { return schema_; }
  bool knows(std::string_view key) const;

  // Reads `key = value` lines; '#' starts a comment. A key may appear once per file.
  void load_text(std::string_view text, const std::string& source = "config");
  void load_file(const std::string& path);
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  // Like get(), but an unset value is a ConfigError naming the key.
  const std::string& require(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  // One `key = value` line per declared key, in declaration order.
  void echo(std::ostream& out) const;

 private:
  const std::string& lookup(const std::string& key) const;

  std::vector<KeySpec> schema_;
  std::map<std::string, std::string, std::less<>> values_;
};

}  // namespace vtfuse
