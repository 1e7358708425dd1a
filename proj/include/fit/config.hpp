#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace fit {

/// Flat key=value configuration with a fixed key set. Unknown keys are
/// rejected at parse/set time; every key has a default so any subset may be
/// given. `#` starts a comment; blank lines are ignored. CLI overrides call
/// set() after from_file(), so flag precedence is file < command line.
class Config {
 public:
  Config();  // defaults

  static Config from_file(const std::string& path);

  void set(const std::string& key, const std::string& value);
  bool has_default(const std::string& key) const;  // true = never overridden

  const std::string& str(const std::string& key) const;
  int integer(const std::string& key) const;
  long long integer64(const std::string& key) const;
  float number(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<int> int_list(const std::string& key) const;  // comma separated

  /// Sorted key=value lines, suitable for echoing into a run directory.
  void echo(std::ostream& os) const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> defaults_;
};

/// Sets the (use_mqm, interaction, scorer) triple for a named model variant:
/// fit, two_tower, wo_mqm, wo_lss, summax, flatten_fc.
void apply_variant(Config& cfg, const std::string& variant);

const std::vector<std::string>& all_variants();

}  // namespace fit
