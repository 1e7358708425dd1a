#include "fit/config.hpp"

#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace fit {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  std::size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

const std::map<std::string, std::string>& default_table() {
  static const std::map<std::string, std::string> table = {
      {"dataset", "synthetic"},     // synthetic | ml1m
      {"data_dir", ""},             // ml1m: defaults to $FIT_DATA_DIR, then ./data/ml-1m
      {"out_dir", "runs"},
      {"run_name", ""},             // defaults to <command>-<variant>-s<seed>
      {"seed", "1"},
      {"variant", "fit"},
      {"use_mqm", "true"},
      {"interaction", "din"},
      {"scorer", "lss"},
      {"n_meta", "64"},
      {"embed_dim", "16"},
      {"heads_u", "2"},
      {"heads_v", "2"},
      {"head_dim", "64"},
      {"tower_widths", "300,300,128"},
      {"lss_dim", "16"},
      {"din_hidden", "64,16"},
      {"lr", "0.001"},
      {"batch_size", "2048"},
      {"epochs", "3"},
      {"max_seq_len", "50"},
      {"val_frac", "0.2"},
      {"early_stop_patience", "2"},
      {"tau_floor", "0.001"},
      {"deterministic", "true"},
      {"synth_users", "2000"},
      {"synth_items", "128"},
      {"synth_clusters", "16"},
      {"synth_seq_min", "8"},
      {"synth_seq_max", "16"},
      {"synth_mix", "0.5"},
      {"candidates", "2000"},
      {"bench_reps", "7"},
      {"export_embeddings", "false"},
  };
  return table;
}

}  // namespace

Config::Config() : values_(default_table()), defaults_(default_table()) {}

Config Config::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw std::runtime_error("cannot open config file " + path);
  Config cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected key=value, got '" + line + "'");
    try {
      cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

void Config::set(const std::string& key, const std::string& value) {
  if (defaults_.find(key) == defaults_.end())
    throw std::runtime_error("unknown config key '" + key + "'");
  values_[key] = value;
}

bool Config::has_default(const std::string& key) const {
  const auto it = values_.find(key);
  const auto dt = defaults_.find(key);
  if (it == values_.end() || dt == defaults_.end())
    throw std::runtime_error("unknown config key '" + key + "'");
  return it->second == dt->second;
}

const std::string& Config::str(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw std::runtime_error("unknown config key '" + key + "'");
  return it->second;
}

int Config::integer(const std::string& key) const {
  return static_cast<int>(integer64(key));
}

long long Config::integer64(const std::string& key) const {
  const std::string& v = str(key);
  try {
    std::size_t used = 0;
    const long long out = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw std::runtime_error("config key '" + key + "': not an integer: '" + v + "'");
  }
}

float Config::number(const std::string& key) const {
  const std::string& v = str(key);
  try {
    std::size_t used = 0;
    const float out = std::stof(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw std::runtime_error("config key '" + key + "': not a number: '" + v + "'");
  }
}

bool Config::flag(const std::string& key) const {
  const std::string& v = str(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::runtime_error("config key '" + key + "': not a bool: '" + v + "'");
}

std::vector<int> Config::int_list(const std::string& key) const {
  const std::string& v = str(key);
  std::vector<int> out;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw std::runtime_error("config key '" + key + "': bad list element '" + part + "'");
    }
  }
  if (out.empty())
    throw std::runtime_error("config key '" + key + "': empty list");
  return out;
}

void Config::echo(std::ostream& os) const {
  for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
}

const std::vector<std::string>& all_variants() {
  static const std::vector<std::string> v = {"fit",    "two_tower",  "wo_mqm",
                                             "wo_lss", "summax",     "flatten_fc"};
  return v;
}

void apply_variant(Config& cfg, const std::string& variant) {
  if (variant == "fit") {
    cfg.set("use_mqm", "true");
    cfg.set("interaction", "din");
    cfg.set("scorer", "lss");
  } else if (variant == "two_tower") {
    cfg.set("use_mqm", "false");
    cfg.set("interaction", "average_pool");
    cfg.set("scorer", "dot");
  } else if (variant == "wo_mqm") {
    cfg.set("use_mqm", "false");
    cfg.set("interaction", "average_pool");
    cfg.set("scorer", "lss");
  } else if (variant == "wo_lss") {
    cfg.set("use_mqm", "true");
    cfg.set("interaction", "din");
    cfg.set("scorer", "dot");
  } else if (variant == "summax") {
    cfg.set("use_mqm", "true");
    cfg.set("interaction", "din");
    cfg.set("scorer", "summax");
  } else if (variant == "flatten_fc") {
    cfg.set("use_mqm", "true");
    cfg.set("interaction", "din");
    cfg.set("scorer", "flatten_fc");
  } else {
    throw std::runtime_error("unknown variant '" + variant +
                             "' (want fit|two_tower|wo_mqm|wo_lss|summax|flatten_fc)");
  }
  cfg.set("variant", variant);
}

}  // namespace fit
