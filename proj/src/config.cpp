#include "avgan/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "avgan/data.hpp"
#include "avgan/error.hpp"

namespace avgan {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw InvalidInput("config key " + key + ": expected an integer, got '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw InvalidInput("config key " + key + ": expected a nonnegative integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size() || !std::isfinite(out)) throw InvalidInput("config key " + key + ": expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw InvalidInput("config key " + key + ": expected true or false, got '" + v + "'");
}

struct Field {
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&, const std::string&)> set;
  bool experiment = true;    // part of config_hash
  bool architecture = false;  // part of architecture_hash
};

template <typename T>
Field int_field(T TrainConfig::*m, bool arch = false) {
  return {[m](const TrainConfig& c) { return std::to_string(c.*m); },
          [m](TrainConfig& c, const std::string& k, const std::string& v) { c.*m = parse_int(k, v); }, true, arch};
}

Field double_field(double TrainConfig::*m) {
  return {[m](const TrainConfig& c) { return format_double(c.*m); },
          [m](TrainConfig& c, const std::string& k, const std::string& v) { c.*m = parse_double(k, v); }};
}

Field weight_field(double losses::LossWeights::*m) {
  return {[m](const TrainConfig& c) { return format_double(c.weights.*m); },
          [m](TrainConfig& c, const std::string& k, const std::string& v) { c.weights.*m = parse_double(k, v); }};
}

Field string_field(std::string TrainConfig::*m, bool experiment = true) {
  return {[m](const TrainConfig& c) { return c.*m; },
          [m](TrainConfig& c, const std::string&, const std::string& v) { c.*m = v; }, experiment, false};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    t["seed"] = {[](const TrainConfig& c) { return std::to_string(c.seed); },
                 [](TrainConfig& c, const std::string& k, const std::string& v) { c.seed = parse_u64(k, v); }};
    t["max_steps"] = int_field(&TrainConfig::max_steps);
    t["checkpoint_every"] = int_field(&TrainConfig::checkpoint_every);
    t["checkpoint_every"].experiment = false;
    t["lr"] = double_field(&TrainConfig::lr);
    t["beta1"] = double_field(&TrainConfig::beta1);
    t["beta2"] = double_field(&TrainConfig::beta2);
    t["batch_size"] = int_field(&TrainConfig::batch_size);
    t["lowres_size"] = int_field(&TrainConfig::lowres_size, true);
    t["n_regions"] = int_field(&TrainConfig::n_regions);
    t["region_size"] = int_field(&TrainConfig::region_size, true);
    t["theta"] = double_field(&TrainConfig::theta);
    t["attention_pool"] = int_field(&TrainConfig::attention_pool, true);
    t["region_mode"] = string_field(&TrainConfig::region_mode);
    t["qkv_hidden_channels"] = int_field(&TrainConfig::qkv_hidden_channels, true);
    t["qkv_channels"] = int_field(&TrainConfig::qkv_channels, true);
    t["g_base_channels"] = int_field(&TrainConfig::g_base_channels, true);
    t["g_res_blocks"] = int_field(&TrainConfig::g_res_blocks, true);
    t["shared_generators"] = {[](const TrainConfig& c) { return std::string(c.shared_generators ? "true" : "false"); },
                              [](TrainConfig& c, const std::string& k, const std::string& v) { c.shared_generators = parse_bool(k, v); },
                              true, true};
    t["d_base_channels"] = int_field(&TrainConfig::d_base_channels, true);
    t["d_layers_low"] = int_field(&TrainConfig::d_layers_low, true);
    t["d_layers_high"] = int_field(&TrainConfig::d_layers_high, true);
    t["lambda_adv"] = weight_field(&losses::LossWeights::adv);
    t["lambda_idt"] = weight_field(&losses::LossWeights::idt);
    t["lambda_nce"] = weight_field(&losses::LossWeights::nce);
    t["lambda_h"] = weight_field(&losses::LossWeights::h);
    t["lambda_v"] = weight_field(&losses::LossWeights::v);
    t["nce_samples"] = int_field(&TrainConfig::nce_samples);
    t["nce_temperature"] = double_field(&TrainConfig::nce_temperature);
    t["nce_proj_dim"] = int_field(&TrainConfig::nce_proj_dim, true);
    t["stain_matrix"] = string_field(&TrainConfig::stain_matrix);
    t["source_domain"] = string_field(&TrainConfig::source_domain);
    t["target_domain"] = string_field(&TrainConfig::target_domain);
    t["data_dir"] = string_field(&TrainConfig::data_dir, false);
    t["out_dir"] = string_field(&TrainConfig::out_dir, false);
    return t;
  }();
  return table;
}

const Field& field(const std::string& key) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw InvalidInput("unknown config key '" + key + "'");
  return it->second;
}

std::string hash_of(const TrainConfig& config, bool Field::*selector) {
  std::string text;
  for (const auto& [k, f] : fields()) {
    if (f.*selector) text += k + "=" + f.get(config) + "\n";
  }
  return data::hex64(data::fnv1a(text));
}

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw InvalidInput("config key " + key + ": " + what);
}

}  // namespace

void TrainConfig::validate() const {
  require(max_steps >= 0, "max_steps", "must be >= 0");
  require(checkpoint_every >= 0, "checkpoint_every", "must be >= 0");
  require(lr > 0, "lr", "must be > 0");
  require(beta1 > 0 && beta1 < 1, "beta1", "must lie in (0, 1)");
  require(beta2 > 0 && beta2 < 1, "beta2", "must lie in (0, 1)");
  require(batch_size >= 1, "batch_size", "must be >= 1");
  require(lowres_size >= 16 && lowres_size % 4 == 0, "lowres_size", "must be >= 16 and divisible by 4");
  require(n_regions >= 1, "n_regions", "must be >= 1");
  require(region_size >= 16 && region_size % 4 == 0, "region_size", "must be >= 16 and divisible by 4");
  require(region_mode == "attention" || region_mode == "fixed", "region_mode", "must be attention or fixed");
  require(region_mode != "fixed" || n_regions <= 3, "n_regions", "fixed mode supports 1 to 3 regions");
  require(attention_pool >= 1, "attention_pool", "must be >= 1");
  require(qkv_channels >= 1 && qkv_hidden_channels >= 1, "qkv_channels", "must be >= 1");
  require(g_base_channels >= 1 && g_res_blocks >= 0, "g_base_channels", "generator sizes must be positive");
  require(d_base_channels >= 1 && d_layers_low >= 1 && d_layers_high >= 1, "d_base_channels", "discriminator sizes must be positive");
  for (const auto& [k, v] : {std::pair{"lambda_adv", weights.adv}, {"lambda_idt", weights.idt}, {"lambda_nce", weights.nce},
                             {"lambda_h", weights.h}, {"lambda_v", weights.v}}) {
    require(v >= 0, k, "must be >= 0");
  }
  require(nce_samples >= 1, "nce_samples", "must be >= 1");
  require(nce_temperature > 0, "nce_temperature", "must be > 0");
  require(nce_proj_dim >= 1, "nce_proj_dim", "must be >= 1");
  require(!source_domain.empty() && !target_domain.empty(), "source_domain", "domains must be named");
  stains();
}

color::StainMatrix TrainConfig::stains() const {
  if (stain_matrix == "ruifrok-johnston") return color::ruifrok_johnston();
  return color::parse_stain_matrix(stain_matrix);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : fields()) keys.push_back(k);
  return keys;
}

void set_config_value(TrainConfig& config, const std::string& key, const std::string& value) {
  field(key).set(config, key, value);
}

std::string get_config_value(const TrainConfig& config, const std::string& key) { return field(key).get(config); }

std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text, const std::string& origin) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InvalidInput(origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

TrainConfig load_config_file(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_overrides(base, parse_key_values(ss.str(), path.string()));
  return base;
}

void apply_overrides(TrainConfig& config, const std::vector<std::pair<std::string, std::string>>& overrides) {
  for (const auto& [k, v] : overrides) set_config_value(config, k, v);
}

std::string canonical_text(const TrainConfig& config) {
  std::string text;
  for (const auto& [k, f] : fields()) text += k + "=" + f.get(config) + "\n";
  return text;
}

std::string config_hash(const TrainConfig& config) { return hash_of(config, &Field::experiment); }

std::string architecture_hash(const TrainConfig& config) { return hash_of(config, &Field::architecture); }

}  // namespace avgan
