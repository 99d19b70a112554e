#include <charconv>
#include <cmath>
#include <sstream>
#include <utility>

#include "cellmodel/cli.hpp"
#include "cellmodel/io.hpp"

namespace cellmodel {

namespace {

using Section = std::vector<std::pair<std::string, std::string>>;

// Every accepted key with its default. Order here is the echo order.
const std::map<std::string, Section>& schema() {
  static const std::map<std::string, Section> s{
      {"cell",
       {{"capacity_ah", "8"},
        {"eta_discharge", "1"},
        {"eta_charge", "0.995"},
        {"v_high", "4.2"},
        {"v_low", "3.0"},
        {"peukert_n", "1"},
        {"peukert_cp", "8"},
        {"sample_period_s", "1"}}},
      {"profile",
       {{"kind", "pulse"},
        {"rate_c", "1"},
        {"pulse_s", "60"},
        {"rest_s", "300"},
        {"block_soc", "0.1"},
        {"soc_start", "1"},
        {"soc_end", "0.1"},
        {"duration_s", "3600"},
        {"repetition_s", "600"},
        {"segment_min_s", "5"},
        {"segment_max_s", "40"},
        {"mean_c", "1.5"},
        {"std_c", "2.5"}}},
      {"plant", {{"truth", "default"}, {"soc0", "auto"}}},
      {"sensor",
       {{"enabled", "true"},
        {"v_noise_sigma", "0.001"},
        {"i_noise_sigma", "0.1"},
        {"i_bias", "0"},
        {"adc_bits", "10"},
        {"adc_fullscale_v", "5"},
        {"quantize", "true"}}},
      {"simulate", {{"write_truth_trace", "true"}}},
      {"fit",
       {{"input", "trace.csv"},
        {"family", "filter_state"},
        {"soc0", "1"},
        {"band_lo", "1e-4"},
        {"band_hi", "0.9999"},
        {"max_condition", "1e10"},
        {"init", "auto"},
        {"passes", "3"},
        {"r_meas", "0.5"},
        {"p0", "0.01"},
        {"p0_rel", "0"},
        {"bin_edges_c", "1.5,3"},
        {"n_kernels", "10"},
        {"rbf_layout", "y_prev,soc,current"},
        {"state_filter", "none"},
        {"width_scale", "1.5"},
        {"rbf_passes", "3"},
        {"rbf_r_meas", "1e-5"},
        {"rbf_p0_weights", "1"},
        {"rbf_p0_centers", "0.01"},
        {"rbf_p0_widths", "0.01"}}},
      {"validate", {{"params", "params.json"}, {"input", "trace.csv"}, {"soc0", "1"}}},
      {"soc",
       {{"params", "params.json"},
        {"input", "trace.csv"},
        {"truth_soc", ""},
        {"soc0", "1"},
        {"p0_soc", "0.09"},
        {"p0_filter", "1e-6"},
        {"q_soc", "auto"},
        {"q_filter", "1e-6"},
        {"r_meas", "auto"}}},
      {"sweep-kernels",
       {{"n_kernels", "10,25,50,100"},
        {"layout", "soc,current,x3,x4"},
        {"state_filter", "plant"},
        {"train", ""},
        {"validate", ""},
        {"train_seeds", "10"},
        {"holdout_seed_offset", "1000"},
        {"soc_start", "0.95"},
        {"soc_end", "0.1"},
        {"width_scale", "1.5"},
        {"rbf_passes", "3"},
        {"rbf_r_meas", "1e-5"},
        {"rbf_p0_weights", "1"},
        {"rbf_p0_centers", "0.01"},
        {"rbf_p0_widths", "0.01"}}},
  };
  return s;
}

const std::map<std::string, std::vector<std::string>>& command_sections() {
  static const std::map<std::string, std::vector<std::string>> m{
      {"simulate", {"cell", "profile", "plant", "sensor", "simulate"}},
      {"fit", {"cell", "fit"}},
      {"validate", {"cell", "validate"}},
      {"soc", {"cell", "sensor", "soc"}},
      {"sweep-kernels", {"cell", "profile", "plant", "sensor", "sweep-kernels"}},
  };
  return m;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool known_key(const std::string& section, const std::string& key) {
  const auto it = schema().find(section);
  if (it == schema().end()) return false;
  for (const auto& kv : it->second)
    if (kv.first == key) return true;
  return false;
}

double to_double(const std::string& section, const std::string& key, const std::string& v) {
  double out = 0.0;
  const char* first = v.data();
  const char* last = first + v.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last || v.empty())
    throw ConfigError(section + "." + key + ": expected a number, got '" + v + "'");
  return out;
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"simulate", "fit", "validate", "soc", "sweep-kernels"};
  return names;
}

void RunConfig::set(const std::string& section, const std::string& key, const std::string& value) {
  if (!schema().count(section)) throw ConfigError("unknown config section [" + section + "]");
  if (!known_key(section, key)) throw ConfigError("unknown config key " + section + "." + key);
  values_[section][key] = value;
}

RunConfig RunConfig::load(const std::string& command, const std::string& config_text,
                          const std::vector<std::string>& overrides, std::uint64_t seed,
                          std::filesystem::path out_dir) {
  if (!command_sections().count(command)) throw ConfigError("unknown command '" + command + "'");
  RunConfig cfg;
  cfg.command_ = command;
  cfg.seed_ = seed;
  cfg.out_dir_ = std::move(out_dir);
  for (const auto& [section, keys] : schema())
    for (const auto& [key, value] : keys) cfg.values_[section][key] = value;

  std::istringstream in(config_text);
  std::string line;
  std::string section = command;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!schema().count(section))
        throw ConfigError("config line " + std::to_string(lineno) + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (!known_key(section, key))
      throw ConfigError("config line " + std::to_string(lineno) + ": unknown key " + section + "." + key);
    cfg.values_[section][key] = trim(line.substr(eq + 1));
  }

  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
    std::string key = trim(o.substr(0, eq));
    std::string sec = command;
    // Section names never contain dots, so the first dot splits the key.
    if (const auto dot = key.find('.'); dot != std::string::npos) {
      sec = key.substr(0, dot);
      key = key.substr(dot + 1);
    }
    cfg.set(sec, key, trim(o.substr(eq + 1)));
  }
  return cfg;
}

std::string RunConfig::text(const std::string& section, const std::string& key) const {
  const auto s = values_.find(section);
  if (s == values_.end() || !s->second.count(key))
    throw ConfigError("config key " + section + "." + key + " is not defined");
  return s->second.at(key);
}

double RunConfig::number(const std::string& section, const std::string& key) const {
  return to_double(section, key, text(section, key));
}

long RunConfig::integer(const std::string& section, const std::string& key) const {
  const double v = number(section, key);
  if (v != std::floor(v) || std::abs(v) > 9e15)
    throw ConfigError(section + "." + key + ": expected an integer");
  return static_cast<long>(v);
}

bool RunConfig::flag(const std::string& section, const std::string& key) const {
  const std::string v = text(section, key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(section + "." + key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> RunConfig::texts(const std::string& section, const std::string& key) const {
  std::vector<std::string> out;
  std::istringstream in(text(section, key));
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> RunConfig::numbers(const std::string& section, const std::string& key) const {
  std::vector<double> out;
  for (const std::string& item : texts(section, key)) out.push_back(to_double(section, key, item));
  return out;
}

std::string RunConfig::resolved_text() const {
  std::ostringstream out;
  out << "command = " << command_ << "\n";
  out << "seed = " << seed_ << "\n";
  for (const std::string& section : command_sections().at(command_)) {
    out << "\n[" << section << "]\n";
    for (const auto& kv : schema().at(section)) out << kv.first << " = " << values_.at(section).at(kv.first) << "\n";
  }
  return out.str();
}

std::string RunConfig::hash() const { return hex64(fnv1a64(resolved_text())); }

CellParams RunConfig::cell() const {
  CellParams c;
  c.nominal_capacity_ah = number("cell", "capacity_ah");
  c.eta_discharge = number("cell", "eta_discharge");
  c.eta_charge = number("cell", "eta_charge");
  c.v_high = number("cell", "v_high");
  c.v_low = number("cell", "v_low");
  c.peukert_exponent_n = number("cell", "peukert_n");
  c.peukert_capacity_cp = number("cell", "peukert_cp");
  c.sample_period_h = number("cell", "sample_period_s") / 3600.0;
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

ProfileSpec RunConfig::profile() const {
  ProfileSpec p;
  try {
    p.kind = profile_kind_from_string(text("profile", "kind"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  p.rate_c = number("profile", "rate_c");
  p.pulse_s = number("profile", "pulse_s");
  p.rest_s = number("profile", "rest_s");
  p.block_soc = number("profile", "block_soc");
  p.soc_start = number("profile", "soc_start");
  p.soc_end = number("profile", "soc_end");
  p.duration_s = number("profile", "duration_s");
  p.repetition_s = number("profile", "repetition_s");
  p.segment_min_s = number("profile", "segment_min_s");
  p.segment_max_s = number("profile", "segment_max_s");
  p.mean_c = number("profile", "mean_c");
  p.std_c = number("profile", "std_c");
  p.seed = seed_;
  return p;
}

SensorConfig RunConfig::sensor() const {
  SensorConfig s;
  s.v_noise_sigma = number("sensor", "v_noise_sigma");
  s.i_noise_sigma = number("sensor", "i_noise_sigma");
  s.i_bias = number("sensor", "i_bias");
  s.adc_bits = static_cast<int>(integer("sensor", "adc_bits"));
  s.adc_fullscale_v = number("sensor", "adc_fullscale_v");
  s.quantize = flag("sensor", "quantize");
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return s;
}

}  // namespace cellmodel
