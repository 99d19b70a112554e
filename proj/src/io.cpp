#include "cellmodel/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace cellmodel {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) out.push_back(trim(field));
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_number(const std::string& text, const std::filesystem::path& path, std::size_t line) {
  double v = 0.0;
  const char* first = text.data();
  const char* last = first + text.size();
  if (!text.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || text.empty()) {
    std::ostringstream msg;
    msg << path.string() << ":" << line << ": not a number: '" << text << "'";
    throw IoError(msg.str());
  }
  return v;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

void close_out(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

json vector_json(const Eigen::VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

Eigen::VectorXd vector_from(const json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

json filter_json(const FilterStateParams& p) {
  return json{{"w", vector_json(p.w)}, {"fixed_output_gain", p.fixed_output_gain}};
}

FilterStateParams filter_from(const json& j) {
  FilterStateParams p;
  const Eigen::VectorXd w = vector_from(j.at("w"));
  if (w.size() != 12) throw IoError("filter_state params: expected 12 weights");
  p.w = w;
  p.fixed_output_gain = j.value("fixed_output_gain", 10.0);
  return p;
}

json cell_json(const CellParams& c) {
  return json{{"nominal_capacity_ah", c.nominal_capacity_ah},
              {"eta_discharge", c.eta_discharge},
              {"eta_charge", c.eta_charge},
              {"v_high", c.v_high},
              {"v_low", c.v_low},
              {"peukert_exponent_n", c.peukert_exponent_n},
              {"peukert_capacity_cp", c.peukert_capacity_cp},
              {"sample_period_h", c.sample_period_h}};
}

CellParams cell_from(const json& j) {
  CellParams c;
  c.nominal_capacity_ah = j.at("nominal_capacity_ah").get<double>();
  c.eta_discharge = j.at("eta_discharge").get<double>();
  c.eta_charge = j.at("eta_charge").get<double>();
  c.v_high = j.at("v_high").get<double>();
  c.v_low = j.at("v_low").get<double>();
  c.peukert_exponent_n = j.at("peukert_exponent_n").get<double>();
  c.peukert_capacity_cp = j.at("peukert_capacity_cp").get<double>();
  c.sample_period_h = j.at("sample_period_h").get<double>();
  return c;
}

struct ParamsToJson {
  json operator()(const CombinedParams& p) const {
    return json{{"k0", p.k0},           {"r_discharge", p.r_discharge}, {"r_charge", p.r_charge},
                {"k1", p.k1},           {"k2", p.k2},                   {"k3", p.k3},
                {"k4", p.k4}};
  }
  json operator()(const FilterStateParams& p) const { return filter_json(p); }
  json operator()(const ScheduledParams& p) const {
    json bins = json::array();
    for (const ScheduleBin& b : p.bins) {
      // JSON has no infinity; null marks the open-ended last bin.
      bins.push_back(json{{"upper_a", std::isinf(b.upper_a) ? json(nullptr) : json(b.upper_a)},
                          {"params", filter_json(b.params)}});
    }
    return json{{"bins", bins}};
  }
  json operator()(const RbfParams& p) const {
    json centers = json::array();
    for (Eigen::Index r = 0; r < p.centers.rows(); ++r)
      centers.push_back(vector_json(p.centers.row(r).transpose()));
    json layout = json::array();
    for (RbfInput in : p.input_layout) layout.push_back(to_string(in));
    return json{{"centers", centers},
                {"widths", vector_json(p.widths)},
                {"weights", vector_json(p.weights)},
                {"input_layout", layout},
                {"input_min", vector_json(p.input_min)},
                {"input_max", vector_json(p.input_max)},
                {"state_filter", p.state_filter ? filter_json(*p.state_filter) : json(nullptr)}};
  }
};

CellModel params_from(const std::string& family, const json& j) {
  if (family == "combined") {
    CombinedParams p;
    p.k0 = j.at("k0").get<double>();
    p.r_discharge = j.at("r_discharge").get<double>();
    p.r_charge = j.at("r_charge").get<double>();
    p.k1 = j.at("k1").get<double>();
    p.k2 = j.at("k2").get<double>();
    p.k3 = j.at("k3").get<double>();
    p.k4 = j.at("k4").get<double>();
    return p;
  }
  if (family == "filter_state") return filter_from(j);
  if (family == "scheduled") {
    ScheduledParams p;
    for (const json& b : j.at("bins")) {
      const double upper = b.at("upper_a").is_null() ? std::numeric_limits<double>::infinity()
                                                     : b.at("upper_a").get<double>();
      p.bins.push_back(ScheduleBin{upper, filter_from(b.at("params"))});
    }
    return p;
  }
  if (family == "rbf") {
    RbfParams p;
    p.input_layout.clear();
    for (const json& name : j.at("input_layout"))
      p.input_layout.push_back(rbf_input_from_string(name.get<std::string>()));
    const json& centers = j.at("centers");
    p.centers.resize(static_cast<Eigen::Index>(centers.size()), p.input_dim());
    for (std::size_t r = 0; r < centers.size(); ++r) {
      const Eigen::VectorXd row = vector_from(centers[r]);
      if (row.size() != p.input_dim()) throw IoError("rbf params: center width differs from layout");
      p.centers.row(static_cast<Eigen::Index>(r)) = row.transpose();
    }
    p.widths = vector_from(j.at("widths"));
    p.weights = vector_from(j.at("weights"));
    p.input_min = vector_from(j.at("input_min"));
    p.input_max = vector_from(j.at("input_max"));
    if (j.contains("state_filter") && !j.at("state_filter").is_null())
      p.state_filter = filter_from(j.at("state_filter"));
    return p;
  }
  throw IoError("unknown model family '" + family + "'");
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void write_trace_csv(const std::filesystem::path& path, const Trace& trace) {
  std::ofstream out = open_out(path);
  out << kTraceHeader << '\n';
  for (const Sample& s : trace.samples) {
    out << format_double(s.time_s) << ',' << format_double(s.current_a) << ','
        << format_double(s.voltage_v) << ',' << format_double(s.temp_c) << '\n';
  }
  close_out(out, path);
}

Trace read_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || trim(line) != kTraceHeader)
    throw IoError(path.string() + ": expected header '" + std::string(kTraceHeader) + "'");
  Trace trace;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 4) {
      std::ostringstream msg;
      msg << path.string() << ":" << lineno << ": expected 4 fields, found " << f.size();
      throw IoError(msg.str());
    }
    trace.samples.push_back(Sample{parse_number(f[0], path, lineno), parse_number(f[1], path, lineno),
                                   parse_number(f[2], path, lineno), parse_number(f[3], path, lineno)});
  }
  if (trace.empty()) throw IoError(path.string() + ": no samples");
  for (std::size_t k = 1; k < trace.size(); ++k)
    if (!(trace.samples[k].time_s > trace.samples[k - 1].time_s))
      throw IoError(path.string() + ": time column is not strictly increasing");
  if (trace.size() > 1 && !trace.is_uniform()) {
    trace = resample_uniform(trace, trace.period_s());
    trace.meta["resampled"] = "true";
  }
  trace.meta["source"] = path.string();
  return trace;
}

const std::vector<double>& CsvTable::column(const std::string& name) const {
  for (std::size_t c = 0; c < header.size(); ++c)
    if (header[c] == name) return columns.at(c);
  throw IoError("CSV has no column '" + name + "'");
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  if (table.header.size() != table.columns.size())
    throw std::invalid_argument("write_csv: header and column counts differ");
  for (const auto& c : table.columns)
    if (c.size() != table.rows()) throw std::invalid_argument("write_csv: ragged columns");
  std::ofstream out = open_out(path);
  for (std::size_t c = 0; c < table.header.size(); ++c) out << (c ? "," : "") << table.header[c];
  out << '\n';
  for (std::size_t r = 0; r < table.rows(); ++r) {
    for (std::size_t c = 0; c < table.columns.size(); ++c)
      out << (c ? "," : "") << format_double(table.columns[c][r]);
    out << '\n';
  }
  close_out(out, path);
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty file");
  CsvTable table;
  table.header = split(trim(line), ',');
  table.columns.resize(table.header.size());
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != table.header.size()) {
      std::ostringstream msg;
      msg << path.string() << ":" << lineno << ": expected " << table.header.size() << " fields";
      throw IoError(msg.str());
    }
    for (std::size_t c = 0; c < f.size(); ++c) table.columns[c].push_back(parse_number(f[c], path, lineno));
  }
  return table;
}

std::string model_to_json(const CellModel& model, const CellParams& cell) {
  const json j{{"family", family_name(model)},
               {"params", std::visit(ParamsToJson{}, model)},
               {"cell", cell_json(cell)}};
  return j.dump(2) + "\n";
}

ModelFile model_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    ModelFile f{params_from(j.at("family").get<std::string>(), j.at("params")),
                j.contains("cell") ? cell_from(j.at("cell")) : CellParams{}};
    return f;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed parameter file: ") + e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out = open_out(path);
  out << text;
  close_out(out, path);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

}  // namespace cellmodel
