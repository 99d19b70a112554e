// File formats: canonical trace CSV, plain numeric CSV tables and JSON
// parameter files.
#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "cellmodel/core.hpp"
#include "cellmodel/models.hpp"

namespace cellmodel {

/// Unreadable or malformed input, or an output that could not be written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kTraceHeader = "time_s,current_a,voltage_v,temp_c";

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

void write_trace_csv(const std::filesystem::path& path, const Trace& trace);
/// Parses a canonical trace CSV. A non-uniform time base is resampled onto
/// its mean period and noted in the trace meta.
Trace read_trace_csv(const std::filesystem::path& path);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> columns;

  const std::vector<double>& column(const std::string& name) const;
  std::size_t rows() const { return columns.empty() ? 0 : columns.front().size(); }
};

void write_csv(const std::filesystem::path& path, const CsvTable& table);
CsvTable read_csv(const std::filesystem::path& path);

std::string model_to_json(const CellModel& model, const CellParams& cell);

struct ModelFile {
  CellModel model;
  CellParams cell;
};
ModelFile model_from_json(const std::string& text);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// 64-bit FNV-1a, printed as 16 hex digits.
std::uint64_t fnv1a64(const std::string& bytes);
std::string hex64(std::uint64_t v);

}  // namespace cellmodel
