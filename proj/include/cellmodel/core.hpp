// Cell constants, Coulomb counting and the time-series record shared by
// every other part of the library.
#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cellmodel {

/// Physical constants of one cell. Currents are in amps with positive
/// meaning discharge; the sample period is in hours.
struct CellParams {
  double nominal_capacity_ah = 8.0;
  double eta_discharge = 1.0;
  double eta_charge = 0.995;
  double v_high = 4.2;
  double v_low = 3.0;
  double peukert_exponent_n = 1.0;
  double peukert_capacity_cp = 8.0;
  double sample_period_h = 1.0 / 3600.0;

  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const;

  double sample_period_s() const { return sample_period_h * 3600.0; }
  /// Current corresponding to a rate of 1C.
  double one_c_amps() const { return nominal_capacity_ah; }
};

/// State of charge as a fraction of nominal capacity.
struct Soc {
  double value = 1.0;
  /// Set when the last update had to be clamped into [0, 1].
  bool clamped = false;
};

struct Sample {
  double time_s = 0.0;
  double current_a = 0.0;
  double voltage_v = 0.0;
  double temp_c = 25.0;
};

/// Uniformly sampled record of current, voltage and temperature.
struct Trace {
  std::vector<Sample> samples;
  std::map<std::string, std::string> meta;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  std::vector<double> currents() const;
  std::vector<double> voltages() const;

  /// Mean sample spacing in seconds. Requires at least two samples.
  double period_s() const;

  /// Non-empty, strictly increasing time, uniform within 1 part in 1e6.
  void validate() const;
  bool is_uniform(double rel_tol = 1e-6) const;
};

/// Builds a trace with 1/period sampling from current and voltage series.
Trace make_trace(std::span<const double> current_a, std::span<const double> voltage_v,
                 double period_s = 1.0, double t0_s = 0.0);

/// Linear-interpolation resampling onto a uniform grid starting at the first
/// sample time. Used on ingest of logs with jittery timestamps.
Trace resample_uniform(const Trace& trace, double period_s);

double coulombic_efficiency(double current_a, const CellParams& cell);

/// One step of the Coulomb-counting recurrence, clamped into [0, 1].
Soc soc_step(Soc soc, double current_a, const CellParams& cell);

/// Rate-corrected throughput per sample, in fractions of capacity.
/// The sign of the current is kept so that charge raises SOC.
double peukert_current(double current_a, const CellParams& cell);

/// Element k is SOC after k steps; the result has the length of the trace.
std::vector<Soc> soc_trajectory(const Trace& trace, Soc soc0, const CellParams& cell);
std::vector<double> soc_values(const std::vector<Soc>& socs);

}  // namespace cellmodel
