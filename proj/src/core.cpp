#include "cellmodel/core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cellmodel {

void CellParams::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("CellParams: " + what); };
  if (!(nominal_capacity_ah > 0.0)) fail("nominal_capacity_ah must be > 0");
  if (!(peukert_capacity_cp > 0.0)) fail("peukert_capacity_cp must be > 0");
  if (!(peukert_exponent_n >= 1.0)) fail("peukert_exponent_n must be >= 1");
  if (!(eta_charge > 0.0 && eta_charge <= 1.0)) fail("eta_charge must lie in (0, 1]");
  if (eta_discharge != 1.0) fail("eta_discharge must be exactly 1");
  if (!(v_low < v_high)) fail("v_low must be below v_high");
  if (!(sample_period_h > 0.0)) fail("sample_period_h must be > 0");
}

std::vector<double> Trace::currents() const {
  std::vector<double> out(samples.size());
  std::transform(samples.begin(), samples.end(), out.begin(),
                 [](const Sample& s) { return s.current_a; });
  return out;
}

std::vector<double> Trace::voltages() const {
  std::vector<double> out(samples.size());
  std::transform(samples.begin(), samples.end(), out.begin(),
                 [](const Sample& s) { return s.voltage_v; });
  return out;
}

double Trace::period_s() const {
  if (samples.size() < 2) throw std::invalid_argument("Trace: period needs at least two samples");
  return (samples.back().time_s - samples.front().time_s) / double(samples.size() - 1);
}

bool Trace::is_uniform(double rel_tol) const {
  if (samples.size() < 3) return true;
  const double dt = period_s();
  for (std::size_t k = 1; k < samples.size(); ++k) {
    const double step = samples[k].time_s - samples[k - 1].time_s;
    if (std::abs(step - dt) > rel_tol * dt) return false;
  }
  return true;
}

void Trace::validate() const {
  if (samples.empty()) throw std::invalid_argument("Trace: empty");
  for (std::size_t k = 1; k < samples.size(); ++k) {
    if (!(samples[k].time_s > samples[k - 1].time_s)) {
      std::ostringstream msg;
      msg << "Trace: time not strictly increasing at sample " << k;
      throw std::invalid_argument(msg.str());
    }
  }
  if (!is_uniform()) throw std::invalid_argument("Trace: non-uniform sampling");
}

Trace make_trace(std::span<const double> current_a, std::span<const double> voltage_v,
                 double period_s, double t0_s) {
  if (!voltage_v.empty() && voltage_v.size() != current_a.size())
    throw std::invalid_argument("make_trace: current and voltage lengths differ");
  Trace trace;
  trace.samples.resize(current_a.size());
  for (std::size_t k = 0; k < current_a.size(); ++k) {
    Sample& s = trace.samples[k];
    s.time_s = t0_s + period_s * double(k);
    s.current_a = current_a[k];
    s.voltage_v = voltage_v.empty() ? 0.0 : voltage_v[k];
  }
  return trace;
}

Trace resample_uniform(const Trace& trace, double period_s) {
  if (trace.empty()) throw std::invalid_argument("resample_uniform: empty trace");
  if (!(period_s > 0.0)) throw std::invalid_argument("resample_uniform: period must be > 0");
  for (std::size_t k = 1; k < trace.size(); ++k)
    if (!(trace.samples[k].time_s > trace.samples[k - 1].time_s))
      throw std::invalid_argument("resample_uniform: time not strictly increasing");

  Trace out;
  out.meta = trace.meta;
  const double t0 = trace.samples.front().time_s;
  const double t1 = trace.samples.back().time_s;
  const auto n = static_cast<std::size_t>(std::floor((t1 - t0) / period_s * (1.0 + 1e-12))) + 1;
  out.samples.reserve(n);
  std::size_t j = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = t0 + period_s * double(k);
    while (j + 1 < trace.size() && trace.samples[j + 1].time_s < t) ++j;
    const Sample& a = trace.samples[j];
    const Sample& b = trace.samples[std::min(j + 1, trace.size() - 1)];
    const double span = b.time_s - a.time_s;
    const double f = span > 0.0 ? std::clamp((t - a.time_s) / span, 0.0, 1.0) : 0.0;
    Sample s;
    s.time_s = t;
    s.current_a = a.current_a + f * (b.current_a - a.current_a);
    s.voltage_v = a.voltage_v + f * (b.voltage_v - a.voltage_v);
    s.temp_c = a.temp_c + f * (b.temp_c - a.temp_c);
    out.samples.push_back(s);
  }
  return out;
}

double coulombic_efficiency(double current_a, const CellParams& cell) {
  return current_a < 0.0 ? cell.eta_charge : cell.eta_discharge;
}

Soc soc_step(Soc soc, double current_a, const CellParams& cell) {
  const double raw = soc.value - coulombic_efficiency(current_a, cell) * current_a *
                                     cell.sample_period_h / cell.nominal_capacity_ah;
  const double clamped = std::clamp(raw, 0.0, 1.0);
  return Soc{clamped, clamped != raw};
}

double peukert_current(double current_a, const CellParams& cell) {
  if (current_a == 0.0) return 0.0;
  const double magnitude = cell.peukert_exponent_n == 1.0
                               ? std::abs(current_a)
                               : std::pow(std::abs(current_a), cell.peukert_exponent_n);
  return coulombic_efficiency(current_a, cell) * std::copysign(magnitude, current_a) *
         cell.sample_period_h / cell.peukert_capacity_cp;
}

std::vector<Soc> soc_trajectory(const Trace& trace, Soc soc0, const CellParams& cell) {
  std::vector<Soc> out;
  out.reserve(trace.size());
  Soc soc = soc0;
  for (const Sample& s : trace.samples) {
    out.push_back(soc);
    soc = soc_step(soc, s.current_a, cell);
  }
  return out;
}

std::vector<double> soc_values(const std::vector<Soc>& socs) {
  std::vector<double> out(socs.size());
  std::transform(socs.begin(), socs.end(), out.begin(), [](const Soc& s) { return s.value; });
  return out;
}

}  // namespace cellmodel
