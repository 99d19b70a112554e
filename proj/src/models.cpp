#include "cellmodel/models.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

namespace cellmodel {

namespace {

constexpr double kFullChargeVoltage = 4.2;

void require_positive_soc(double soc, const char* who) {
  if (!(soc > 0.0)) throw ModelDomainError(std::string(who) + ": SOC must be > 0");
}

void require_open_unit_soc(double soc, const char* who) {
  if (!(soc > 0.0 && soc < 1.0))
    throw ModelDomainError(std::string(who) + ": SOC must lie strictly inside (0, 1)");
}

}  // namespace

double shepherd_output(double soc, double current_a, double r, double k1) {
  require_positive_soc(soc, "shepherd_output");
  return kFullChargeVoltage - r * current_a - k1 / soc;
}

double unnewehr_output(double soc, double current_a, double r, double ki) {
  return kFullChargeVoltage - r * current_a - ki * soc;
}

double nernst_output(double soc, double current_a, double r, double k1) {
  require_positive_soc(soc, "nernst_output");
  return kFullChargeVoltage - r * current_a + k1 * std::log(soc);
}

double modified_nernst_output(double soc, double current_a, double r, double k2, double k3) {
  require_open_unit_soc(soc, "modified_nernst_output");
  return kFullChargeVoltage - r * current_a + k2 * std::log(soc) + k3 * std::log(1.0 - soc);
}

Eigen::Matrix<double, 7, 1> CombinedParams::as_vector() const {
  Eigen::Matrix<double, 7, 1> theta;
  theta << k0, r_discharge, r_charge, k1, k2, k3, k4;
  return theta;
}

CombinedParams CombinedParams::from_vector(const Eigen::Matrix<double, 7, 1>& theta) {
  return CombinedParams{theta(0), theta(1), theta(2), theta(3), theta(4), theta(5), theta(6)};
}

void CombinedParams::validate() const {
  if (!as_vector().allFinite()) throw std::invalid_argument("CombinedParams: non-finite value");
  if (r_discharge < 0.0 || r_charge < 0.0)
    throw std::invalid_argument("CombinedParams: resistances must be >= 0");
}

double combined_output(double soc, double current_a, const CombinedParams& p) {
  require_open_unit_soc(soc, "combined_output");
  const double r = current_a > 0.0 ? p.r_discharge : p.r_charge;
  return p.k0 - r * current_a - p.k1 / soc - p.k2 * soc + p.k3 * std::log(soc) +
         p.k4 * std::log(1.0 - soc);
}

double filter_pole_radius(const FilterStateParams& p) {
  return std::max(std::abs(p(2)), std::hypot(p(4), p(5)));
}

bool filter_is_stable(const FilterStateParams& p) { return filter_pole_radius(p) < 1.0; }

void validate(const FilterStateParams& p) {
  if (!p.w.allFinite()) throw std::invalid_argument("FilterStateParams: non-finite weight");
  if (!filter_is_stable(p))
    throw std::invalid_argument("FilterStateParams: filter poles not inside the unit circle");
  if (!(p(9) > 0.0)) throw std::invalid_argument("FilterStateParams: w9 must be > 0");
}

std::size_t ScheduledParams::bin_index(double current_a) const {
  const double magnitude = std::abs(current_a);
  for (std::size_t b = 0; b < bins.size(); ++b)
    if (magnitude < bins[b].upper_a) return b;
  return bins.size() - 1;
}

void ScheduledParams::validate() const {
  if (bins.empty()) throw std::invalid_argument("ScheduledParams: no bins");
  for (std::size_t b = 1; b < bins.size(); ++b)
    if (!(bins[b].upper_a > bins[b - 1].upper_a))
      throw std::invalid_argument("ScheduledParams: bin bounds must increase strictly");
  if (bins.back().upper_a != std::numeric_limits<double>::infinity())
    throw std::invalid_argument("ScheduledParams: final bound must be +infinity");
  for (const auto& bin : bins) cellmodel::validate(bin.params);
}

ScheduledParams default_schedule(const FilterStateParams& params, const CellParams& cell) {
  const double c = cell.one_c_amps();
  return ScheduledParams{{{1.5 * c, params},
                          {3.0 * c, params},
                          {std::numeric_limits<double>::infinity(), params}}};
}

std::string to_string(RbfInput input) {
  switch (input) {
    case RbfInput::PreviousVoltage: return "y_prev";
    case RbfInput::Soc: return "soc";
    case RbfInput::Current: return "current";
    case RbfInput::FilterX2: return "x2";
    case RbfInput::FilterX3: return "x3";
    case RbfInput::FilterX4: return "x4";
  }
  return "?";
}

RbfInput rbf_input_from_string(const std::string& name) {
  for (RbfInput in : {RbfInput::PreviousVoltage, RbfInput::Soc, RbfInput::Current,
                      RbfInput::FilterX2, RbfInput::FilterX3, RbfInput::FilterX4})
    if (to_string(in) == name) return in;
  throw std::invalid_argument("unknown RBF input signal '" + name + "'");
}

bool RbfParams::uses_filter_states() const {
  return std::any_of(input_layout.begin(), input_layout.end(), [](RbfInput in) {
    return in == RbfInput::FilterX2 || in == RbfInput::FilterX3 || in == RbfInput::FilterX4;
  });
}

bool RbfParams::uses_previous_voltage() const {
  return std::find(input_layout.begin(), input_layout.end(), RbfInput::PreviousVoltage) !=
         input_layout.end();
}

void RbfParams::validate() const {
  const Eigen::Index n = centers.rows();
  if (n < 1) throw std::invalid_argument("RbfParams: need at least one kernel");
  if (centers.cols() != input_dim())
    throw std::invalid_argument("RbfParams: center dimension differs from input layout");
  if (widths.size() != n || weights.size() != n + 1)
    throw std::invalid_argument("RbfParams: widths/weights sized inconsistently");
  if ((widths.array() <= 0.0).any()) throw std::invalid_argument("RbfParams: widths must be > 0");
  if (input_min.size() != input_max.size() ||
      (input_min.size() != 0 && input_min.size() != input_dim()))
    throw std::invalid_argument("RbfParams: normalization extrema sized inconsistently");
  if (uses_filter_states() && !state_filter)
    throw std::invalid_argument("RbfParams: filter-state inputs need a state filter");
  if (!centers.allFinite() || !widths.allFinite() || !weights.allFinite())
    throw std::invalid_argument("RbfParams: non-finite parameter");
}

Eigen::VectorXd RbfParams::normalize(const Eigen::VectorXd& u) const {
  if (u.size() != input_dim())
    throw std::invalid_argument("RBF input dimension " + std::to_string(u.size()) +
                                " does not match layout dimension " +
                                std::to_string(input_dim()));
  if (input_min.size() == 0) return u;
  Eigen::VectorXd z(u.size());
  for (Eigen::Index d = 0; d < u.size(); ++d) {
    const double span = input_max(d) - input_min(d);
    z(d) = span > 0.0 ? 2.0 * (u(d) - input_min(d)) / span - 1.0 : 0.0;
  }
  return z;
}

Eigen::VectorXd rbf_activations(const Eigen::VectorXd& z, const RbfParams& p) {
  const Eigen::VectorXd dist2 = (p.centers.rowwise() - z.transpose()).rowwise().squaredNorm();
  return (-dist2.array() / p.widths.array().square()).exp().matrix();
}

double rbf_output_normalized(const Eigen::VectorXd& z, const RbfParams& p) {
  if (z.size() != p.centers.cols())
    throw std::invalid_argument("RBF input dimension does not match the centers");
  const Eigen::Index n = p.n_kernels();
  return p.weights.head(n).dot(rbf_activations(z, p)) + p.weights(n);
}

double rbf_output(const Eigen::VectorXd& u, const RbfParams& p) {
  return rbf_output_normalized(p.normalize(u), p);
}

std::string family_name(const CellModel& model) {
  struct Visitor {
    std::string operator()(const CombinedParams&) const { return "combined"; }
    std::string operator()(const FilterStateParams&) const { return "filter_state"; }
    std::string operator()(const RbfParams&) const { return "rbf"; }
    std::string operator()(const ScheduledParams&) const { return "scheduled"; }
  };
  return std::visit(Visitor{}, model);
}

namespace {

FilterState initial_state(const SimulationInit& init) {
  FilterState x;
  x << init.soc0, init.filter_states;
  return x;
}

/// Assembles one raw RBF input vector from the available signals.
Eigen::VectorXd assemble_rbf_input(const RbfParams& p, double previous_voltage, double soc,
                                   double current_a, const FilterState& x) {
  Eigen::VectorXd u(p.input_dim());
  for (Eigen::Index d = 0; d < u.size(); ++d) {
    switch (p.input_layout[static_cast<std::size_t>(d)]) {
      case RbfInput::PreviousVoltage: u(d) = previous_voltage; break;
      case RbfInput::Soc: u(d) = soc; break;
      case RbfInput::Current: u(d) = current_a; break;
      case RbfInput::FilterX2: u(d) = x(1); break;
      case RbfInput::FilterX3: u(d) = x(2); break;
      case RbfInput::FilterX4: u(d) = x(3); break;
    }
  }
  return u;
}

/// Drives the RBF input signals (SOC and optional filter states) through a
/// trace, calling `visit(k, soc, x)` before each state advance.
template <typename Visit>
void drive_rbf_signals(const RbfParams& p, const Trace& trace, const CellParams& cell,
                       double soc0, Visit&& visit) {
  FilterState x = FilterState::Zero();
  x(0) = soc0;
  Soc soc{soc0, false};
  for (std::size_t k = 0; k < trace.size(); ++k) {
    const double i = trace.samples[k].current_a;
    const double soc_now = p.state_filter ? x(0) : soc.value;
    visit(k, soc_now, x);
    if (p.state_filter)
      x = filter_state_step(x, i, *p.state_filter, cell);
    else
      soc = soc_step(soc, i, cell);
  }
}

}  // namespace

std::vector<Eigen::VectorXd> rbf_input_series(const RbfParams& p, const Trace& trace,
                                              const CellParams& cell, double soc0,
                                              bool teacher_forced) {
  if (!teacher_forced && p.uses_previous_voltage())
    throw std::invalid_argument("rbf_input_series: free-run inputs need simulate()");
  std::vector<Eigen::VectorXd> out;
  out.reserve(trace.size());
  drive_rbf_signals(p, trace, cell, soc0, [&](std::size_t k, double soc, const FilterState& x) {
    const double v_prev = trace.samples[k == 0 ? 0 : k - 1].voltage_v;
    out.push_back(assemble_rbf_input(p, v_prev, soc, trace.samples[k].current_a, x));
  });
  return out;
}

SimulationResult simulate(const CellModel& model, const Trace& trace, const CellParams& cell,
                          const SimulationInit& init) {
  SimulationResult out;
  const std::size_t n = trace.size();
  out.voltage.reserve(n);
  out.soc.reserve(n);
  std::size_t k = 0;
  try {
    if (const auto* p = std::get_if<CombinedParams>(&model)) {
      Soc soc{init.soc0, false};
      for (k = 0; k < n; ++k) {
        const double i = trace.samples[k].current_a;
        out.soc.push_back(soc.value);
        out.voltage.push_back(combined_output(init.band.clamp(soc.value), i, *p));
        soc = soc_step(soc, i, cell);
      }
    } else if (std::holds_alternative<FilterStateParams>(model) ||
               std::holds_alternative<ScheduledParams>(model)) {
      const auto* single = std::get_if<FilterStateParams>(&model);
      const auto* schedule = std::get_if<ScheduledParams>(&model);
      FilterState x = initial_state(init);
      out.states.reserve(n);
      for (k = 0; k < n; ++k) {
        const double i = trace.samples[k].current_a;
        const FilterStateParams& w = single ? *single : schedule->select(i);
        out.states.push_back(x);
        out.soc.push_back(x(0));
        out.voltage.push_back(filter_state_output(x, i, w, cell));
        x = filter_state_step(x, i, w, cell);
      }
    } else {
      const auto& p = std::get<RbfParams>(model);
      double previous = init.previous_voltage.value_or(n > 0 ? trace.samples[0].voltage_v : 0.0);
      drive_rbf_signals(p, trace, cell, init.soc0,
                        [&](std::size_t idx, double soc, const FilterState& x) {
                          k = idx;
                          const double i = trace.samples[idx].current_a;
                          const double y = rbf_output(assemble_rbf_input(p, previous, soc, i, x), p);
                          out.soc.push_back(soc);
                          out.voltage.push_back(y);
                          previous = y;
                        });
    }
  } catch (const ModelDomainError& e) {
    throw ModelDomainError(e.what(), k);
  }
  return out;
}

}  // namespace cellmodel
