// Cell model families: single-state output equations, the combined model,
// the four-state filter model and the Gaussian RBF network.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cellmodel/core.hpp"
#include "cellmodel/errors.hpp"

namespace cellmodel {

// ---------------------------------------------------------------------------
// Single-state output equations. All share the Coulomb-counting state.

double shepherd_output(double soc, double current_a, double r, double k1);
double unnewehr_output(double soc, double current_a, double r, double ki);
double nernst_output(double soc, double current_a, double r, double k1);
double modified_nernst_output(double soc, double current_a, double r, double k2, double k3);

/// Coefficients of the combined output equation, in regressor column order.
struct CombinedParams {
  double k0 = 4.2;
  double r_discharge = 0.0;
  double r_charge = 0.0;
  double k1 = 0.0;
  double k2 = 0.0;
  double k3 = 0.0;
  double k4 = 0.0;

  Eigen::Matrix<double, 7, 1> as_vector() const;
  static CombinedParams from_vector(const Eigen::Matrix<double, 7, 1>& theta);
  void validate() const;
};

/// SOC band inside which the combined model is evaluated during simulation.
struct SocBand {
  double lo = 1e-4;
  double hi = 1.0 - 1e-4;
  double clamp(double soc) const { return soc < lo ? lo : (soc > hi ? hi : soc); }
};

double combined_output(double soc, double current_a, const CombinedParams& p);

// ---------------------------------------------------------------------------
// Filter-state model. Weight w_k is stored at index k-1.

template <typename Scalar>
using FilterStateT = Eigen::Matrix<Scalar, 4, 1>;
using FilterState = FilterStateT<double>;

template <typename Scalar>
using WeightVectorT = Eigen::Matrix<Scalar, 12, 1>;
using WeightVector = WeightVectorT<double>;

template <typename Scalar>
struct FilterStateParamsT {
  WeightVectorT<Scalar> w = WeightVectorT<Scalar>::Zero();
  /// Coefficient of x2 in the output row; fixed, not identified.
  Scalar fixed_output_gain = Scalar(10);

  Scalar operator()(int index_one_based) const { return w(index_one_based - 1); }
  Scalar& operator()(int index_one_based) { return w(index_one_based - 1); }

  template <typename Other>
  FilterStateParamsT<Other> cast() const {
    FilterStateParamsT<Other> out;
    out.w = w.template cast<Other>();
    out.fixed_output_gain = Other(fixed_output_gain);
    return out;
  }
};
using FilterStateParams = FilterStateParamsT<double>;

/// Spectral radius of the filter block: max(|w2|, sqrt(w4^2 + w5^2)).
double filter_pole_radius(const FilterStateParams& p);
bool filter_is_stable(const FilterStateParams& p);
/// Stability plus w9 > 0 (no pole of the reciprocal term for SOC in [0, 1]).
void validate(const FilterStateParams& p);

template <typename Scalar>
Eigen::Matrix<Scalar, 4, 4> transition_matrix(const FilterStateParamsT<Scalar>& p) {
  Eigen::Matrix<Scalar, 4, 4> a = Eigen::Matrix<Scalar, 4, 4>::Zero();
  a(0, 0) = Scalar(1);
  a(1, 0) = p(1);
  a(1, 1) = p(2);
  a(2, 2) = p(4);
  a(2, 3) = p(5);
  a(3, 2) = -p(5);
  a(3, 3) = p(4);
  return a;
}

/// State recursion driven by the rate-corrected throughput `imod`.
/// SOC (x1) is clamped into [0, 1].
template <typename Scalar>
FilterStateT<Scalar> filter_state_step_imod(const FilterStateT<Scalar>& x, Scalar imod,
                                            const FilterStateParamsT<Scalar>& p) {
  FilterStateT<Scalar> next = transition_matrix(p) * x;
  next(0) -= imod;
  next(1) += p(3);
  next(3) += imod;
  if (next(0) < Scalar(0)) next(0) = Scalar(0);
  if (next(0) > Scalar(1)) next(0) = Scalar(1);
  return next;
}

template <typename Scalar>
FilterStateT<Scalar> filter_state_step(const FilterStateT<Scalar>& x, double current_a,
                                       const FilterStateParamsT<Scalar>& p,
                                       const CellParams& cell) {
  return filter_state_step_imod(x, Scalar(peukert_current(current_a, cell)), p);
}

template <typename Scalar>
Scalar filter_state_output_imod(const FilterStateT<Scalar>& x, Scalar imod,
                                const FilterStateParamsT<Scalar>& p) {
  using std::abs;
  const Scalar denom = x(0) + p(9);
  if (denom == Scalar(0)) throw ModelDomainError("filter_state_output: x1 + w9 = 0");
  return p(6) + p(7) * imod + p(8) / denom + p(10) * x(0) + p.fixed_output_gain * x(1) +
         p(11) * x(2) + p(12) * x(3);
}

template <typename Scalar>
Scalar filter_state_output(const FilterStateT<Scalar>& x, double current_a,
                           const FilterStateParamsT<Scalar>& p, const CellParams& cell) {
  return filter_state_output_imod(x, Scalar(peukert_current(current_a, cell)), p);
}

/// Current-level schedule of filter-state parameter sets, selected by |i|.
struct ScheduleBin {
  double upper_a;  ///< exclusive upper bound on |i|; the last bin is +infinity
  FilterStateParams params;
};

struct ScheduledParams {
  std::vector<ScheduleBin> bins;

  std::size_t bin_index(double current_a) const;
  const FilterStateParams& select(double current_a) const {
    return bins[bin_index(current_a)].params;
  }
  void validate() const;
};

/// Default bin edges at 1.5C and 3C, all bins initialised to `params`.
ScheduledParams default_schedule(const FilterStateParams& params, const CellParams& cell);

// ---------------------------------------------------------------------------
// Gaussian RBF network.

/// Signals that may form the network input vector.
enum class RbfInput { PreviousVoltage, Soc, Current, FilterX2, FilterX3, FilterX4 };

std::string to_string(RbfInput input);
RbfInput rbf_input_from_string(const std::string& name);

struct RbfParams {
  Eigen::MatrixXd centers;  ///< N x D, in normalized input coordinates
  Eigen::VectorXd widths;   ///< N
  Eigen::VectorXd weights;  ///< N + 1; the last entry is the output bias
  std::vector<RbfInput> input_layout{RbfInput::PreviousVoltage, RbfInput::Soc,
                                     RbfInput::Current};
  /// Per-component extrema mapped onto [-1, 1]. Empty means identity.
  Eigen::VectorXd input_min;
  Eigen::VectorXd input_max;
  /// Filter supplying x2..x4 inputs; required when the layout names them.
  std::optional<FilterStateParams> state_filter;

  Eigen::Index n_kernels() const { return centers.rows(); }
  Eigen::Index input_dim() const { return static_cast<Eigen::Index>(input_layout.size()); }
  bool uses_filter_states() const;
  bool uses_previous_voltage() const;
  void validate() const;

  Eigen::VectorXd normalize(const Eigen::VectorXd& u) const;
};

/// Output for an input already in normalized coordinates.
double rbf_output_normalized(const Eigen::VectorXd& z, const RbfParams& p);
/// Output for a raw input vector laid out per `input_layout`.
double rbf_output(const Eigen::VectorXd& u, const RbfParams& p);

/// Kernel activations exp(-|z - t_j|^2 / sigma_j^2) for a normalized input.
Eigen::VectorXd rbf_activations(const Eigen::VectorXd& z, const RbfParams& p);

// ---------------------------------------------------------------------------
// Simulation over a current trace.

using CellModel = std::variant<CombinedParams, FilterStateParams, RbfParams, ScheduledParams>;

std::string family_name(const CellModel& model);

struct SimulationInit {
  double soc0 = 1.0;
  /// Filter states x2..x4; x1 is always soc0.
  Eigen::Vector3d filter_states = Eigen::Vector3d::Zero();
  /// Seed for the fed-back voltage of an RBF model. Defaults to the first
  /// measured voltage of the trace.
  std::optional<double> previous_voltage;
  SocBand band{};
};

struct SimulationResult {
  std::vector<double> voltage;
  std::vector<double> soc;
  /// Filter-model state per sample (empty for state-free families).
  std::vector<FilterState> states;
};

/// Runs the model over the currents of `trace`. An RBF model feeds its own
/// previous prediction back as the previous-voltage input. Domain errors are
/// rethrown with the offending sample index.
SimulationResult simulate(const CellModel& model, const Trace& trace, const CellParams& cell,
                          const SimulationInit& init = {});

/// Raw (unnormalized) RBF inputs for every sample of `trace`. When
/// `teacher_forced` the previous-voltage input comes from the measured trace.
std::vector<Eigen::VectorXd> rbf_input_series(const RbfParams& p, const Trace& trace,
                                              const CellParams& cell, double soc0,
                                              bool teacher_forced);

}  // namespace cellmodel
