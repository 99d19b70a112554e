// Closed-loop SOC estimation with an extended Kalman filter over the
// four-state filter model.
#pragma once

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "cellmodel/core.hpp"
#include "cellmodel/models.hpp"

namespace cellmodel {

struct SocEstimate {
  double soc = 0.0;
  double sigma = 0.0;  ///< one standard deviation of SOC
  double innovation_v = 0.0;
  bool skipped = false;  ///< measurement was non-finite; prediction only
};

struct SocEkfConfig {
  /// Process-noise variance per hour of operation, per state.
  Eigen::Vector4d q_proc{1e-8, 1e-6, 1e-6, 1e-6};
  double r_meas = 1e-6 + 4.8828125e-3 * 4.8828125e-3 / 12.0;
  Eigen::Vector4d x0{1.0, 0.0, 0.0, 0.0};
  Eigen::Matrix4d p0 = Eigen::Vector4d(1e-2, 1e-6, 1e-6, 1e-6).asDiagonal();
  double blowup_limit = 1e6;

  void validate() const;
};

/// Estimator models: a single filter-state parameter set or a schedule.
using SocModel = std::variant<FilterStateParams, ScheduledParams>;

struct SocFilterState {
  Eigen::Vector4d x = Eigen::Vector4d::Zero();
  Eigen::Matrix4d p = Eigen::Matrix4d::Zero();
  /// Current applied since the previous posterior; absent before the first step.
  std::optional<double> previous_current_a;
  std::size_t step = 0;

  static SocFilterState initial(const SocEkfConfig& cfg);
};

struct SocStepResult {
  SocFilterState posterior;
  SocEstimate estimate;
};

/// Predicts through the state recursion with the previous current, then
/// corrects with the voltage measured at current `current_a`.
SocStepResult soc_ekf_step(const SocFilterState& prior, double current_a, double v_measured,
                           const SocModel& model, const CellParams& cell,
                           const SocEkfConfig& cfg);

struct SocRunSummary {
  std::size_t samples = 0;
  std::size_t skipped = 0;
  bool has_truth = false;
  double rms_soc_error = 0.0;
  double max_abs_soc_error = 0.0;
  double final_soc_error = 0.0;
  /// Fraction of samples with |soc - truth| <= 3 sigma.
  double coverage_3sigma = 0.0;
};

struct SocRun {
  std::vector<SocEstimate> estimates;
  SocRunSummary summary;
};

SocRun soc_ekf_run(const Trace& trace, const SocModel& model, const CellParams& cell,
                   const SocEkfConfig& cfg,
                   std::optional<std::span<const double>> soc_truth = std::nullopt);

/// Open-loop Coulomb counting over the measured currents, for comparison.
std::vector<double> coulomb_count(const Trace& trace, double soc0, const CellParams& cell);

}  // namespace cellmodel
