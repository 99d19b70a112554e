// Parameter identification for the three model families.
#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cellmodel/core.hpp"
#include "cellmodel/models.hpp"

namespace cellmodel {

// ---------------------------------------------------------------------------
// Batch least squares for the combined model.

inline constexpr std::array<const char*, 7> kRegressorColumns{
    "K0", "R+ (discharge current)", "R- (charge current)", "K1 (1/SOC)", "K2 (SOC)",
    "K3 (ln SOC)", "K4 (ln(1-SOC))"};

struct Regressor {
  Eigen::Matrix<double, Eigen::Dynamic, 7> rows;
  Eigen::VectorXd targets;
  std::size_t excluded = 0;
};

/// Row j is [1, i+, i-, 1/SOC, SOC, ln SOC, ln(1-SOC)] with target v_j.
/// Samples whose SOC is not strictly inside `band` are dropped and counted.
Regressor build_regressor(const Trace& trace, std::span<const double> soc_series,
                          const SocBand& band = {});

/// The regressor row for a single sample.
Eigen::Matrix<double, 1, 7> regressor_row(double soc, double current_a);

/// Coefficients of the regressor columns. The output equation subtracts the
/// resistance, 1/SOC and SOC terms, so those three enter theta negated.
Eigen::Matrix<double, 7, 1> regressor_coefficients(const CombinedParams& p);
CombinedParams params_from_regressor_coefficients(const Eigen::Matrix<double, 7, 1>& theta);

struct LeastSquaresFit {
  CombinedParams params;
  Eigen::Matrix<double, 7, 1> theta = Eigen::Matrix<double, 7, 1>::Zero();
  double residual_rms_v = 0.0;
  /// 2-norm condition number of H after scaling columns to unit norm.
  double condition = 0.0;
  std::size_t rows_used = 0;
  std::size_t rows_excluded = 0;
};

struct LeastSquaresOptions {
  double max_condition = 1e10;
};

/// Minimizes |Y - H theta| by Householder QR on column-scaled H.
/// Throws RankDeficiencyError naming the unidentifiable columns.
LeastSquaresFit fit_least_squares(const Regressor& reg, const LeastSquaresOptions& opt = {});

// ---------------------------------------------------------------------------
// Kalman weight estimation.

/// Gain L = P c / (c' P c + r) and covariance P - L c' P, re-symmetrized.
/// Returns the gain; `p` is updated in place.
Eigen::VectorXd kalman_weight_update(Eigen::Ref<Eigen::MatrixXd> p, const Eigen::VectorXd& c,
                                     double r);

struct EkfState {
  Eigen::VectorXd w_hat;
  Eigen::MatrixXd p_cov;
  double r_meas = 0.5;
  Eigen::Matrix<double, 4, 12> dxdw = Eigen::Matrix<double, 4, 12>::Zero();
  FilterState x_hat = FilterState::Zero();

  /// Diagonal covariance p0 * I around `w`.
  static EkfState make(const Eigen::VectorXd& w, double p0 = 1e-2, double r_meas = 0.5);
  static EkfState make(const Eigen::VectorXd& w, const Eigen::VectorXd& p0_diag,
                       double r_meas = 0.5);
};

/// Throws CovarianceBlowUpError when any diagonal of `p` exceeds `limit`.
void check_covariance(const Eigen::MatrixXd& p, std::size_t step, double limit = 1e6);

/// Partial of the output with respect to the twelve weights at fixed state.
Eigen::Matrix<double, 1, 12> output_weight_partials(const FilterState& x, double imod,
                                                    const FilterStateParams& p);
/// Partial of the output with respect to the state.
Eigen::Matrix<double, 1, 4> output_state_partials(const FilterState& x,
                                                  const FilterStateParams& p);
/// Partial of x_k with respect to the weights at fixed x_{k-1}.
Eigen::Matrix<double, 4, 12> state_weight_partials(const FilterState& x_prev);

struct DerivativeStep {
  FilterState x;                             ///< x_k
  Eigen::Matrix<double, 4, 12> dxdw;         ///< dx_k/dW
  Eigen::Matrix<double, 1, 12> dydw;         ///< dy_k/dW
  double y = 0.0;                            ///< y_k
};

/// Advances x_{k-1} with i_{k-1}, carries the stored dx/dW forward through
/// the transition matrix and forms the total derivative of y_k, which is
/// evaluated at current i_k.
DerivativeStep total_derivative_step(const Eigen::Matrix<double, 4, 12>& dxdw_prev,
                                     const FilterState& x_prev, double current_prev_a,
                                     double current_a, const FilterStateParams& p,
                                     const CellParams& cell);

/// Base case k = 0: dx_0/dW = 0, so dy/dW is the output partial alone.
DerivativeStep total_derivative_initial(const FilterState& x0, double current_a,
                                        const FilterStateParams& p, const CellParams& cell);

struct FilterIdentOptions {
  int passes = 3;
  double blowup_limit = 1e6;
  /// Per-trace known initial SOC; filter states start at zero.
  std::vector<double> soc0;
  /// When set, only samples with update_mask(|i|) true update the weights;
  /// every sample still advances the state and its derivative.
  std::function<bool(double)> update_mask;
};

struct FilterIdentReport {
  int passes = 0;
  std::size_t updates = 0;
  std::vector<double> pass_innovation_rms_v;
  /// Innovations d_k - y_k of the final pass, concatenated over traces.
  std::vector<double> innovations;
  double final_innovation_rms_v = 0.0;
  Eigen::VectorXd final_cov_diagonal;
  bool stable = true;
  bool w9_positive = true;
  std::vector<std::string> warnings;
};

struct FilterIdentResult {
  FilterStateParams params;
  EkfState state;
  FilterIdentReport report;
};

/// Recursive weight estimation over one or more traces. Weights and
/// covariance carry across passes and traces; state and dx/dW restart.
FilterIdentResult ekf_identify(std::span<const Trace> traces, const EkfState& init,
                               const FilterStateParams& structure, const CellParams& cell,
                               const FilterIdentOptions& opt = {});
FilterIdentResult ekf_identify(const Trace& trace, const EkfState& init,
                               const FilterStateParams& structure, const CellParams& cell,
                               const FilterIdentOptions& opt = {});

/// Fixed guesses used by initial_filter_params for weights that the linear
/// seeding fit cannot determine.
struct FilterInitOptions {
  double w2 = 0.999;
  double w4 = 0.98;
  double w5 = 0.005;
  double w9 = 0.3;
  double w11 = -0.1;
  double w12 = -0.1;
};

/// Data-driven starting point for ekf_identify. With w9 fixed the static part
/// of the output is linear in (w6, w7, w8, w10), which is solved by least
/// squares against Coulomb-counted SOC; the dynamic weights start at fixed
/// small values with w1 = w3 = 0.
FilterStateParams initial_filter_params(std::span<const Trace> traces,
                                        std::span<const double> soc0, const CellParams& cell,
                                        const FilterInitOptions& opt = {});

/// Relative covariance seed: p0_j = (rel * max(|w_j|, floor))^2.
Eigen::VectorXd scaled_covariance_diagonal(const WeightVector& w, double rel,
                                           double floor = 1e-3);

struct ScheduleFit {
  ScheduledParams params;
  std::vector<FilterIdentReport> reports;
};

/// One weight estimation per bin of `bins_template`; each bin updates only
/// on samples whose |i| falls inside it. Throws EmptyBinError listing every
/// bin with no samples.
ScheduleFit fit_scheduled(std::span<const Trace> traces, const ScheduledParams& bins_template,
                          const EkfState& init_template, const CellParams& cell,
                          const FilterIdentOptions& opt = {});

// ---------------------------------------------------------------------------
// RBF network training.

struct RbfInitOptions {
  Eigen::Index n_kernels = 10;
  std::vector<RbfInput> layout{RbfInput::PreviousVoltage, RbfInput::Soc, RbfInput::Current};
  std::uint64_t seed = 1;
  int kmeans_iterations = 30;
  /// Initial widths are this multiple of the median inter-center distance.
  double width_scale = 1.5;
  /// Solve the output weights by linear least squares for the initial kernels.
  bool least_squares_weights = true;
};

/// Normalization extrema from the data, k-means++ seeded centers, median
/// distance widths and (optionally) least-squares output weights.
RbfParams init_rbf(std::span<const Trace> traces, std::span<const double> soc0,
                   const CellParams& cell, const RbfInitOptions& opt,
                   const std::optional<FilterStateParams>& state_filter = std::nullopt);

struct RbfTrainOptions {
  int passes = 3;
  double p0_weights = 1.0;
  double p0_centers = 1e-2;
  double p0_widths = 1e-2;
  double r_meas = 1e-5;
  double sigma_min = 1e-3;
  bool weights_only = false;
  bool shuffle = true;
  std::uint64_t seed = 1;
  double blowup_limit = 1e6;
};

struct RbfTrainReport {
  int passes = 0;
  std::size_t updates = 0;
  std::vector<double> pass_innovation_rms_v;
  double final_innovation_rms_v = 0.0;
  Eigen::VectorXd final_cov_diagonal;
};

struct RbfFit {
  RbfParams params;
  RbfTrainReport report;
};

/// Packing of the trainable vector: [w_1..w_N, bias, t_1..t_N, sigma_1..sigma_N].
Eigen::VectorXd pack_rbf(const RbfParams& p);
void unpack_rbf(const Eigen::VectorXd& theta, RbfParams& p);
/// Analytic d y / d theta for a normalized input, in pack_rbf order.
Eigen::VectorXd rbf_parameter_gradient(const Eigen::VectorXd& z, const RbfParams& p);

/// Kalman training of every network parameter (or only the output weights)
/// with the previous-voltage input taken from the measured trace.
RbfFit ekf_identify_rbf(std::span<const Trace> traces, std::span<const double> soc0,
                        const RbfParams& init, const CellParams& cell,
                        const RbfTrainOptions& opt = {});

}  // namespace cellmodel
