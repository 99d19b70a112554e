#include <cmath>
#include <limits>
#include <sstream>

#include "cellmodel/errors.hpp"
#include "cellmodel/ident.hpp"

namespace cellmodel {

Eigen::Matrix<double, 1, 7> regressor_row(double soc, double current_a) {
  Eigen::Matrix<double, 1, 7> h;
  h << 1.0, current_a > 0.0 ? current_a : 0.0, current_a < 0.0 ? current_a : 0.0, 1.0 / soc, soc,
      std::log(soc), std::log(1.0 - soc);
  return h;
}

Eigen::Matrix<double, 7, 1> regressor_coefficients(const CombinedParams& p) {
  Eigen::Matrix<double, 7, 1> theta;
  theta << p.k0, -p.r_discharge, -p.r_charge, -p.k1, -p.k2, p.k3, p.k4;
  return theta;
}

CombinedParams params_from_regressor_coefficients(const Eigen::Matrix<double, 7, 1>& theta) {
  return CombinedParams{theta(0), -theta(1), -theta(2), -theta(3), -theta(4), theta(5), theta(6)};
}

Regressor build_regressor(const Trace& trace, std::span<const double> soc_series,
                          const SocBand& band) {
  if (soc_series.size() != trace.size())
    throw std::invalid_argument("build_regressor: SOC series not aligned with trace");
  std::vector<std::size_t> keep;
  keep.reserve(trace.size());
  for (std::size_t k = 0; k < trace.size(); ++k)
    if (soc_series[k] > band.lo && soc_series[k] < band.hi) keep.push_back(k);

  Regressor reg;
  reg.excluded = trace.size() - keep.size();
  if (keep.empty())
    throw EmptyRegressorError("build_regressor: every sample lies outside the SOC band");
  reg.rows.resize(static_cast<Eigen::Index>(keep.size()), 7);
  reg.targets.resize(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) {
    const Sample& s = trace.samples[keep[j]];
    const auto row = static_cast<Eigen::Index>(j);
    reg.rows.row(row) = regressor_row(soc_series[keep[j]], s.current_a);
    reg.targets(row) = s.voltage_v;
  }
  return reg;
}

LeastSquaresFit fit_least_squares(const Regressor& reg, const LeastSquaresOptions& opt) {
  const auto& h = reg.rows;
  if (h.rows() == 0) throw EmptyRegressorError("fit_least_squares: empty regressor");
  if (reg.targets.size() != h.rows())
    throw std::invalid_argument("fit_least_squares: target count differs from row count");

  // Columns are scaled to unit norm so the condition estimate reflects
  // collinearity rather than units.
  Eigen::Matrix<double, 7, 1> scale = h.colwise().norm().transpose();
  std::vector<std::string> deficient;
  for (int j = 0; j < 7; ++j)
    if (!(scale(j) > 0.0)) deficient.emplace_back(kRegressorColumns[j]);
  if (!deficient.empty()) {
    std::ostringstream msg;
    msg << "fit_least_squares: unexcited regressor column(s):";
    for (const auto& c : deficient) msg << " " << c;
    throw RankDeficiencyError(msg.str(), deficient);
  }

  const Eigen::MatrixXd scaled = h * scale.cwiseInverse().asDiagonal();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(scaled, Eigen::ComputeFullV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double condition = (sv.size() == 7 && sv(6) > 0.0)
                               ? sv(0) / sv(6)
                               : std::numeric_limits<double>::infinity();
  if (h.rows() < 7 || !(condition <= opt.max_condition)) {
    const Eigen::Matrix<double, 7, 1> null_dir = svd.matrixV().col(6);
    for (int j = 0; j < 7; ++j)
      if (std::abs(null_dir(j)) > 0.1) deficient.emplace_back(kRegressorColumns[j]);
    std::ostringstream msg;
    msg << "fit_least_squares: regressor is rank deficient (condition " << condition
        << ") in column(s):";
    for (const auto& c : deficient) msg << " " << c;
    throw RankDeficiencyError(msg.str(), deficient);
  }

  Eigen::HouseholderQR<Eigen::MatrixXd> qr(scaled);
  const Eigen::Matrix<double, 7, 1> theta =
      (qr.solve(reg.targets).array() / scale.array()).matrix();
  LeastSquaresFit fit;
  fit.theta = theta;
  fit.params = params_from_regressor_coefficients(theta);
  fit.residual_rms_v = std::sqrt((reg.targets - h * theta).squaredNorm() / double(h.rows()));
  fit.condition = condition;
  fit.rows_used = static_cast<std::size_t>(h.rows());
  fit.rows_excluded = reg.excluded;
  return fit;
}

}  // namespace cellmodel
