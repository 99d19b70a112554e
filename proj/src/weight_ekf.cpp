#include <cmath>
#include <limits>
#include <sstream>

#include "cellmodel/errors.hpp"
#include "cellmodel/ident.hpp"

namespace cellmodel {

Eigen::VectorXd kalman_weight_update(Eigen::Ref<Eigen::MatrixXd> p, const Eigen::VectorXd& c,
                                     double r) {
  const Eigen::VectorXd pc = p * c;
  const double innovation_variance = c.dot(pc) + r;
  // Written as P - (Pc)(Pc)'/s, which equals P - L c' P for symmetric P and
  // keeps P exactly symmetric.
  p.noalias() -= (pc * pc.transpose()) / innovation_variance;
  p = 0.5 * (p + p.transpose()).eval();
  return pc / innovation_variance;
}

EkfState EkfState::make(const Eigen::VectorXd& w, double p0, double r_meas) {
  return make(w, Eigen::VectorXd::Constant(w.size(), p0), r_meas);
}

EkfState EkfState::make(const Eigen::VectorXd& w, const Eigen::VectorXd& p0_diag, double r_meas) {
  if (p0_diag.size() != w.size())
    throw std::invalid_argument("EkfState: covariance diagonal sized differently from weights");
  if (!(r_meas > 0.0 && r_meas <= 1.0))
    throw std::invalid_argument("EkfState: measurement noise must lie in (0, 1]");
  EkfState s;
  s.w_hat = w;
  s.p_cov = p0_diag.asDiagonal();
  s.r_meas = r_meas;
  return s;
}

void check_covariance(const Eigen::MatrixXd& p, std::size_t step, double limit) {
  const Eigen::VectorXd diag = p.diagonal();
  Eigen::Index worst = 0;
  const double max_diag = diag.maxCoeff(&worst);
  if (!diag.allFinite() || max_diag > limit) {
    std::ostringstream msg;
    if (!diag.allFinite()) {
      msg << "covariance blow-up at step " << step << ": non-finite diagonal entry";
      throw CovarianceBlowUpError(msg.str(), step, std::numeric_limits<double>::infinity());
    }
    msg << "covariance blow-up at step " << step << ": P(" << worst << "," << worst
        << ") = " << max_diag << " exceeds " << limit;
    throw CovarianceBlowUpError(msg.str(), step, max_diag);
  }
}

Eigen::VectorXd scaled_covariance_diagonal(const WeightVector& w, double rel, double floor) {
  Eigen::VectorXd d(12);
  for (int j = 0; j < 12; ++j) {
    const double s = rel * std::max(std::abs(w(j)), floor);
    d(j) = s * s;
  }
  return d;
}

Eigen::Matrix<double, 1, 12> output_weight_partials(const FilterState& x, double imod,
                                                    const FilterStateParams& p) {
  const double denom = x(0) + p(9);
  if (denom == 0.0) throw ModelDomainError("output_weight_partials: x1 + w9 = 0");
  Eigen::Matrix<double, 1, 12> g;
  g << 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, imod, 1.0 / denom, -p(8) / (denom * denom), x(0), x(2),
      x(3);
  return g;
}

Eigen::Matrix<double, 1, 4> output_state_partials(const FilterState& x,
                                                  const FilterStateParams& p) {
  const double denom = x(0) + p(9);
  if (denom == 0.0) throw ModelDomainError("output_state_partials: x1 + w9 = 0");
  Eigen::Matrix<double, 1, 4> g;
  g << p(10) - p(8) / (denom * denom), p.fixed_output_gain, p(11), p(12);
  return g;
}

Eigen::Matrix<double, 4, 12> state_weight_partials(const FilterState& x_prev) {
  Eigen::Matrix<double, 4, 12> d = Eigen::Matrix<double, 4, 12>::Zero();
  d(1, 0) = x_prev(0);
  d(1, 1) = x_prev(1);
  d(1, 2) = 1.0;
  d(2, 3) = x_prev(2);
  d(2, 4) = x_prev(3);
  d(3, 3) = x_prev(3);
  d(3, 4) = -x_prev(2);
  return d;
}

DerivativeStep total_derivative_initial(const FilterState& x0, double current_a,
                                        const FilterStateParams& p, const CellParams& cell) {
  const double imod = peukert_current(current_a, cell);
  DerivativeStep out;
  out.x = x0;
  out.dxdw.setZero();
  out.dydw = output_weight_partials(x0, imod, p);
  out.y = filter_state_output_imod(x0, imod, p);
  return out;
}

DerivativeStep total_derivative_step(const Eigen::Matrix<double, 4, 12>& dxdw_prev,
                                     const FilterState& x_prev, double current_prev_a,
                                     double current_a, const FilterStateParams& p,
                                     const CellParams& cell) {
  DerivativeStep out;
  out.x = filter_state_step(x_prev, current_prev_a, p, cell);
  out.dxdw = state_weight_partials(x_prev) + transition_matrix(p) * dxdw_prev;
  const double imod = peukert_current(current_a, cell);
  out.dydw = output_weight_partials(out.x, imod, p) + output_state_partials(out.x, p) * out.dxdw;
  out.y = filter_state_output_imod(out.x, imod, p);
  return out;
}

namespace {

double rms(double sum_sq, std::size_t n) { return n ? std::sqrt(sum_sq / double(n)) : 0.0; }

double trace_soc0(const FilterIdentOptions& opt, std::size_t t) {
  if (opt.soc0.empty()) return 1.0;
  if (opt.soc0.size() == 1) return opt.soc0.front();
  return opt.soc0.at(t);
}

}  // namespace

FilterStateParams initial_filter_params(std::span<const Trace> traces,
                                        std::span<const double> soc0, const CellParams& cell,
                                        const FilterInitOptions& opt) {
  if (!soc0.empty() && soc0.size() != 1 && soc0.size() != traces.size())
    throw std::invalid_argument("initial_filter_params: one initial SOC per trace required");
  std::size_t rows = 0;
  for (const Trace& t : traces) rows += t.size();
  if (rows < 4) throw EmptyRegressorError("initial_filter_params: fewer than four samples");

  Eigen::MatrixXd h(static_cast<Eigen::Index>(rows), 4);
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows));
  Eigen::Index r = 0;
  for (std::size_t t = 0; t < traces.size(); ++t) {
    const double s0 = soc0.empty() ? 1.0 : soc0[soc0.size() == 1 ? 0 : t];
    const std::vector<double> soc = soc_values(soc_trajectory(traces[t], Soc{s0, false}, cell));
    for (std::size_t k = 0; k < traces[t].size(); ++k, ++r) {
      h.row(r) << 1.0, peukert_current(traces[t].samples[k].current_a, cell),
          1.0 / (soc[k] + opt.w9), soc[k];
      y(r) = traces[t].samples[k].voltage_v;
    }
  }
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(h);
  if (qr.rank() < 4) {
    throw RankDeficiencyError("initial_filter_params: trace does not excite current and SOC",
                              {"bias", "current", "reciprocal", "soc"});
  }
  const Eigen::Vector4d theta = qr.solve(y);
  FilterStateParams p;
  p.w << 0.0, opt.w2, 0.0, opt.w4, opt.w5, theta(0), theta(1), theta(2), opt.w9, theta(3),
      opt.w11, opt.w12;
  return p;
}

FilterIdentResult ekf_identify(std::span<const Trace> traces, const EkfState& init,
                               const FilterStateParams& structure, const CellParams& cell,
                               const FilterIdentOptions& opt) {
  if (init.w_hat.size() != 12 || init.p_cov.rows() != 12 || init.p_cov.cols() != 12)
    throw std::invalid_argument("ekf_identify: expected a 12-weight state");
  if (!opt.soc0.empty() && opt.soc0.size() != 1 && opt.soc0.size() != traces.size())
    throw std::invalid_argument("ekf_identify: one initial SOC per trace required");

  FilterIdentResult result;
  result.state = init;
  EkfState& s = result.state;
  FilterStateParams params = structure;
  params.w = s.w_hat;
  FilterIdentReport& report = result.report;

  std::size_t step = 0;
  for (int pass = 0; pass < opt.passes; ++pass) {
    const bool last_pass = pass + 1 == opt.passes;
    double sum_sq = 0.0;
    std::size_t count = 0;
    if (last_pass) report.innovations.clear();
    for (std::size_t t = 0; t < traces.size(); ++t) {
      const Trace& trace = traces[t];
      FilterState x0 = FilterState::Zero();
      x0(0) = trace_soc0(opt, t);
      for (std::size_t k = 0; k < trace.size(); ++k, ++step) {
        const Sample& sample = trace.samples[k];
        DerivativeStep d;
        try {
          d = k == 0 ? total_derivative_initial(x0, sample.current_a, params, cell)
                     : total_derivative_step(s.dxdw, s.x_hat, trace.samples[k - 1].current_a,
                                             sample.current_a, params, cell);
        } catch (const ModelDomainError& e) {
          throw ModelDomainError(e.what(), k);
        }
        s.x_hat = d.x;
        s.dxdw = d.dxdw;
        if (opt.update_mask && !opt.update_mask(std::abs(sample.current_a))) continue;

        const double innovation = sample.voltage_v - d.y;
        const Eigen::VectorXd gain = kalman_weight_update(s.p_cov, d.dydw.transpose(), s.r_meas);
        s.w_hat += gain * innovation;
        check_covariance(s.p_cov, step, opt.blowup_limit);
        if (!s.w_hat.allFinite()) {
          std::ostringstream msg;
          msg << "ekf_identify: weight estimate became non-finite at step " << step;
          throw CovarianceBlowUpError(msg.str(), step, std::numeric_limits<double>::infinity());
        }
        params.w = s.w_hat;
        ++report.updates;
        sum_sq += innovation * innovation;
        ++count;
        if (last_pass) report.innovations.push_back(innovation);
      }
    }
    report.pass_innovation_rms_v.push_back(rms(sum_sq, count));
    ++report.passes;
  }

  result.params = params;
  report.final_innovation_rms_v =
      report.pass_innovation_rms_v.empty() ? 0.0 : report.pass_innovation_rms_v.back();
  report.final_cov_diagonal = s.p_cov.diagonal();
  report.stable = filter_is_stable(params);
  report.w9_positive = params(9) > 0.0;
  if (!report.stable) {
    std::ostringstream msg;
    msg << "fitted filter poles are not strictly stable (radius " << filter_pole_radius(params)
        << ")";
    report.warnings.push_back(msg.str());
  }
  if (!report.w9_positive) report.warnings.emplace_back("fitted w9 is not positive");
  return result;
}

FilterIdentResult ekf_identify(const Trace& trace, const EkfState& init,
                               const FilterStateParams& structure, const CellParams& cell,
                               const FilterIdentOptions& opt) {
  return ekf_identify(std::span<const Trace>(&trace, 1), init, structure, cell, opt);
}

ScheduleFit fit_scheduled(std::span<const Trace> traces, const ScheduledParams& bins_template,
                          const EkfState& init_template, const CellParams& cell,
                          const FilterIdentOptions& opt) {
  if (bins_template.bins.empty()) throw std::invalid_argument("fit_scheduled: no bins");
  const auto lower_bound = [&](std::size_t b) {
    return b == 0 ? 0.0 : bins_template.bins[b - 1].upper_a;
  };

  std::vector<std::size_t> empty_bins;
  for (std::size_t b = 0; b < bins_template.bins.size(); ++b) {
    bool any = false;
    for (const Trace& trace : traces)
      for (const Sample& s : trace.samples) {
        const double m = std::abs(s.current_a);
        any = any || (m >= lower_bound(b) && m < bins_template.bins[b].upper_a);
      }
    if (!any) empty_bins.push_back(b);
  }
  if (!empty_bins.empty()) {
    std::ostringstream msg;
    msg << "fit_scheduled: no samples for bin(s)";
    for (std::size_t b : empty_bins)
      msg << " " << b << " [" << lower_bound(b) << ", " << bins_template.bins[b].upper_a << ") A";
    throw EmptyBinError(msg.str(), empty_bins);
  }

  ScheduleFit fit;
  fit.params = bins_template;
  for (std::size_t b = 0; b < bins_template.bins.size(); ++b) {
    const double lo = lower_bound(b);
    const double hi = bins_template.bins[b].upper_a;
    FilterIdentOptions bin_opt = opt;
    bin_opt.update_mask = [lo, hi](double magnitude) { return magnitude >= lo && magnitude < hi; };
    EkfState init = init_template;
    init.w_hat = bins_template.bins[b].params.w;
    auto result = ekf_identify(traces, init, bins_template.bins[b].params, cell, bin_opt);
    fit.params.bins[b].params = result.params;
    fit.reports.push_back(std::move(result.report));
  }
  return fit;
}

}  // namespace cellmodel
