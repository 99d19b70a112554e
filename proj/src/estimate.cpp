#include "cellmodel/estimate.hpp"

#include <cmath>
#include <sstream>

#include "cellmodel/errors.hpp"
#include "cellmodel/ident.hpp"

namespace cellmodel {

void SocEkfConfig::validate() const {
  if ((q_proc.array() < 0.0).any()) throw std::invalid_argument("SocEkfConfig: q_proc must be >= 0");
  if (!(r_meas > 0.0)) throw std::invalid_argument("SocEkfConfig: r_meas must be > 0");
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(0.5 * (p0 + p0.transpose()));
  if (eig.eigenvalues().minCoeff() < -1e-12)
    throw std::invalid_argument("SocEkfConfig: p0 must be positive semidefinite");
}

SocFilterState SocFilterState::initial(const SocEkfConfig& cfg) {
  SocFilterState s;
  s.x = cfg.x0;
  s.p = cfg.p0;
  return s;
}

namespace {

const FilterStateParams& pick(const SocModel& model, double current_a) {
  if (const auto* single = std::get_if<FilterStateParams>(&model)) return *single;
  return std::get<ScheduledParams>(model).select(current_a);
}

}  // namespace

SocStepResult soc_ekf_step(const SocFilterState& prior, double current_a, double v_measured,
                           const SocModel& model, const CellParams& cell,
                           const SocEkfConfig& cfg) {
  SocStepResult out;
  SocFilterState& s = out.posterior;
  s = prior;

  if (prior.previous_current_a) {
    const double i_prev = *prior.previous_current_a;
    const FilterStateParams& w = pick(model, i_prev);
    const Eigen::Matrix4d a = transition_matrix(w);
    s.x = filter_state_step(prior.x, i_prev, w, cell);
    s.p = a * prior.p * a.transpose();
    s.p.diagonal() += cfg.q_proc * cell.sample_period_h;
  }

  const FilterStateParams& w = pick(model, current_a);
  const double predicted = filter_state_output(FilterState(s.x), current_a, w, cell);
  SocEstimate& est = out.estimate;
  if (std::isfinite(v_measured)) {
    const Eigen::RowVector4d h = output_state_partials(s.x, w);
    const Eigen::Vector4d ph = s.p * h.transpose();
    const double innovation_var = h.dot(ph) + cfg.r_meas;
    const Eigen::Vector4d gain = ph / innovation_var;
    const double innovation = v_measured - predicted;
    s.x += gain * innovation;
    s.x(0) = std::clamp(s.x(0), 0.0, 1.0);
    // Joseph form keeps the covariance symmetric positive semidefinite.
    const Eigen::Matrix4d ikh = Eigen::Matrix4d::Identity() - gain * h;
    s.p = ikh * s.p * ikh.transpose() + (gain * gain.transpose()) * cfg.r_meas;
    est.innovation_v = innovation;
  } else {
    est.skipped = true;
    est.innovation_v = 0.0;
  }
  s.p = 0.5 * (s.p + s.p.transpose()).eval();
  check_covariance(s.p, prior.step, cfg.blowup_limit);

  s.previous_current_a = current_a;
  s.step = prior.step + 1;
  est.soc = s.x(0);
  est.sigma = std::sqrt(std::max(s.p(0, 0), 0.0));
  return out;
}

SocRun soc_ekf_run(const Trace& trace, const SocModel& model, const CellParams& cell,
                   const SocEkfConfig& cfg, std::optional<std::span<const double>> soc_truth) {
  cfg.validate();
  if (soc_truth && soc_truth->size() != trace.size())
    throw std::invalid_argument("soc_ekf_run: truth series not aligned with trace");
  SocRun run;
  run.estimates.reserve(trace.size());
  SocFilterState state = SocFilterState::initial(cfg);
  double sum_sq = 0.0;
  std::size_t covered = 0;
  for (std::size_t k = 0; k < trace.size(); ++k) {
    const Sample& sample = trace.samples[k];
    SocStepResult r;
    try {
      r = soc_ekf_step(state, sample.current_a, sample.voltage_v, model, cell, cfg);
    } catch (const ModelDomainError& e) {
      throw ModelDomainError(e.what(), k);
    }
    state = r.posterior;
    if (r.estimate.skipped) ++run.summary.skipped;
    if (soc_truth) {
      const double err = r.estimate.soc - (*soc_truth)[k];
      sum_sq += err * err;
      run.summary.max_abs_soc_error = std::max(run.summary.max_abs_soc_error, std::abs(err));
      run.summary.final_soc_error = err;
      if (std::abs(err) <= 3.0 * r.estimate.sigma) ++covered;
    }
    run.estimates.push_back(r.estimate);
  }
  run.summary.samples = trace.size();
  run.summary.has_truth = soc_truth.has_value();
  if (soc_truth && !trace.empty()) {
    run.summary.rms_soc_error = std::sqrt(sum_sq / double(trace.size()));
    run.summary.coverage_3sigma = double(covered) / double(trace.size());
  }
  return run;
}

std::vector<double> coulomb_count(const Trace& trace, double soc0, const CellParams& cell) {
  return soc_values(soc_trajectory(trace, Soc{soc0, false}, cell));
}

}  // namespace cellmodel
