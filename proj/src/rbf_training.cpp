#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "cellmodel/errors.hpp"
#include "cellmodel/ident.hpp"

namespace cellmodel {

namespace {

double trace_soc0(std::span<const double> soc0, std::size_t t) {
  if (soc0.empty()) return 1.0;
  if (soc0.size() == 1) return soc0.front();
  return soc0[t];
}

/// Raw inputs and targets for every sample of every trace, previous voltage
/// taken from the measurements.
void collect_samples(std::span<const Trace> traces, std::span<const double> soc0,
                     const CellParams& cell, const RbfParams& shape,
                     std::vector<Eigen::VectorXd>& inputs, std::vector<double>& targets) {
  if (!soc0.empty() && soc0.size() != 1 && soc0.size() != traces.size())
    throw std::invalid_argument("RBF training: one initial SOC per trace required");
  for (std::size_t t = 0; t < traces.size(); ++t) {
    auto u = rbf_input_series(shape, traces[t], cell, trace_soc0(soc0, t), true);
    for (std::size_t k = 0; k < u.size(); ++k) {
      inputs.push_back(std::move(u[k]));
      targets.push_back(traces[t].samples[k].voltage_v);
    }
  }
}

Eigen::MatrixXd kmeans_centers(const Eigen::MatrixXd& data, Eigen::Index n, std::uint64_t seed,
                               int iterations) {
  const Eigen::Index m = data.rows();
  std::mt19937_64 rng(seed);
  Eigen::MatrixXd centers(n, data.cols());

  // k-means++ seeding.
  std::uniform_int_distribution<Eigen::Index> pick(0, m - 1);
  centers.row(0) = data.row(pick(rng));
  Eigen::VectorXd d2 = (data.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (Eigen::Index c = 1; c < n; ++c) {
    const double total = d2.sum();
    Eigen::Index chosen = pick(rng);
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      chosen = m - 1;
      for (Eigen::Index r = 0; r < m; ++r) {
        target -= d2(r);
        if (target <= 0.0) {
          chosen = r;
          break;
        }
      }
    }
    centers.row(c) = data.row(chosen);
    d2 = d2.cwiseMin((data.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }

  // Lloyd iterations; an emptied cluster keeps its previous center.
  std::vector<Eigen::Index> label(static_cast<std::size_t>(m), 0);
  for (int it = 0; it < iterations; ++it) {
    bool changed = false;
    for (Eigen::Index r = 0; r < m; ++r) {
      Eigen::Index best = 0;
      (centers.rowwise() - data.row(r)).rowwise().squaredNorm().minCoeff(&best);
      if (label[static_cast<std::size_t>(r)] != best) changed = true;
      label[static_cast<std::size_t>(r)] = best;
    }
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(n, data.cols());
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(n);
    for (Eigen::Index r = 0; r < m; ++r) {
      sums.row(label[static_cast<std::size_t>(r)]) += data.row(r);
      counts(label[static_cast<std::size_t>(r)]) += 1.0;
    }
    for (Eigen::Index c = 0; c < n; ++c)
      if (counts(c) > 0.0) centers.row(c) = sums.row(c) / counts(c);
    if (!changed && it > 0) break;
  }
  return centers;
}

double median_center_distance(const Eigen::MatrixXd& centers) {
  std::vector<double> d;
  for (Eigen::Index a = 0; a < centers.rows(); ++a)
    for (Eigen::Index b = a + 1; b < centers.rows(); ++b)
      d.push_back((centers.row(a) - centers.row(b)).norm());
  if (d.empty()) return 0.0;
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid;
}

}  // namespace

RbfParams init_rbf(std::span<const Trace> traces, std::span<const double> soc0,
                   const CellParams& cell, const RbfInitOptions& opt,
                   const std::optional<FilterStateParams>& state_filter) {
  if (opt.n_kernels < 1) throw std::invalid_argument("init_rbf: need at least one kernel");
  RbfParams p;
  p.input_layout = opt.layout;
  p.state_filter = state_filter;
  if (p.uses_filter_states() && !p.state_filter)
    throw std::invalid_argument("init_rbf: filter-state inputs need a state filter");

  std::vector<Eigen::VectorXd> inputs;
  std::vector<double> targets;
  collect_samples(traces, soc0, cell, p, inputs, targets);
  const auto m = static_cast<Eigen::Index>(inputs.size());
  if (m < opt.n_kernels) throw std::invalid_argument("init_rbf: fewer samples than kernels");

  const Eigen::Index dim = p.input_dim();
  Eigen::MatrixXd raw(m, dim);
  for (Eigen::Index r = 0; r < m; ++r) raw.row(r) = inputs[static_cast<std::size_t>(r)].transpose();
  p.input_min = raw.colwise().minCoeff().transpose();
  p.input_max = raw.colwise().maxCoeff().transpose();

  Eigen::MatrixXd z(m, dim);
  for (Eigen::Index r = 0; r < m; ++r) z.row(r) = p.normalize(raw.row(r).transpose()).transpose();

  p.centers = kmeans_centers(z, opt.n_kernels, opt.seed, opt.kmeans_iterations);
  double width = median_center_distance(p.centers);
  if (!(width > 0.0)) {
    // One kernel (or coincident centers): use the RMS spread of the data.
    width = std::sqrt((z.rowwise() - p.centers.row(0)).rowwise().squaredNorm().mean());
    if (!(width > 0.0)) width = 1.0;
  }
  p.widths = Eigen::VectorXd::Constant(opt.n_kernels, opt.width_scale * width);
  p.weights = Eigen::VectorXd::Zero(opt.n_kernels + 1);

  const Eigen::Map<const Eigen::VectorXd> y(targets.data(), m);
  if (opt.least_squares_weights) {
    Eigen::MatrixXd phi(m, opt.n_kernels + 1);
    for (Eigen::Index r = 0; r < m; ++r) {
      phi.row(r).head(opt.n_kernels) = rbf_activations(z.row(r).transpose(), p).transpose();
      phi(r, opt.n_kernels) = 1.0;
    }
    p.weights = phi.colPivHouseholderQr().solve(y);
  } else {
    p.weights(opt.n_kernels) = y.mean();
  }
  p.validate();
  return p;
}

Eigen::VectorXd pack_rbf(const RbfParams& p) {
  const Eigen::Index n = p.n_kernels();
  const Eigen::Index dim = p.centers.cols();
  Eigen::VectorXd theta(n + 1 + n * dim + n);
  theta.head(n + 1) = p.weights;
  for (Eigen::Index j = 0; j < n; ++j) theta.segment(n + 1 + j * dim, dim) = p.centers.row(j).transpose();
  theta.tail(n) = p.widths;
  return theta;
}

void unpack_rbf(const Eigen::VectorXd& theta, RbfParams& p) {
  const Eigen::Index n = p.n_kernels();
  const Eigen::Index dim = p.centers.cols();
  if (theta.size() != n + 1 + n * dim + n)
    throw std::invalid_argument("unpack_rbf: parameter vector has the wrong length");
  p.weights = theta.head(n + 1);
  for (Eigen::Index j = 0; j < n; ++j) p.centers.row(j) = theta.segment(n + 1 + j * dim, dim).transpose();
  p.widths = theta.tail(n);
}

Eigen::VectorXd rbf_parameter_gradient(const Eigen::VectorXd& z, const RbfParams& p) {
  const Eigen::Index n = p.n_kernels();
  const Eigen::Index dim = p.centers.cols();
  Eigen::VectorXd g(n + 1 + n * dim + n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::VectorXd diff = z - p.centers.row(j).transpose();
    const double r2 = diff.squaredNorm();
    const double s = p.widths(j);
    const double phi = std::exp(-r2 / (s * s));
    const double wphi = p.weights(j) * phi;
    g(j) = phi;
    g.segment(n + 1 + j * dim, dim) = (2.0 * wphi / (s * s)) * diff;
    g(n + 1 + n * dim + j) = 2.0 * wphi * r2 / (s * s * s);
  }
  g(n) = 1.0;
  return g;
}

RbfFit ekf_identify_rbf(std::span<const Trace> traces, std::span<const double> soc0,
                        const RbfParams& init, const CellParams& cell,
                        const RbfTrainOptions& opt) {
  init.validate();
  RbfFit fit;
  fit.params = init;
  RbfParams& p = fit.params;

  std::vector<Eigen::VectorXd> inputs;
  std::vector<double> targets;
  collect_samples(traces, soc0, cell, p, inputs, targets);
  for (auto& u : inputs) u = p.normalize(u);

  const Eigen::Index n = p.n_kernels();
  const Eigen::Index dim = p.centers.cols();
  Eigen::VectorXd theta = pack_rbf(p);
  const Eigen::Index full = theta.size();
  const Eigen::Index active = opt.weights_only ? n + 1 : full;

  Eigen::VectorXd p0(active);
  p0.head(n + 1).setConstant(opt.p0_weights);
  if (!opt.weights_only) {
    p0.segment(n + 1, n * dim).setConstant(opt.p0_centers);
    p0.tail(n).setConstant(opt.p0_widths);
  }
  // Only the lower triangle of the covariance is maintained.
  Eigen::MatrixXd cov = p0.asDiagonal();

  std::vector<std::size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t step = 0;
  for (int pass = 0; pass < opt.passes; ++pass) {
    if (opt.shuffle) {
      std::mt19937_64 rng(opt.seed + static_cast<std::uint64_t>(pass));
      std::shuffle(order.begin(), order.end(), rng);
    }
    double sum_sq = 0.0;
    for (std::size_t idx : order) {
      const Eigen::VectorXd& z = inputs[idx];
      const double innovation = targets[idx] - rbf_output_normalized(z, p);
      const Eigen::VectorXd c = rbf_parameter_gradient(z, p).head(active);
      const Eigen::VectorXd pc = cov.selfadjointView<Eigen::Lower>() * c;
      const double s = c.dot(pc) + opt.r_meas;
      cov.selfadjointView<Eigen::Lower>().rankUpdate(pc, -1.0 / s);
      theta.head(active) += pc * (innovation / s);
      if (!opt.weights_only)
        theta.tail(n) = theta.tail(n).cwiseMax(opt.sigma_min);
      unpack_rbf(theta, p);
      sum_sq += innovation * innovation;
      ++step;
    }
    const Eigen::VectorXd diag = cov.diagonal();
    if (!diag.allFinite() || diag.maxCoeff() > opt.blowup_limit || !theta.allFinite()) {
      std::ostringstream msg;
      msg << "ekf_identify_rbf: covariance blow-up during pass " << pass;
      throw CovarianceBlowUpError(msg.str(), step, diag.maxCoeff());
    }
    fit.report.pass_innovation_rms_v.push_back(
        inputs.empty() ? 0.0 : std::sqrt(sum_sq / double(inputs.size())));
    ++fit.report.passes;
  }
  fit.report.updates = step;
  fit.report.final_innovation_rms_v =
      fit.report.pass_innovation_rms_v.empty() ? 0.0 : fit.report.pass_innovation_rms_v.back();
  fit.report.final_cov_diagonal = cov.diagonal();
  return fit;
}

}  // namespace cellmodel
