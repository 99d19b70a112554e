#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <random>

#include "cellmodel/errors.hpp"
#include "cellmodel/ident.hpp"
#include "cellmodel/plant.hpp"
#include "oracles.hpp"

using namespace cellmodel;

namespace {

oracle::Weights to_oracle(const FilterStateParams& p) {
  oracle::Weights w;
  for (int j = 0; j < 12; ++j) w[std::size_t(j)] = p.w(j);
  return w;
}

Trace noiseless(const CellModel& truth, const Trace& profile, double soc0 = 1.0) {
  PlantConfig cfg;
  cfg.truth_model = truth;
  cfg.soc0 = soc0;
  return plant_simulate(profile, cfg).truth;
}

std::vector<double> random_currents(std::size_t n, std::uint64_t seed, double mean, double sd) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(mean, sd);
  std::vector<double> i(n);
  for (double& v : i) v = d(rng);
  return i;
}

double rms_error(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s / double(a.size()));
}

}  // namespace

TEST_CASE("build_regressor row layout") {
  const Trace one = make_trace(std::vector<double>{8.0}, std::vector<double>{3.8});
  const std::vector<double> soc{0.5};
  const Regressor r = build_regressor(one, soc);
  REQUIRE(r.rows.rows() == 1);
  const double l = std::log(0.5);
  Eigen::Matrix<double, 1, 7> expected;
  expected << 1, 8, 0, 2, 0.5, l, l;
  CHECK((r.rows.row(0) - expected).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(r.targets(0) == 3.8);

  const Regressor c = build_regressor(make_trace(std::vector<double>{-8.0}, std::vector<double>{3.9}), soc);
  CHECK(c.rows(0, 1) == 0.0);
  CHECK(c.rows(0, 2) == -8.0);

  const Trace three = make_trace(std::vector<double>{1, 1, 1}, std::vector<double>{4, 4, 4});
  const std::vector<double> edge{0.5, 1.0, 0.0};
  const Regressor e = build_regressor(three, edge);
  CHECK(e.rows.rows() == 1);
  CHECK(e.excluded == 2);
  CHECK_THROWS_AS(build_regressor(three, std::vector<double>{1.0, 1.0, 0.0}), EmptyRegressorError);
}

TEST_CASE("fit_least_squares") {
  SUBCASE("exact recovery on a random well-conditioned regressor") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n01(0.0, 1.0);
    Regressor r;
    r.rows.resize(200, 7);
    for (Eigen::Index i = 0; i < r.rows.size(); ++i) r.rows.data()[i] = n01(rng);
    Eigen::Matrix<double, 7, 1> theta;
    theta << 4.1, -0.01, -0.012, -0.05, 0.2, 0.03, -0.04;
    r.targets = r.rows * theta;
    const LeastSquaresFit fit = fit_least_squares(r);
    CHECK((fit.theta - theta).cwiseAbs().maxCoeff() <= 1e-9 * theta.cwiseAbs().maxCoeff());
    CHECK(fit.residual_rms_v < 1e-12);
    CHECK(fit.condition < 10.0);
    CHECK(regressor_coefficients(fit.params) == fit.theta);
  }

  SUBCASE("noisy targets satisfy the normal equations") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n01(0.0, 1.0);
    Regressor r;
    r.rows.resize(500, 7);
    for (Eigen::Index i = 0; i < r.rows.size(); ++i) r.rows.data()[i] = n01(rng);
    r.targets = Eigen::VectorXd::NullaryExpr(500, [&] { return n01(rng); });
    const LeastSquaresFit fit = fit_least_squares(r);
    const Eigen::VectorXd grad = r.rows.transpose() * (r.targets - r.rows * fit.theta);
    const double scale = (r.rows.transpose() * r.targets).cwiseAbs().maxCoeff();
    CHECK(grad.cwiseAbs().maxCoeff() <= 1e-8 * scale);
  }

  SUBCASE("combined-model truth is reproduced from a pulse trace") {
    const CellParams cell;
    const CombinedParams truth{4.15, 0.012, 0.015, 0.004, 0.05, 0.03, -0.01};
    ProfileSpec spec;
    spec.soc_start = 0.95;
    spec.soc_end = 0.15;
    const Trace profile = gen_pulse_profile(spec, cell);
    const Trace t = noiseless(truth, profile, 0.95);
    const auto soc = soc_values(soc_trajectory(t, Soc{0.95}, cell));
    const LeastSquaresFit fit = fit_least_squares(build_regressor(t, soc));
    CHECK(fit.residual_rms_v < 1e-6);
    CHECK(fit.params.r_discharge == doctest::Approx(truth.r_discharge).epsilon(1e-6));
    CHECK(fit.params.r_charge == doctest::Approx(truth.r_charge).epsilon(1e-6));
    CHECK(fit.params.k0 == doctest::Approx(truth.k0).epsilon(1e-6));
  }

  SUBCASE("a discharge-only trace leaves the charge resistance unidentifiable") {
    const CellParams cell;
    std::vector<double> i(3000, 8.0);
    for (std::size_t k = 0; k < i.size(); k += 100) i[k] = 0.0;
    const Trace t = noiseless(CombinedParams{4.1, 0.01, 0.01, 0.01, 0.05, 0.02, -0.01}, make_trace(i, {}), 0.95);
    const auto soc = soc_values(soc_trajectory(t, Soc{0.95}, cell));
    try {
      fit_least_squares(build_regressor(t, soc));
      FAIL("expected rank deficiency");
    } catch (const RankDeficiencyError& e) {
      REQUIRE(e.columns().size() == 1);
      CHECK(e.columns()[0] == std::string(kRegressorColumns[2]));
    }
  }

  CHECK_THROWS_AS(fit_least_squares(Regressor{}), EmptyRegressorError);
}

TEST_CASE("kalman_weight_update") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd a(12, 12);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = n01(rng);
    Eigen::MatrixXd p = a * a.transpose() / 12.0 + 1e-3 * Eigen::MatrixXd::Identity(12, 12);
    const Eigen::MatrixXd before = p;
    Eigen::VectorXd c(12);
    for (Eigen::Index i = 0; i < 12; ++i) c(i) = n01(rng);
    const double r = 0.5;

    const Eigen::VectorXd gain = kalman_weight_update(p, c, r);

    // Gain recomputed from the stored P and C.
    const Eigen::VectorXd pc = before * c;
    const Eigen::VectorXd expected = pc / (c.dot(pc) + r);
    CHECK((gain - expected).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, expected.cwiseAbs().maxCoeff()));

    CHECK((p - p.transpose()).cwiseAbs().maxCoeff() == 0.0);
    for (int probe = 0; probe < 10; ++probe) {
      Eigen::VectorXd x(12);
      for (Eigen::Index i = 0; i < 12; ++i) x(i) = n01(rng);
      CHECK(x.dot(p * x) <= x.dot(before * x) + 1e-12);
    }
    CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(p).eigenvalues().minCoeff() >= -1e-12);
  }
}

TEST_CASE("total derivative of the filter-state output") {
  const CellParams cell;
  const FilterStateParams truth = default_truth_params();

  SUBCASE("base case is the output partial alone") {
    const FilterState x0(0.8, 0, 0, 0);
    const DerivativeStep d = total_derivative_initial(x0, 8.0, truth, cell);
    CHECK((d.dydw - output_weight_partials(x0, peukert_current(8.0, cell), truth)).cwiseAbs().maxCoeff() == 0.0);
    CHECK(d.dxdw.isZero(0.0));
  }

  SUBCASE("the state-partial sparsity pattern") {
    const Eigen::Matrix<double, 4, 12> s = state_weight_partials(FilterState(0.5, 0.1, 0.2, 0.3));
    CHECK(s.row(0).isZero(0.0));
    CHECK(s.rightCols<7>().isZero(0.0));
  }

  SUBCASE("matches central differences of the full simulation") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
      FilterStateParams w = truth;
      for (int j = 1; j <= 12; ++j) w(j) *= 1.0 + 0.2 * (u(rng) - 0.5);
      const std::size_t len = 2 + std::size_t(u(rng) * 60.0);
      const auto i = random_currents(len, 100 + std::uint64_t(trial), 5.0, 30.0);
      const double soc0 = 0.3 + 0.6 * u(rng);

      DerivativeStep d = total_derivative_initial(FilterState(soc0, 0, 0, 0), i[0], w, cell);
      for (std::size_t k = 1; k < len; ++k) d = total_derivative_step(d.dxdw, d.x, i[k - 1], i[k], w, cell);

      const auto fd = oracle::filter_fd_gradient({soc0, 0, 0, 0}, i, to_oracle(w), 10.0L, cell);
      const double y_ref = double(oracle::filter_output_at_end({soc0, 0, 0, 0}, i, to_oracle(w), 10.0L, cell));
      CHECK(d.y == doctest::Approx(y_ref).epsilon(1e-13));
      double gmax = 0.0;
      for (double g : fd) gmax = std::max(gmax, std::abs(g));
      for (int j = 0; j < 12; ++j) {
        const double err = std::abs(d.dydw(j) - double(fd[std::size_t(j)]));
        CHECK(err <= 1e-4 * std::max(std::abs(double(fd[std::size_t(j)])), 1e-6 * gmax));
      }
      CHECK(d.dydw(5) == 1.0);
      ++checked;
    }
    CHECK(checked == 100);
  }

  CHECK_THROWS_AS(output_state_partials(FilterState(0.3, 0, 0, 0), [] {
                    FilterStateParams p;
                    p(9) = -0.3;
                    return p;
                  }()),
                  ModelDomainError);
}

TEST_CASE("ekf_identify") {
  const CellParams cell;
  const FilterStateParams truth = default_truth_params();
  ProfileSpec spec;
  spec.kind = ProfileKind::DriveCycle;
  spec.soc_start = 0.9;
  spec.soc_end = 0.6;
  spec.mean_c = 1.0;
  spec.std_c = 2.0;
  const Trace data = noiseless(truth, gen_drive_cycle(spec, cell), 0.9);
  FilterIdentOptions opt;
  opt.soc0 = {0.9};

  SUBCASE("a zero-length trace returns the initial state unchanged") {
    const EkfState init = EkfState::make(truth.w);
    const auto r = ekf_identify(Trace{}, init, truth, cell, opt);
    CHECK(r.params.w == truth.w);
    CHECK(r.state.p_cov == init.p_cov);
    CHECK(r.report.updates == 0);
  }

  SUBCASE("zero innovation leaves the weights in place") {
    const auto r = ekf_identify(data, EkfState::make(truth.w), truth, cell, opt);
    CHECK(r.params.w == truth.w);
    CHECK(r.report.final_innovation_rms_v == 0.0);
    CHECK(r.report.updates == 3 * data.size());
    CHECK(r.report.warnings.empty());
  }

  SUBCASE("perturbed start converges on noiseless data") {
    FilterStateParams start = truth;
    start(6) += 0.02;
    start(7) *= 0.8;
    start(10) -= 0.02;
    // Tight prior on the dynamics, wide on the perturbed static weights.
    Eigen::VectorXd p0 = scaled_covariance_diagonal(start.w, 1e-3);
    p0(5) = p0(9) = 1e-3;
    p0(6) = std::pow(0.5 * truth(7), 2);
    double previous = (start.w - truth.w).cwiseAbs().maxCoeff();
    double innovation = 0.0;
    for (int passes = 1; passes <= 3; ++passes) {
      opt.passes = passes;
      const auto r = ekf_identify(data, EkfState::make(start.w, p0, 1e-3), truth, cell, opt);
      const double err = (r.params.w - truth.w).cwiseAbs().maxCoeff();
      CHECK(err < previous);
      previous = err;
      innovation = r.report.final_innovation_rms_v;
    }
    CHECK(innovation < 1e-3);
  }

  SUBCASE("covariance blow-up aborts with diagnostics") {
    opt.blowup_limit = 1e-3;
    try {
      ekf_identify(data, EkfState::make(truth.w, 1.0), truth, cell, opt);
      FAIL("expected a blow-up");
    } catch (const CovarianceBlowUpError& e) {
      CHECK(e.step() == 0);
      CHECK(e.max_diagonal() > 1e-3);
    }
  }

  SUBCASE("unstable fitted weights are reported, not thrown") {
    FilterStateParams bad = truth;
    bad(4) = 0.9;
    bad(5) = 0.5;  // |0.9 +- 0.5j| > 1
    const auto r = ekf_identify(data, EkfState::make(bad.w, 1e-30), bad, cell, opt);
    CHECK_FALSE(r.report.stable);
    CHECK_FALSE(r.report.warnings.empty());
  }
}

TEST_CASE("fit_scheduled") {
  const CellParams cell;
  const FilterStateParams base = default_truth_params();
  const ScheduledParams bins = default_schedule(base, cell);
  REQUIRE(bins.bins.size() == 3);
  const EkfState init = EkfState::make(base.w, 1e-8, 1e-3);

  SUBCASE("bins with no samples are listed") {
    ProfileSpec spec;
    spec.soc_end = 0.7;
    const Trace t = noiseless(base, gen_pulse_profile(spec, cell));
    const std::vector<Trace> traces{t};
    try {
      fit_scheduled(traces, bins, init, cell);
      FAIL("expected empty bins");
    } catch (const EmptyBinError& e) {
      CHECK(e.bins() == std::vector<std::size_t>{1, 2});
    }
  }

  SUBCASE("a single-bin schedule equals plain identification") {
    ProfileSpec spec;
    spec.soc_end = 0.7;
    const Trace t = noiseless(base, gen_pulse_profile(spec, cell));
    FilterStateParams start = base;
    start(7) *= 0.9;
    ScheduledParams one{{{std::numeric_limits<double>::infinity(), start}}};
    const std::vector<Trace> traces{t};
    const EkfState s0 = EkfState::make(start.w, scaled_covariance_diagonal(start.w, 0.05), 1e-3);
    const auto sched = fit_scheduled(traces, one, s0, cell);
    const auto plain = ekf_identify(t, s0, start, cell);
    CHECK(sched.params.bins[0].params.w == plain.params.w);
  }

  SUBCASE("three current levels each validate best on their own level") {
    ScheduledParams truth = bins;
    truth.bins[1].params(7) = 1.6 * base(7);
    truth.bins[2].params(7) = 2.2 * base(7);
    std::vector<Trace> traces;
    for (double rate : {1.0, 2.0, 4.0}) {
      ProfileSpec spec;
      spec.rate_c = rate;
      spec.soc_end = 0.5;
      traces.push_back(noiseless(truth, gen_pulse_profile(spec, cell)));
    }
    // Only the static weights differ between levels, so only they get a wide prior.
    Eigen::VectorXd p0 = scaled_covariance_diagonal(base.w, 1e-3);
    p0(5) = 1e-2;
    p0(6) = std::pow(0.5 * base(7), 2);
    const EkfState s0 = EkfState::make(base.w, p0, 1e-3);
    const auto fit = fit_scheduled(traces, bins, s0, cell);
    REQUIRE(fit.params.bins.size() == 3);
    for (std::size_t level = 0; level < 3; ++level) {
      std::vector<double> err(3);
      for (std::size_t b = 0; b < 3; ++b) {
        const auto sim = simulate(fit.params.bins[b].params, traces[level], cell);
        err[b] = rms_error(sim.voltage, traces[level].voltages());
      }
      CAPTURE(level);
      CAPTURE(err[0]);
      CAPTURE(err[1]);
      CAPTURE(err[2]);
      CHECK(std::min_element(err.begin(), err.end()) - err.begin() == std::ptrdiff_t(level));
    }
  }
}

TEST_CASE("initial_filter_params") {
  const CellParams cell;
  ProfileSpec spec;
  spec.soc_end = 0.2;
  const std::vector<Trace> traces{noiseless(default_truth_params(), gen_pulse_profile(spec, cell))};
  const std::vector<double> soc0{1.0};
  const FilterStateParams p = initial_filter_params(traces, soc0, cell);
  CHECK(p(9) == 0.3);
  CHECK(p(1) == 0.0);
  CHECK(p(3) == 0.0);
  CHECK(filter_is_stable(p));
  const auto sim = simulate(p, traces[0], cell);
  CHECK(rms_error(sim.voltage, traces[0].voltages()) < 0.05);

  const std::vector<Trace> flat{make_trace(std::vector<double>(100, 0.0), std::vector<double>(100, 4.0))};
  CHECK_THROWS_AS(initial_filter_params(flat, soc0, cell), RankDeficiencyError);
}

TEST_CASE("RBF training") {
  const CellParams cell;
  RbfParams truth;
  truth.input_layout = {RbfInput::Current};
  truth.centers = Eigen::MatrixXd::Constant(1, 1, 0.2);
  truth.widths = Eigen::VectorXd::Constant(1, 0.5);
  truth.weights = Eigen::Vector2d(0.3, 3.7);
  truth.input_min = Eigen::VectorXd::Constant(1, -20.0);
  truth.input_max = Eigen::VectorXd::Constant(1, 20.0);

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> amp(-20.0, 20.0);
  std::vector<double> i(3000), v(3000);
  for (std::size_t k = 0; k < i.size(); ++k) {
    i[k] = amp(rng);
    v[k] = rbf_output(Eigen::VectorXd::Constant(1, i[k]), truth);
  }
  const std::vector<Trace> traces{make_trace(i, v)};
  const std::vector<double> soc0{0.5};

  SUBCASE("a single bump plus bias is recovered") {
    RbfParams start = truth;
    start.centers(0, 0) = 0.1;
    start.widths(0) = 0.6;
    start.weights << 0.25, 3.65;
    RbfTrainOptions opt;
    opt.r_meas = 1e-6;
    const RbfFit fit = ekf_identify_rbf(traces, soc0, start, cell, opt);
    CHECK(fit.report.passes == 3);
    const Eigen::VectorXd got = pack_rbf(fit.params);
    const Eigen::VectorXd want = pack_rbf(truth);
    for (Eigen::Index j = 0; j < got.size(); ++j) CHECK(std::abs(got(j) - want(j)) <= 1e-2 * std::abs(want(j)));
  }

  SUBCASE("zero innovation leaves the parameters unchanged") {
    const RbfFit fit = ekf_identify_rbf(traces, soc0, truth, cell);
    CHECK(pack_rbf(fit.params) == pack_rbf(truth));
  }

  SUBCASE("widths are projected onto the lower bound") {
    RbfParams start = truth;
    start.widths(0) = 0.45;
    RbfTrainOptions opt;
    opt.sigma_min = 0.44;
    RbfParams narrow = truth;
    narrow.widths(0) = 0.1;
    std::vector<double> vn(i.size());
    for (std::size_t k = 0; k < i.size(); ++k) vn[k] = rbf_output(Eigen::VectorXd::Constant(1, i[k]), narrow);
    const std::vector<Trace> tn{make_trace(i, vn)};
    const RbfFit fit = ekf_identify_rbf(tn, soc0, start, cell, opt);
    CHECK(fit.params.widths(0) >= 0.44);
  }

  SUBCASE("analytic gradient matches central differences") {
    RbfParams p;
    p.input_layout = {RbfInput::Soc, RbfInput::Current};
    p.centers = Eigen::MatrixXd(3, 2);
    p.centers << -0.4, 0.2, 0.1, -0.3, 0.6, 0.5;
    p.widths = Eigen::Vector3d(0.5, 0.7, 0.4);
    p.weights = Eigen::Vector4d(0.2, -0.1, 0.3, 3.8);
    const Eigen::Vector2d z(0.05, 0.1);
    const Eigen::VectorXd g = rbf_parameter_gradient(z, p);
    const Eigen::VectorXd theta = pack_rbf(p);
    REQUIRE(theta.size() == 3 + 1 + 6 + 3);
    for (Eigen::Index j = 0; j < theta.size(); ++j) {
      const double h = 1e-6 * std::max(1.0, std::abs(theta(j)));
      Eigen::VectorXd up = theta, dn = theta;
      up(j) += h;
      dn(j) -= h;
      RbfParams pu = p, pd = p;
      unpack_rbf(up, pu);
      unpack_rbf(dn, pd);
      const double fd = (rbf_output_normalized(z, pu) - rbf_output_normalized(z, pd)) / (2.0 * h);
      CHECK(g(j) == doctest::Approx(fd).epsilon(1e-6).scale(1e-3));
    }
    // The weight partials are the kernel activations themselves.
    CHECK((g.head(3) - rbf_activations(z, p)).cwiseAbs().maxCoeff() == 0.0);
    RbfParams q = p;
    unpack_rbf(theta, q);
    CHECK(pack_rbf(q) == theta);
    CHECK_THROWS(unpack_rbf(theta.head(5), q));
  }
}

TEST_CASE("init_rbf") {
  const CellParams cell;
  ProfileSpec spec;
  spec.kind = ProfileKind::DriveCycle;
  spec.soc_start = 0.9;
  spec.soc_end = 0.7;
  const std::vector<Trace> traces{noiseless(default_truth_params(), gen_drive_cycle(spec, cell), 0.9)};
  const std::vector<double> soc0{0.9};
  RbfInitOptions opt;
  opt.n_kernels = 8;
  const RbfParams a = init_rbf(traces, soc0, cell, opt);
  const RbfParams b = init_rbf(traces, soc0, cell, opt);
  CHECK(a.n_kernels() == 8);
  CHECK(a.centers == b.centers);
  CHECK((a.widths.array() > 0.0).all());
  CHECK(a.centers.cwiseAbs().maxCoeff() <= 1.0 + 1e-12);
  CHECK_NOTHROW(a.validate());
}
