#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>

#include "cellmodel/cli.hpp"
#include "cellmodel/errors.hpp"
#include "cellmodel/io.hpp"

using namespace cellmodel;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "cellmodel_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

json run(const std::string& command, const fs::path& out, const std::vector<std::string>& overrides,
         std::uint64_t seed = 1, const std::string& config_text = "") {
  return run_command(RunConfig::load(command, config_text, overrides, seed, out));
}

/// Exit code that the command-line tool would return for this run.
int exit_code_of(const std::string& command, const fs::path& out, const std::vector<std::string>& overrides) {
  try {
    run(command, out, overrides);
    return kExitOk;
  } catch (...) {
    return exit_code_for_current_exception();
  }
}

std::string p(const fs::path& path) { return path.string(); }

}  // namespace

TEST_CASE("format_double round-trips") {
  for (double v : {0.1, 1.0 / 3.0, -4.2e-17, 3.7, 1e300, 0.0}) CHECK(std::stod(format_double(v)) == v);
  CHECK(format_double(std::numeric_limits<double>::quiet_NaN()) == "nan");
  CHECK(format_double(std::numeric_limits<double>::infinity()) == "inf");
  CHECK(format_double(-std::numeric_limits<double>::infinity()) == "-inf");
}

TEST_CASE("trace CSV") {
  const fs::path dir = scratch("trace_csv");
  const std::vector<double> i{1.0 / 3.0, -8.0, 0.0, 1e-9};
  const std::vector<double> v{3.7, 4.1999999999, std::numeric_limits<double>::quiet_NaN(), 3.0};
  const Trace t = make_trace(i, v);
  write_trace_csv(dir / "t.csv", t);
  CHECK(read_text(dir / "t.csv").rfind(std::string(kTraceHeader) + "\n", 0) == 0);
  const Trace back = read_trace_csv(dir / "t.csv");
  REQUIRE(back.size() == 4);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(back.samples[k].time_s == t.samples[k].time_s);
    CHECK(back.samples[k].current_a == i[k]);
    if (k != 2) CHECK(back.samples[k].voltage_v == v[k]);
  }
  CHECK(std::isnan(back.samples[2].voltage_v));

  write_text(dir / "jitter.csv", std::string(kTraceHeader) + "\n0,1,4,25\n1.5,2,4,25\n2,3,4,25\n3,4,4,25\n");
  const Trace r = read_trace_csv(dir / "jitter.csv");
  CHECK(r.is_uniform());
  CHECK(r.meta.count("resampled") == 1);

  write_text(dir / "bad_header.csv", "t,i,v\n0,1,4\n");
  CHECK_THROWS_AS(read_trace_csv(dir / "bad_header.csv"), IoError);
  write_text(dir / "short_row.csv", std::string(kTraceHeader) + "\n0,1,4\n");
  CHECK_THROWS_AS(read_trace_csv(dir / "short_row.csv"), IoError);
  write_text(dir / "backwards.csv", std::string(kTraceHeader) + "\n1,1,4,25\n0,1,4,25\n");
  CHECK_THROWS_AS(read_trace_csv(dir / "backwards.csv"), IoError);
  write_text(dir / "garbage.csv", std::string(kTraceHeader) + "\n0,abc,4,25\n");
  CHECK_THROWS_AS(read_trace_csv(dir / "garbage.csv"), IoError);
  CHECK_THROWS_AS(read_trace_csv(dir / "missing.csv"), IoError);
}

TEST_CASE("parameter files round-trip for every family") {
  CellParams cell;
  cell.nominal_capacity_ah = 7.5;
  const auto round = [&](const CellModel& m) {
    const ModelFile f = model_from_json(model_to_json(m, cell));
    CHECK(f.cell.nominal_capacity_ah == 7.5);
    CHECK(family_name(f.model) == family_name(m));
    return f.model;
  };

  const CombinedParams c{4.1, 0.01, 0.012, 0.003, 0.05, 0.02, -0.01};
  CHECK(std::get<CombinedParams>(round(c)).as_vector() == c.as_vector());

  const FilterStateParams f = default_truth_params();
  CHECK(std::get<FilterStateParams>(round(f)).w == f.w);

  const ScheduledParams s = default_schedule(f, cell);
  const auto s2 = std::get<ScheduledParams>(round(s));
  REQUIRE(s2.bins.size() == s.bins.size());
  CHECK(std::isinf(s2.bins.back().upper_a));
  CHECK(s2.bins[0].upper_a == s.bins[0].upper_a);
  CHECK(s2.bins[1].params.w == f.w);

  RbfParams r;
  r.input_layout = {RbfInput::Soc, RbfInput::Current, RbfInput::FilterX3};
  r.centers = Eigen::MatrixXd::Random(4, 3);
  r.widths = Eigen::Vector4d(0.3, 0.4, 0.5, 0.6);
  r.weights = Eigen::VectorXd::Random(5);
  r.input_min = Eigen::Vector3d(0.0, -200.0, -1.0);
  r.input_max = Eigen::Vector3d(1.0, 200.0, 1.0);
  r.state_filter = f;
  const auto r2 = std::get<RbfParams>(round(r));
  CHECK(r2.centers == r.centers);
  CHECK(r2.widths == r.widths);
  CHECK(r2.weights == r.weights);
  CHECK(r2.input_layout == r.input_layout);
  CHECK(r2.input_min == r.input_min);
  REQUIRE(r2.state_filter.has_value());
  CHECK(r2.state_filter->w == f.w);

  CHECK_THROWS(model_from_json("{\"family\": \"lstm\"}"));
  CHECK_THROWS(model_from_json("not json"));
}

TEST_CASE("RunConfig") {
  const RunConfig d = RunConfig::load("simulate", "", {}, 7, "x");
  CHECK(d.number("cell", "capacity_ah") == 8.0);
  CHECK(d.cell().one_c_amps() == 8.0);
  CHECK(d.profile().seed == 7);

  const std::string text = "# comment\n[profile]\nkind = drive_cycle ; trailing\nrate_c = 2\n[sensor]\nadc_bits = 12\n";
  const RunConfig c = RunConfig::load("simulate", text, {"profile.rate_c=3", "write_truth_trace=false"}, 1, "x");
  CHECK(c.profile().kind == ProfileKind::DriveCycle);
  CHECK(c.profile().rate_c == 3.0);
  CHECK(c.sensor().adc_bits == 12);
  CHECK_FALSE(c.flag("simulate", "write_truth_trace"));
  CHECK(c.resolved_text().find("rate_c = 3") != std::string::npos);
  CHECK(c.hash() != d.hash());
  CHECK(c.hash() == RunConfig::load("simulate", text, {"profile.rate_c=3", "write_truth_trace=false"}, 1, "y").hash());
  CHECK(c.hash() != RunConfig::load("simulate", text, {"profile.rate_c=3", "write_truth_trace=false"}, 2, "x").hash());

  CHECK_THROWS_AS(RunConfig::load("simulate", "[nonsense]\n", {}, 1, "x"), ConfigError);
  CHECK_THROWS_AS(RunConfig::load("simulate", "[cell]\ncolour = red\n", {}, 1, "x"), ConfigError);
  CHECK_THROWS_AS(RunConfig::load("simulate", "[cell]\njust words\n", {}, 1, "x"), ConfigError);
  CHECK_THROWS_AS(RunConfig::load("simulate", "", {"cell.bogus=1"}, 1, "x"), ConfigError);
  CHECK_THROWS_AS(RunConfig::load("simulate", "", {"no_equals"}, 1, "x"), ConfigError);
  CHECK_THROWS_AS(RunConfig::load("launch", "", {}, 1, "x"), ConfigError);
  CHECK_THROWS_AS(RunConfig::load("simulate", "", {"cell.capacity_ah=abc"}, 1, "x").cell(), ConfigError);
  CHECK_THROWS_AS(RunConfig::load("simulate", "", {"cell.capacity_ah=-1"}, 1, "x").cell(), ConfigError);
  CHECK_THROWS_AS(RunConfig::load("simulate", "", {"sensor.quantize=maybe"}, 1, "x").sensor(), ConfigError);
}

TEST_CASE("simulate command") {
  const fs::path a = scratch("sim_a"), b = scratch("sim_b");
  const json s = run("simulate", a, {"profile.soc_end=0.7"}, 5);
  run("simulate", b, {"profile.soc_end=0.7"}, 5);
  for (const char* f : {"trace.csv", "truth.csv", "soc.csv", "config.ini", "manifest.json"}) {
    REQUIRE(fs::exists(a / f));
    CHECK(read_text(a / f) == read_text(b / f));
  }
  const Trace t = read_trace_csv(a / "trace.csv");
  CHECK(t.period_s() == 1.0);
  CHECK(t.is_uniform());
  CHECK(s.at("has_charge").get<bool>());
  CHECK(s.at("config_hash") == RunConfig::load("simulate", "", {"profile.soc_end=0.7"}, 5, a).hash());
  const json manifest = json::parse(read_text(a / "manifest.json"));
  CHECK(manifest.at("files").size() == 4);  // config.ini plus three outputs
  CHECK(read_csv(a / "soc.csv").column("soc").front() == 1.0);

  const fs::path d = scratch("sim_drive");
  const json dc = run("simulate", d, {"profile.kind=drive_cycle", "profile.soc_end=0.8"}, 3);
  CHECK(dc.at("has_charge").get<bool>());
  CHECK(dc.at("has_discharge").get<bool>());

  CHECK(exit_code_of("simulate", scratch("sim_bad"), {"profile.rate_c=30"}) == kExitConfig);
  CHECK(exit_code_of("simulate", scratch("sim_bad2"), {"profile.soc_start=0.5", "profile.soc_end=0.49"}) ==
        kExitConfig);
}

TEST_CASE("fit and validate commands") {
  const fs::path dir = scratch("fit");
  const CellParams cell;
  const CombinedParams truth{4.15, 0.012, 0.015, 0.004, 0.05, 0.03, -0.01};
  write_text(dir / "combined_truth.json", model_to_json(truth, cell));
  run("simulate", dir / "data",
      {"plant.truth=" + p(dir / "combined_truth.json"), "sensor.enabled=false", "profile.soc_start=0.95",
       "profile.soc_end=0.15"});

  SUBCASE("combined fit on noiseless data reproduces the truth") {
    const json r = run("fit", dir / "fit_c",
                       {"input=" + p(dir / "data/trace.csv"), "family=combined", "soc0=0.95"});
    CHECK(r.at("residual_rms_v").get<double>() < 1e-6);
    const auto fitted = std::get<CombinedParams>(model_from_json(read_text(dir / "fit_c/params.json")).model);
    CHECK(fitted.r_discharge == doctest::Approx(truth.r_discharge).epsilon(1e-6));
  }

  SUBCASE("validation metrics are recomputable from the residual series") {
    // Noisy pulse data from the default filter-state plant.
    run("simulate", dir / "noisy", {"profile.soc_end=0.3"}, 2);
    run("fit", dir / "fit_n", {"input=" + p(dir / "noisy/trace.csv"), "family=combined"});
    const json m = run("validate", dir / "val_n",
                       {"params=" + p(dir / "fit_n/params.json"), "input=" + p(dir / "noisy/trace.csv")});
    const CsvTable res = read_csv(dir / "val_n/residuals.csv");
    double sum_sq = 0.0;
    for (double e : res.column("residual_v")) sum_sq += e * e;
    const double rms_mv = 1e3 * std::sqrt(sum_sq / double(res.rows()));
    CHECK(std::abs(rms_mv - m.at("rms_mv").get<double>()) <= 1e-9);
    CHECK(m.at("params_hash") == hex64(fnv1a64(read_text(dir / "fit_n/params.json"))));
    CHECK(m.at("family") == "combined");
    CHECK_FALSE(m.at("segments").empty());
    const CsvTable overlay = read_csv(dir / "val_n/overlay.csv");
    CHECK(overlay.header == std::vector<std::string>{"time_s", "v_true", "v_pred"});

    // A held-out drive cycle is no easier than the fit data.
    run("simulate", dir / "held", {"profile.kind=drive_cycle", "profile.soc_end=0.3"}, 9);
    const json h = run("validate", dir / "val_h",
                       {"params=" + p(dir / "fit_n/params.json"), "input=" + p(dir / "held/trace.csv")});
    CHECK(h.at("rms_mv").get<double>() >= m.at("rms_mv").get<double>());
  }

  SUBCASE("filter-state fit writes a report with the EKF diagnostics") {
    run("simulate", dir / "short", {"profile.soc_end=0.8", "sensor.enabled=false"}, 2);
    const json r = run("fit", dir / "fit_f", {"input=" + p(dir / "short/trace.csv"), "passes=1"});
    CHECK(r.at("ekf").at("passes") == 1);
    CHECK(fs::exists(dir / "fit_f/fit_report.json"));
    CHECK(std::holds_alternative<FilterStateParams>(model_from_json(read_text(dir / "fit_f/params.json")).model));
  }

  SUBCASE("an RBF kernel list writes one parameter file per size") {
    run("simulate", dir / "tiny", {"profile.soc_end=0.85"}, 2);
    const json r = run("fit", dir / "fit_r",
                       {"input=" + p(dir / "tiny/trace.csv"), "family=rbf", "n_kernels=10,25,50,100",
                        "rbf_passes=1"});
    CHECK(r.at("rbf").size() == 4);
    for (int n : {10, 25, 50, 100}) {
      const fs::path f = dir / "fit_r" / ("params_rbf_" + std::to_string(n) + ".json");
      REQUIRE(fs::exists(f));
      CHECK(std::get<RbfParams>(model_from_json(read_text(f)).model).n_kernels() == n);
    }
  }

  SUBCASE("error paths map onto distinct exit codes") {
    CHECK(exit_code_of("fit", scratch("e_io"), {"input=" + p(dir / "nope.csv")}) == kExitIo);
    CHECK(exit_code_of("fit", scratch("e_cfg"), {"input=" + p(dir / "data/trace.csv"), "family=lstm"}) ==
          kExitConfig);

    std::vector<double> i(2000, 8.0);
    write_trace_csv(dir / "discharge.csv",
                    plant_simulate(make_trace(i, {}), PlantConfig{truth, cell, 1, 0.95}).truth);
    CHECK(exit_code_of("fit", scratch("e_rank"),
                       {"input=" + p(dir / "discharge.csv"), "family=combined", "soc0=0.95"}) ==
          kExitRankDeficient);

    run("simulate", dir / "onec", {"profile.soc_end=0.7"}, 2);
    CHECK(exit_code_of("fit", scratch("e_bin"), {"input=" + p(dir / "onec/trace.csv"), "family=scheduled"}) ==
          kExitEmptyBin);

    CHECK(exit_code_of("fit", scratch("e_blow"),
                       {"input=" + p(dir / "onec/trace.csv"), "p0=1e7"}) == kExitCovarianceBlowUp);

    CHECK(exit_code_of("soc", scratch("e_family"),
                       {"params=" + p(dir / "combined_truth.json"), "input=" + p(dir / "data/trace.csv")}) ==
          kExitFamilyMismatch);

    CellParams slow = cell;
    slow.sample_period_h = 10.0 / 3600.0;
    write_text(dir / "slow.json", model_to_json(truth, slow));
    CHECK(exit_code_of("validate", scratch("e_period"),
                       {"params=" + p(dir / "slow.json"), "input=" + p(dir / "data/trace.csv")}) ==
          kExitFamilyMismatch);
  }
}

TEST_CASE("soc command") {
  const fs::path dir = scratch("soc");
  const CellParams cell;
  write_text(dir / "truth.json", model_to_json(default_truth_params(), cell));
  run("simulate", dir / "clean", {"profile.kind=drive_cycle", "profile.soc_end=0.5", "sensor.enabled=false"}, 4);

  const json perfect = run("soc", dir / "perfect",
                           {"params=" + p(dir / "truth.json"), "input=" + p(dir / "clean/trace.csv"),
                            "truth_soc=" + p(dir / "clean/soc.csv"), "p0_soc=1e-8", "p0_filter=1e-12",
                            "sensor.i_noise_sigma=0", "sensor.v_noise_sigma=1e-4", "sensor.quantize=false"});
  CHECK(perfect.at("max_abs_soc_error").get<double>() < 1e-6);

  run("simulate", dir / "noisy", {"profile.kind=drive_cycle", "profile.soc_end=0.3"}, 4);
  const json wrong = run("soc", dir / "wrong",
                         {"params=" + p(dir / "truth.json"), "input=" + p(dir / "noisy/trace.csv"),
                          "truth_soc=" + p(dir / "noisy/soc.csv"), "soc0=0.7", "p0_soc=0.1"});
  const double cov = wrong.at("coverage_3sigma").get<double>();
  CHECK(cov >= 0.0);
  CHECK(cov <= 1.0);
  CHECK(std::abs(wrong.at("final_soc_error").get<double>()) < 0.02);
  const CsvTable series = read_csv(dir / "wrong/soc_estimates.csv");
  CHECK(series.header == std::vector<std::string>{"time_s", "soc", "sigma", "innovation_v"});
  CHECK(fs::exists(dir / "wrong/summary.json"));
}

TEST_CASE("sweep-kernels command") {
  const fs::path dir = scratch("sweep");
  const std::vector<std::string> small{"n_kernels=6", "train_seeds=2", "soc_end=0.8", "rbf_passes=1"};
  const json one = run("sweep-kernels", dir / "a", small, 3);
  const CsvTable t = read_csv(dir / "a/sweep.csv");
  CHECK(t.rows() == 1);
  CHECK(t.column("n_kernels")[0] == 6.0);
  CHECK(t.column("rms_mv")[0] > 0.0);
  run("sweep-kernels", dir / "b", small, 3);
  CHECK(read_text(dir / "a/sweep.csv") == read_text(dir / "b/sweep.csv"));
  CHECK(read_text(dir / "a/params_rbf_6.json") == read_text(dir / "b/params_rbf_6.json"));

  CHECK(exit_code_of("sweep-kernels", scratch("sweep_bad"), {"n_kernels=2.5"}) == kExitConfig);
  CHECK(exit_code_of("sweep-kernels", scratch("sweep_nf"), {"state_filter=none"}) == kExitConfig);
}

#ifdef CELLMODEL_CLI_PATH
TEST_CASE("command-line tool exit codes") {
  const fs::path dir = scratch("binary");
  const auto status = [&](const std::string& args) {
    const std::string cmd = std::string(CELLMODEL_CLI_PATH) + " " + args + " > " + p(dir / "stdout.txt") +
                            " 2> " + p(dir / "stderr.txt");
    const int raw = std::system(cmd.c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  CHECK(status("simulate --out " + p(dir / "ok") + " --seed 3 --set profile.soc_end=0.8 sensor.adc_bits=12") ==
        kExitOk);
  CHECK(json::parse(read_text(dir / "stdout.txt")).at("command") == "simulate");
  CHECK(status("fit --out " + p(dir / "io") + " --set input=" + p(dir / "missing.csv")) == kExitIo);
  CHECK(read_text(dir / "stderr.txt").rfind("error: ", 0) == 0);
  CHECK(status("simulate --out " + p(dir / "cfg") + " --set bogus=1") == kExitConfig);
  CHECK(status("launch") == kExitUsage);
  CHECK(status("simulate --config " + p(dir / "none.ini")) == kExitIo);
}
#endif
