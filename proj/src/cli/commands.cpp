#include <cmath>
#include <limits>
#include <sstream>

#include "cellmodel/cli.hpp"
#include "cellmodel/errors.hpp"
#include "cellmodel/estimate.hpp"
#include "cellmodel/ident.hpp"
#include "cellmodel/io.hpp"

namespace cellmodel {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Sensor noise draws use a stream distinct from the profile generator.
std::uint64_t sensor_seed(std::uint64_t seed) { return seed + 0x9E3779B97F4A7C15ULL; }

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

struct Outputs {
  fs::path dir;
  std::string config_hash;
  std::vector<std::string> files;

  fs::path add(const std::string& name) {
    files.push_back(name);
    return dir / name;
  }
  void json_file(const std::string& name, json j) {
    j["config_hash"] = config_hash;
    write_text(add(name), j.dump(2) + "\n");
  }
};

Outputs outputs_for(const RunConfig& cfg) { return Outputs{cfg.out_dir(), cfg.hash(), {}}; }

json finish(json summary, const Outputs& out) {
  summary["outputs"] = out.files;
  summary["config_hash"] = out.config_hash;
  return summary;
}

void check_period(const Trace& trace, const CellParams& cell, const std::string& what) {
  if (trace.size() < 2) return;
  const double expected = cell.sample_period_s();
  if (std::abs(trace.period_s() - expected) > 1e-6 * expected) {
    std::ostringstream msg;
    msg << what << ": trace period " << trace.period_s() << " s differs from the cell sample period "
        << expected << " s";
    throw FamilyMismatchError(msg.str());
  }
}

std::vector<Trace> read_traces(const RunConfig& cfg, const std::string& section, const std::string& key) {
  std::vector<Trace> traces;
  for (const std::string& p : cfg.texts(section, key)) traces.push_back(read_trace_csv(p));
  if (traces.empty()) throw ConfigError(section + "." + key + ": no input trace given");
  return traces;
}

std::vector<double> per_trace_soc0(const RunConfig& cfg, const std::string& section, std::size_t n) {
  std::vector<double> soc0 = cfg.numbers(section, "soc0");
  if (soc0.size() != 1 && soc0.size() != n)
    throw ConfigError(section + ".soc0: give one value or one per input trace");
  for (double s : soc0)
    if (!(s >= 0.0 && s <= 1.0)) throw ConfigError(section + ".soc0 must lie in [0, 1]");
  return soc0;
}

PlantConfig plant_config(const RunConfig& cfg, const ProfileSpec& profile) {
  PlantConfig pc;
  pc.cell = cfg.cell();
  pc.seed = cfg.seed();
  const std::string truth = cfg.text("plant", "truth");
  if (truth != "default") pc.truth_model = model_from_json(read_text(truth)).model;
  const std::string soc0 = cfg.text("plant", "soc0");
  pc.soc0 = soc0 == "auto" ? profile.soc_start : cfg.number("plant", "soc0");
  return pc;
}

std::vector<RbfInput> parse_layout(const std::vector<std::string>& names) {
  std::vector<RbfInput> layout;
  try {
    for (const std::string& n : names) layout.push_back(rbf_input_from_string(n));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (layout.empty()) throw ConfigError("RBF input layout is empty");
  return layout;
}

RbfTrainOptions rbf_train_options(const RunConfig& cfg, const std::string& section) {
  RbfTrainOptions o;
  o.passes = static_cast<int>(cfg.integer(section, "rbf_passes"));
  o.r_meas = cfg.number(section, "rbf_r_meas");
  o.p0_weights = cfg.number(section, "rbf_p0_weights");
  o.p0_centers = cfg.number(section, "rbf_p0_centers");
  o.p0_widths = cfg.number(section, "rbf_p0_widths");
  o.seed = cfg.seed();
  return o;
}

json filter_report_json(const FilterIdentReport& r) {
  return json{{"passes", r.passes},
              {"updates", r.updates},
              {"pass_innovation_rms_v", r.pass_innovation_rms_v},
              {"final_innovation_rms_v", r.final_innovation_rms_v},
              {"final_cov_diagonal", vec_json(r.final_cov_diagonal)},
              {"stable", r.stable},
              {"w9_positive", r.w9_positive},
              {"warnings", r.warnings}};
}

/// Filter-state identification with the fit-section settings.
FilterIdentResult identify_filter(const RunConfig& cfg, std::span<const Trace> traces,
                                  const std::vector<double>& soc0, const CellParams& cell,
                                  const FilterStateParams& init) {
  const double p0_rel = cfg.number("fit", "p0_rel");
  const double r = cfg.number("fit", "r_meas");
  const EkfState state = p0_rel > 0.0
                             ? EkfState::make(init.w, scaled_covariance_diagonal(init.w, p0_rel), r)
                             : EkfState::make(init.w, cfg.number("fit", "p0"), r);
  FilterIdentOptions opt;
  opt.passes = static_cast<int>(cfg.integer("fit", "passes"));
  opt.soc0 = soc0;
  return ekf_identify(traces, state, init, cell, opt);
}

FilterStateParams filter_init(const RunConfig& cfg, std::span<const Trace> traces,
                              const std::vector<double>& soc0, const CellParams& cell) {
  const std::string init = cfg.text("fit", "init");
  if (init == "auto") return initial_filter_params(traces, soc0, cell);
  const ModelFile f = model_from_json(read_text(init));
  if (const auto* p = std::get_if<FilterStateParams>(&f.model)) return *p;
  throw FamilyMismatchError("fit.init: parameter file is not a filter_state model");
}

struct LevelBin {
  const char* name;
  double lo_c;
  double hi_c;
};

// Residual breakdown by current level, in C-rate multiples.
constexpr LevelBin kLevels[] = {{"rest", 0.0, 0.05},
                                {"0.05-1.5C", 0.05, 1.5},
                                {"1.5-3C", 1.5, 3.0},
                                {">3C", 3.0, std::numeric_limits<double>::infinity()}};

}  // namespace

json cmd_simulate(const RunConfig& cfg) {
  Outputs out = outputs_for(cfg);
  const CellParams cell = cfg.cell();
  const ProfileSpec spec = cfg.profile();
  const PlantConfig pc = plant_config(cfg, spec);
  Trace profile;
  try {
    profile = gen_profile(spec, cell);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const PlantOutput plant = plant_simulate(profile, pc);
  const bool noisy = cfg.flag("sensor", "enabled");
  const Trace measured = noisy ? apply_sensor(plant.truth, cfg.sensor(), sensor_seed(cfg.seed())) : plant.truth;

  write_trace_csv(out.add("trace.csv"), measured);
  if (cfg.flag("simulate", "write_truth_trace")) write_trace_csv(out.add("truth.csv"), plant.truth);
  CsvTable soc{{"time_s", "soc"}, {{}, plant.soc}};
  for (const Sample& s : plant.truth.samples) soc.columns[0].push_back(s.time_s);
  write_csv(out.add("soc.csv"), soc);

  bool discharge = false, charge = false;
  for (const Sample& s : profile.samples) {
    discharge = discharge || s.current_a > 0.0;
    charge = charge || s.current_a < 0.0;
  }
  return finish(json{{"command", "simulate"},
                     {"samples", measured.size()},
                     {"profile", to_string(spec.kind)},
                     {"truth_family", family_name(pc.truth_model)},
                     {"sensor_applied", noisy},
                     {"has_discharge", discharge},
                     {"has_charge", charge},
                     {"soc_first", plant.soc.empty() ? 0.0 : plant.soc.front()},
                     {"soc_last", plant.soc.empty() ? 0.0 : plant.soc.back()}},
                out);
}

json cmd_fit(const RunConfig& cfg) {
  Outputs out = outputs_for(cfg);
  const CellParams cell = cfg.cell();
  const std::vector<Trace> traces = read_traces(cfg, "fit", "input");
  for (const Trace& t : traces) check_period(t, cell, "fit");
  const std::vector<double> soc0 = per_trace_soc0(cfg, "fit", traces.size());
  const std::string family = cfg.text("fit", "family");
  json report{{"command", "fit"}, {"family", family}, {"traces", traces.size()}};

  if (family == "combined") {
    const SocBand band{cfg.number("fit", "band_lo"), cfg.number("fit", "band_hi")};
    Regressor all;
    all.rows.resize(0, 7);
    for (std::size_t t = 0; t < traces.size(); ++t) {
      const double s0 = soc0[soc0.size() == 1 ? 0 : t];
      const auto socs = soc_values(soc_trajectory(traces[t], Soc{s0, false}, cell));
      Regressor r;
      try {
        r = build_regressor(traces[t], socs, band);
      } catch (const EmptyRegressorError&) {
        all.excluded += traces[t].size();
        continue;
      }
      const Eigen::Index old = all.rows.rows();
      all.rows.conservativeResize(old + r.rows.rows(), 7);
      all.rows.bottomRows(r.rows.rows()) = r.rows;
      all.targets.conservativeResize(old + r.targets.size());
      all.targets.tail(r.targets.size()) = r.targets;
      all.excluded += r.excluded;
    }
    if (all.rows.rows() == 0) throw EmptyRegressorError("fit: every sample lies outside the SOC band");
    LeastSquaresOptions opt;
    opt.max_condition = cfg.number("fit", "max_condition");
    const LeastSquaresFit fit = fit_least_squares(all, opt);
    write_text(out.add("params.json"), model_to_json(fit.params, cell));
    report["residual_rms_v"] = fit.residual_rms_v;
    report["condition"] = fit.condition;
    report["rows_used"] = fit.rows_used;
    report["rows_excluded"] = fit.rows_excluded;
  } else if (family == "filter_state") {
    const FilterStateParams init = filter_init(cfg, traces, soc0, cell);
    const FilterIdentResult r = identify_filter(cfg, traces, soc0, cell, init);
    write_text(out.add("params.json"), model_to_json(r.params, cell));
    report["ekf"] = filter_report_json(r.report);
  } else if (family == "scheduled") {
    const FilterStateParams init = filter_init(cfg, traces, soc0, cell);
    ScheduledParams bins;
    for (double edge : cfg.numbers("fit", "bin_edges_c")) bins.bins.push_back({edge * cell.one_c_amps(), init});
    bins.bins.push_back({std::numeric_limits<double>::infinity(), init});
    try {
      bins.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("fit.bin_edges_c: ") + e.what());
    }
    const double p0_rel = cfg.number("fit", "p0_rel");
    const double r = cfg.number("fit", "r_meas");
    const EkfState state = p0_rel > 0.0
                               ? EkfState::make(init.w, scaled_covariance_diagonal(init.w, p0_rel), r)
                               : EkfState::make(init.w, cfg.number("fit", "p0"), r);
    FilterIdentOptions opt;
    opt.passes = static_cast<int>(cfg.integer("fit", "passes"));
    opt.soc0 = soc0;
    const ScheduleFit fit = fit_scheduled(traces, bins, state, cell, opt);
    write_text(out.add("params.json"), model_to_json(fit.params, cell));
    json bins_report = json::array();
    for (std::size_t b = 0; b < fit.reports.size(); ++b) {
      json j = filter_report_json(fit.reports[b]);
      j["upper_a"] = std::isinf(fit.params.bins[b].upper_a) ? json(nullptr) : json(fit.params.bins[b].upper_a);
      bins_report.push_back(j);
    }
    report["bins"] = bins_report;
  } else if (family == "rbf") {
    const std::vector<double> sizes = cfg.numbers("fit", "n_kernels");
    if (sizes.empty()) throw ConfigError("fit.n_kernels: no kernel count given");
    RbfInitOptions io;
    io.layout = parse_layout(cfg.texts("fit", "rbf_layout"));
    io.width_scale = cfg.number("fit", "width_scale");
    io.seed = cfg.seed();
    std::optional<FilterStateParams> state_filter;
    const std::string sf = cfg.text("fit", "state_filter");
    if (sf == "fit") {
      state_filter = identify_filter(cfg, traces, soc0, cell, filter_init(cfg, traces, soc0, cell)).params;
    } else if (sf != "none") {
      const ModelFile f = model_from_json(read_text(sf));
      const auto* p = std::get_if<FilterStateParams>(&f.model);
      if (!p) throw FamilyMismatchError("fit.state_filter: parameter file is not a filter_state model");
      state_filter = *p;
    }
    json fits = json::array();
    for (double n : sizes) {
      if (n < 1 || n != std::floor(n)) throw ConfigError("fit.n_kernels: counts must be positive integers");
      io.n_kernels = static_cast<Eigen::Index>(n);
      RbfParams init;
      try {
        init = init_rbf(traces, soc0, cell, io, state_filter);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      const RbfFit fit = ekf_identify_rbf(traces, soc0, init, cell, rbf_train_options(cfg, "fit"));
      const std::string name =
          sizes.size() == 1 ? "params.json" : "params_rbf_" + std::to_string(io.n_kernels) + ".json";
      write_text(out.add(name), model_to_json(fit.params, cell));
      fits.push_back(json{{"n_kernels", io.n_kernels},
                          {"params_file", name},
                          {"pass_innovation_rms_v", fit.report.pass_innovation_rms_v},
                          {"final_innovation_rms_v", fit.report.final_innovation_rms_v}});
    }
    report["rbf"] = fits;
  } else {
    throw ConfigError("fit.family must be combined, filter_state, rbf or scheduled; got '" + family + "'");
  }
  out.json_file("fit_report.json", report);
  return finish(report, out);
}

json cmd_validate(const RunConfig& cfg) {
  Outputs out = outputs_for(cfg);
  const std::string params_path = cfg.text("validate", "params");
  const std::string params_text = read_text(params_path);
  const ModelFile mf = model_from_json(params_text);
  const Trace trace = read_trace_csv(cfg.text("validate", "input"));
  check_period(trace, mf.cell, "validate");
  if (const auto* rbf = std::get_if<RbfParams>(&mf.model)) {
    if (rbf->uses_previous_voltage() && !std::isfinite(trace.samples.front().voltage_v))
      throw FamilyMismatchError("validate: RBF model needs a finite first voltage to seed its feedback");
  }
  SimulationInit init;
  init.soc0 = cfg.number("validate", "soc0");
  const SimulationResult sim = simulate(mf.model, trace, mf.cell, init);

  CsvTable residuals{{"time_s", "residual_v"}, {{}, {}}};
  CsvTable overlay{{"time_s", "v_true", "v_pred"}, {{}, {}, {}}};
  double sum_sq = 0.0, max_abs = 0.0;
  std::size_t used = 0;
  std::vector<double> level_sq(std::size(kLevels), 0.0);
  std::vector<std::size_t> level_n(std::size(kLevels), 0);
  for (std::size_t k = 0; k < trace.size(); ++k) {
    const Sample& s = trace.samples[k];
    overlay.columns[0].push_back(s.time_s);
    overlay.columns[1].push_back(s.voltage_v);
    overlay.columns[2].push_back(sim.voltage[k]);
    if (!std::isfinite(s.voltage_v)) continue;
    const double e = s.voltage_v - sim.voltage[k];
    residuals.columns[0].push_back(s.time_s);
    residuals.columns[1].push_back(e);
    sum_sq += e * e;
    max_abs = std::max(max_abs, std::abs(e));
    ++used;
    const double rate = std::abs(s.current_a) / mf.cell.one_c_amps();
    for (std::size_t b = 0; b < std::size(kLevels); ++b) {
      if (rate >= kLevels[b].lo_c && rate < kLevels[b].hi_c) {
        level_sq[b] += e * e;
        ++level_n[b];
      }
    }
  }
  json segments = json::array();
  for (std::size_t b = 0; b < std::size(kLevels); ++b) {
    if (level_n[b] == 0) continue;
    segments.push_back(json{{"level", kLevels[b].name},
                            {"samples", level_n[b]},
                            {"rms_mv", 1e3 * std::sqrt(level_sq[b] / double(level_n[b]))}});
  }
  const json metrics{{"family", family_name(mf.model)},
                     {"params_file", params_path},
                     {"params_hash", hex64(fnv1a64(params_text))},
                     {"samples", used},
                     {"samples_skipped", trace.size() - used},
                     {"rms_mv", used ? 1e3 * std::sqrt(sum_sq / double(used)) : 0.0},
                     {"max_abs_mv", 1e3 * max_abs},
                     {"segments", segments}};
  out.json_file("metrics.json", metrics);
  write_csv(out.add("residuals.csv"), residuals);
  write_csv(out.add("overlay.csv"), overlay);
  json summary = metrics;
  summary["command"] = "validate";
  return finish(summary, out);
}

json cmd_soc(const RunConfig& cfg) {
  Outputs out = outputs_for(cfg);
  const ModelFile mf = model_from_json(read_text(cfg.text("soc", "params")));
  SocModel model;
  double w7 = 0.0;
  if (const auto* p = std::get_if<FilterStateParams>(&mf.model)) {
    model = *p;
    w7 = std::abs((*p)(7));
  } else if (const auto* s = std::get_if<ScheduledParams>(&mf.model)) {
    model = *s;
    for (const ScheduleBin& b : s->bins) w7 = std::max(w7, std::abs(b.params(7)));
  } else {
    throw FamilyMismatchError("soc: estimator needs a filter_state or scheduled model, got " +
                              family_name(mf.model));
  }
  const Trace trace = read_trace_csv(cfg.text("soc", "input"));
  check_period(trace, mf.cell, "soc");
  const CellParams& cell = mf.cell;
  const SensorConfig sensor = cfg.sensor();

  // Current-sensor noise enters SOC (and x4) as a random walk and the output
  // through the series-resistance term; voltage noise and quantization add to
  // the measurement variance.
  const double dt_h = cell.sample_period_h;
  const double step_sigma = sensor.i_noise_sigma * dt_h / cell.nominal_capacity_ah;
  const std::string q_soc_text = cfg.text("soc", "q_soc");
  const double q_soc = q_soc_text == "auto" ? step_sigma * step_sigma / dt_h : cfg.number("soc", "q_soc");
  const double q_filter = cfg.number("soc", "q_filter");
  const std::string r_text = cfg.text("soc", "r_meas");
  const double r_auto = sensor.v_noise_sigma * sensor.v_noise_sigma +
                        sensor.quantization_rms() * sensor.quantization_rms() +
                        (w7 * step_sigma) * (w7 * step_sigma);

  SocEkfConfig ekf;
  ekf.q_proc << q_soc, q_filter, q_filter, q_filter + q_soc;
  ekf.r_meas = r_text == "auto" ? r_auto : cfg.number("soc", "r_meas");
  ekf.x0 << cfg.number("soc", "soc0"), 0.0, 0.0, 0.0;
  const double p_filter = cfg.number("soc", "p0_filter");
  ekf.p0 = Eigen::Vector4d(cfg.number("soc", "p0_soc"), p_filter, p_filter, p_filter).asDiagonal();
  try {
    ekf.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  std::optional<std::vector<double>> truth;
  const std::string truth_path = cfg.text("soc", "truth_soc");
  if (!truth_path.empty()) {
    truth = read_csv(truth_path).column("soc");
    if (truth->size() != trace.size())
      throw FamilyMismatchError("soc: truth SOC series is not aligned with the trace");
  }
  const SocRun run = truth ? soc_ekf_run(trace, model, cell, ekf, std::span<const double>(*truth))
                           : soc_ekf_run(trace, model, cell, ekf);

  CsvTable series{{"time_s", "soc", "sigma", "innovation_v"}, {{}, {}, {}, {}}};
  for (std::size_t k = 0; k < trace.size(); ++k) {
    series.columns[0].push_back(trace.samples[k].time_s);
    series.columns[1].push_back(run.estimates[k].soc);
    series.columns[2].push_back(run.estimates[k].sigma);
    series.columns[3].push_back(run.estimates[k].innovation_v);
  }
  write_csv(out.add("soc_estimates.csv"), series);
  json summary{{"samples", run.summary.samples},
               {"skipped_updates", run.summary.skipped},
               {"final_soc", run.estimates.empty() ? 0.0 : run.estimates.back().soc},
               {"final_sigma", run.estimates.empty() ? 0.0 : run.estimates.back().sigma},
               {"r_meas", ekf.r_meas},
               {"q_proc", vec_json(ekf.q_proc)},
               {"has_truth", run.summary.has_truth}};
  if (run.summary.has_truth) {
    summary["rms_soc_error"] = run.summary.rms_soc_error;
    summary["max_abs_soc_error"] = run.summary.max_abs_soc_error;
    summary["final_soc_error"] = run.summary.final_soc_error;
    summary["coverage_3sigma"] = run.summary.coverage_3sigma;
  }
  out.json_file("summary.json", summary);
  summary["command"] = "soc";
  return finish(summary, out);
}

json cmd_sweep_kernels(const RunConfig& cfg) {
  Outputs out = outputs_for(cfg);
  const CellParams cell = cfg.cell();
  const std::vector<double> sizes = cfg.numbers("sweep-kernels", "n_kernels");
  if (sizes.empty()) throw ConfigError("sweep-kernels.n_kernels: no kernel count given");
  const double soc_start = cfg.number("sweep-kernels", "soc_start");

  std::vector<Trace> train;
  Trace holdout;
  std::optional<FilterStateParams> plant_filter;
  const bool from_files = !cfg.text("sweep-kernels", "train").empty();
  if (from_files) {
    train = read_traces(cfg, "sweep-kernels", "train");
    const auto held = cfg.texts("sweep-kernels", "validate");
    if (held.size() != 1) throw ConfigError("sweep-kernels.validate: give exactly one held-out trace");
    holdout = read_trace_csv(held.front());
  } else {
    ProfileSpec spec = cfg.profile();
    spec.kind = ProfileKind::DriveCycle;
    spec.soc_start = soc_start;
    spec.soc_end = cfg.number("sweep-kernels", "soc_end");
    const PlantConfig pc = plant_config(cfg, spec);
    if (const auto* p = std::get_if<FilterStateParams>(&pc.truth_model)) plant_filter = *p;
    const bool noisy = cfg.flag("sensor", "enabled");
    const SensorConfig sensor = cfg.sensor();
    const long n_train = cfg.integer("sweep-kernels", "train_seeds");
    if (n_train < 1) throw ConfigError("sweep-kernels.train_seeds must be >= 1");
    try {
      for (long s = 0; s < n_train; ++s) {
        spec.seed = cfg.seed() + static_cast<std::uint64_t>(s);
        const PlantOutput o = plant_simulate(gen_drive_cycle(spec, cell), pc);
        train.push_back(noisy ? apply_sensor(o.truth, sensor, sensor_seed(spec.seed)) : o.truth);
      }
      // The held-out trace is scored against exact plant voltage.
      spec.seed = cfg.seed() + static_cast<std::uint64_t>(cfg.integer("sweep-kernels", "holdout_seed_offset"));
      holdout = plant_simulate(gen_drive_cycle(spec, cell), pc).truth;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  for (const Trace& t : train) check_period(t, cell, "sweep-kernels");
  check_period(holdout, cell, "sweep-kernels");
  const std::vector<double> soc0{soc_start};

  RbfInitOptions io;
  io.layout = parse_layout(cfg.texts("sweep-kernels", "layout"));
  io.width_scale = cfg.number("sweep-kernels", "width_scale");
  io.seed = cfg.seed();
  std::optional<FilterStateParams> state_filter;
  const std::string sf = cfg.text("sweep-kernels", "state_filter");
  bool needs_filter = false;
  for (RbfInput in : io.layout)
    needs_filter = needs_filter || in == RbfInput::FilterX2 || in == RbfInput::FilterX3 || in == RbfInput::FilterX4;
  if (needs_filter) {
    if (sf == "plant") {
      if (!plant_filter)
        throw ConfigError("sweep-kernels.state_filter = plant needs a generated dataset with a filter_state truth");
      state_filter = plant_filter;
    } else if (sf == "none") {
      throw ConfigError("sweep-kernels: the input layout uses filter states but state_filter = none");
    } else {
      const ModelFile f = model_from_json(read_text(sf));
      const auto* p = std::get_if<FilterStateParams>(&f.model);
      if (!p) throw FamilyMismatchError("sweep-kernels.state_filter: not a filter_state parameter file");
      state_filter = *p;
    }
  }

  CsvTable table{{"n_kernels", "rms_mv"}, {{}, {}}};
  json rows = json::array();
  for (double n : sizes) {
    if (n < 1 || n != std::floor(n)) throw ConfigError("sweep-kernels.n_kernels: counts must be positive integers");
    io.n_kernels = static_cast<Eigen::Index>(n);
    RbfParams init;
    try {
      init = init_rbf(train, soc0, cell, io, state_filter);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    const RbfFit fit = ekf_identify_rbf(train, soc0, init, cell, rbf_train_options(cfg, "sweep-kernels"));
    SimulationInit si;
    si.soc0 = soc_start;
    const SimulationResult sim = simulate(fit.params, holdout, cell, si);
    double sum_sq = 0.0;
    std::size_t used = 0;
    for (std::size_t k = 0; k < holdout.size(); ++k) {
      if (!std::isfinite(holdout.samples[k].voltage_v)) continue;
      const double e = holdout.samples[k].voltage_v - sim.voltage[k];
      sum_sq += e * e;
      ++used;
    }
    const double rms_mv = used ? 1e3 * std::sqrt(sum_sq / double(used)) : 0.0;
    table.columns[0].push_back(n);
    table.columns[1].push_back(rms_mv);
    const std::string name = "params_rbf_" + std::to_string(io.n_kernels) + ".json";
    write_text(out.add(name), model_to_json(fit.params, cell));
    rows.push_back(json{{"n_kernels", io.n_kernels},
                        {"rms_mv", rms_mv},
                        {"train_innovation_rms_v", fit.report.final_innovation_rms_v},
                        {"params_file", name}});
  }
  write_csv(out.add("sweep.csv"), table);
  std::size_t train_samples = 0;
  for (const Trace& t : train) train_samples += t.size();
  const json report{{"rows", rows},
                    {"train_traces", train.size()},
                    {"train_samples", train_samples},
                    {"holdout_samples", holdout.size()},
                    {"from_files", from_files}};
  out.json_file("sweep_report.json", report);
  json summary = report;
  summary["command"] = "sweep-kernels";
  return finish(summary, out);
}

json run_command(const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.out_dir(), ec);
  if (ec) throw IoError("cannot create output directory " + cfg.out_dir().string() + ": " + ec.message());
  write_text(cfg.out_dir() / "config.ini", "# config_hash = " + cfg.hash() + "\n" + cfg.resolved_text());

  json summary;
  const std::string& c = cfg.command();
  if (c == "simulate") summary = cmd_simulate(cfg);
  else if (c == "fit") summary = cmd_fit(cfg);
  else if (c == "validate") summary = cmd_validate(cfg);
  else if (c == "soc") summary = cmd_soc(cfg);
  else if (c == "sweep-kernels") summary = cmd_sweep_kernels(cfg);
  else throw ConfigError("unknown command '" + c + "'");

  json files = json::array();
  files.push_back(json{{"file", "config.ini"}, {"fnv1a64", hex64(fnv1a64(read_text(cfg.out_dir() / "config.ini")))}});
  for (const auto& f : summary.at("outputs").get<std::vector<std::string>>())
    files.push_back(json{{"file", f}, {"fnv1a64", hex64(fnv1a64(read_text(cfg.out_dir() / f)))}});
  const json manifest{{"command", c}, {"seed", cfg.seed()}, {"config_hash", cfg.hash()}, {"files", files}};
  write_text(cfg.out_dir() / "manifest.json", manifest.dump(2) + "\n");
  return summary;
}

int exit_code_for_current_exception() {
  try {
    throw;
  } catch (const ConfigError&) {
    return kExitConfig;
  } catch (const IoError&) {
    return kExitIo;
  } catch (const RankDeficiencyError&) {
    return kExitRankDeficient;
  } catch (const EmptyRegressorError&) {
    return kExitRankDeficient;
  } catch (const CovarianceBlowUpError&) {
    return kExitCovarianceBlowUp;
  } catch (const EmptyBinError&) {
    return kExitEmptyBin;
  } catch (const ModelDomainError&) {
    return kExitDomain;
  } catch (const FamilyMismatchError&) {
    return kExitFamilyMismatch;
  } catch (const std::invalid_argument&) {
    return kExitConfig;
  } catch (...) {
    return kExitUsage;
  }
}

}  // namespace cellmodel
