#include "cellmodel/plant.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace cellmodel {

namespace {

constexpr double kRateEnvelopeC = 25.0;
// Guards against specs whose window would need an absurd number of samples.
constexpr std::size_t kMaxProfileSamples = 50'000'000;

void append(std::vector<double>& out, double current, long count) {
  if (count > 0) out.insert(out.end(), static_cast<std::size_t>(count), current);
}

long seconds_to_samples(double seconds, const CellParams& cell) {
  return std::lround(seconds / cell.sample_period_s());
}

Trace current_trace(const std::vector<double>& current, const CellParams& cell,
                    const ProfileSpec& spec) {
  const std::vector<double> zeros(current.size(), 0.0);
  Trace t = make_trace(current, zeros, cell.sample_period_s());
  t.meta["profile"] = to_string(spec.kind);
  t.meta["rate_c"] = std::to_string(spec.rate_c);
  if (spec.kind == ProfileKind::DriveCycle) t.meta["seed"] = std::to_string(spec.seed);
  return t;
}

}  // namespace

std::string to_string(ProfileKind kind) {
  switch (kind) {
    case ProfileKind::Pulse: return "pulse";
    case ProfileKind::DriveCycle: return "drive_cycle";
    case ProfileKind::Constant: return "constant";
    case ProfileKind::Rest: return "rest";
  }
  return "unknown";
}

ProfileKind profile_kind_from_string(const std::string& name) {
  if (name == "pulse") return ProfileKind::Pulse;
  if (name == "drive_cycle") return ProfileKind::DriveCycle;
  if (name == "constant") return ProfileKind::Constant;
  if (name == "rest") return ProfileKind::Rest;
  throw std::invalid_argument("unknown profile kind '" + name + "'");
}

void ProfileSpec::validate() const {
  if (!(std::abs(rate_c) <= kRateEnvelopeC))
    throw std::invalid_argument("ProfileSpec: |rate_c| must not exceed 25");
  if (!(pulse_s > 0.0) || !(rest_s >= 0.0))
    throw std::invalid_argument("ProfileSpec: pulse_s must be > 0 and rest_s >= 0");
  if (!(soc_start >= 0.0 && soc_start <= 1.0 && soc_end >= 0.0 && soc_end <= 1.0))
    throw std::invalid_argument("ProfileSpec: SOC window must lie in [0, 1]");
  if (!(duration_s >= 0.0)) throw std::invalid_argument("ProfileSpec: duration_s must be >= 0");
  if (kind == ProfileKind::DriveCycle) {
    if (!(repetition_s > 0.0 && segment_min_s > 0.0 && segment_max_s >= segment_min_s))
      throw std::invalid_argument("ProfileSpec: invalid drive-cycle segment lengths");
    if (!(std_c >= 0.0) || !(std::abs(mean_c) <= kRateEnvelopeC))
      throw std::invalid_argument("ProfileSpec: invalid drive-cycle amplitude distribution");
  }
}

Trace gen_pulse_profile(const ProfileSpec& spec, const CellParams& cell) {
  if (spec.kind != ProfileKind::Pulse)
    throw std::invalid_argument("gen_pulse_profile: spec is not a pulse profile");
  spec.validate();
  cell.validate();
  if (!(spec.rate_c > 0.0))
    throw std::invalid_argument("gen_pulse_profile: rate_c must be positive");
  if (!(spec.block_soc >= 0.0))
    throw std::invalid_argument("gen_pulse_profile: block_soc must be >= 0");

  const double amps = spec.rate_c * cell.one_c_amps();
  const double per_sample = amps * cell.sample_period_h / cell.nominal_capacity_ah;
  const long pulse_n = seconds_to_samples(spec.pulse_s, cell);
  const long rest_n = seconds_to_samples(spec.rest_s, cell);
  const long block_nominal = std::lround(spec.block_soc / per_sample);
  const double pulse_drop = per_sample * double(pulse_n);

  if (!(spec.soc_start - spec.soc_end > pulse_drop)) {
    throw std::invalid_argument(
        "gen_pulse_profile: infeasible SOC window; start must exceed end by more than one "
        "discharge pulse");
  }

  std::vector<double> current;
  double soc = spec.soc_start;
  // The discharge pulse of each cycle must never cross soc_end, so the block
  // discharge stops one pulse early on the final cycle.
  while (true) {
    const double room = soc - spec.soc_end - pulse_drop;
    const long block_n =
        std::min(block_nominal, static_cast<long>(std::floor(room / per_sample + 1e-9)));
    if (block_n <= 0 && !current.empty()) break;
    const long n = std::max(block_n, 0L);
    append(current, amps, n);
    append(current, 0.0, rest_n);
    append(current, amps, pulse_n);
    append(current, 0.0, rest_n);
    append(current, -amps, pulse_n);
    append(current, 0.0, rest_n);
    soc -= per_sample * double(n + pulse_n);
    soc += cell.eta_charge * per_sample * double(pulse_n);
    if (current.size() > kMaxProfileSamples)
      throw std::invalid_argument("gen_pulse_profile: SOC window needs too many samples");
    if (block_n < block_nominal) break;
  }
  return current_trace(current, cell, spec);
}

Trace gen_drive_cycle(const ProfileSpec& spec, const CellParams& cell) {
  if (spec.kind != ProfileKind::DriveCycle)
    throw std::invalid_argument("gen_drive_cycle: spec is not a drive-cycle profile");
  spec.validate();
  cell.validate();

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> amplitude(spec.mean_c, spec.std_c);
  const long seg_min = std::max(1L, seconds_to_samples(spec.segment_min_s, cell));
  const long seg_max = std::max(seg_min, seconds_to_samples(spec.segment_max_s, cell));
  std::uniform_int_distribution<long> seg_len(seg_min, seg_max);
  const auto rep_n = static_cast<std::size_t>(std::max(1L, seconds_to_samples(spec.repetition_s, cell)));
  const double cap = kRateEnvelopeC * cell.one_c_amps();

  std::vector<double> current;
  Soc soc{spec.soc_start, false};
  std::vector<double> raw(rep_n);
  std::vector<double> rep(rep_n);
  while (soc.value > spec.soc_end) {
    // Redraw until the repetition both discharges on net and contains regen.
    double net = 0.0;
    bool regen = false;
    for (int attempt = 0; attempt < 1000; ++attempt) {
      std::size_t k = 0;
      while (k < rep_n) {
        const auto len = static_cast<std::size_t>(seg_len(rng));
        const double a = amplitude(rng) * cell.one_c_amps();
        for (std::size_t j = 0; j < len && k < rep_n; ++j, ++k) raw[k] = a;
      }
      // Three-tap moving average with zero padding.
      for (std::size_t j = 0; j < rep_n; ++j) {
        const double left = j > 0 ? raw[j - 1] : 0.0;
        const double right = j + 1 < rep_n ? raw[j + 1] : 0.0;
        rep[j] = std::clamp((left + raw[j] + right) / 3.0, -cap, cap);
      }
      net = 0.0;
      regen = false;
      for (double i : rep) {
        net += coulombic_efficiency(i, cell) * i;
        regen = regen || i < 0.0;
      }
      if (net > 0.0 && regen) break;
    }
    if (!(net > 0.0))
      throw std::invalid_argument("gen_drive_cycle: amplitude distribution never discharges");
    for (double i : rep) {
      current.push_back(i);
      soc = soc_step(soc, i, cell);
      if (soc.value <= spec.soc_end) break;
    }
    if (current.size() > kMaxProfileSamples)
      throw std::invalid_argument("gen_drive_cycle: SOC window needs too many samples");
  }
  return current_trace(current, cell, spec);
}

Trace gen_profile(const ProfileSpec& spec, const CellParams& cell) {
  switch (spec.kind) {
    case ProfileKind::Pulse: return gen_pulse_profile(spec, cell);
    case ProfileKind::DriveCycle: return gen_drive_cycle(spec, cell);
    case ProfileKind::Constant:
    case ProfileKind::Rest: {
      spec.validate();
      cell.validate();
      const double amps = spec.kind == ProfileKind::Rest ? 0.0 : spec.rate_c * cell.one_c_amps();
      std::vector<double> current;
      append(current, amps, seconds_to_samples(spec.duration_s, cell));
      return current_trace(current, cell, spec);
    }
  }
  throw std::invalid_argument("gen_profile: unknown profile kind");
}

FilterStateParams default_truth_params() {
  FilterStateParams p;
  // OCV(soc) = w6 + w8/(soc + w9) + w10*soc, pinned to 3.0 V and 4.2 V at the ends.
  const double w8 = -0.1;
  const double w9 = 0.3;
  const double w6 = 3.0 - w8 / w9;
  const double w10 = 4.2 - w6 - w8 / (1.0 + w9);
  p.w << 1e-6, 0.9995, -1e-6, 0.99, 0.002, w6, -144.0, w8, w9, w10, -0.5, -1.4;
  return p;
}

void PlantConfig::validate() const {
  cell.validate();
  if (!(soc0 >= 0.0 && soc0 <= 1.0)) throw std::invalid_argument("PlantConfig: soc0 must be in [0, 1]");
  std::visit(
      [](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, FilterStateParams>) {
          cellmodel::validate(m);
        } else {
          m.validate();
        }
      },
      truth_model);
}

PlantOutput plant_simulate(const Trace& profile, const PlantConfig& cfg) {
  cfg.validate();
  SimulationInit init;
  init.soc0 = cfg.soc0;
  const SimulationResult sim = simulate(cfg.truth_model, profile, cfg.cell, init);
  PlantOutput out;
  out.truth = profile;
  for (std::size_t k = 0; k < profile.size(); ++k) out.truth.samples[k].voltage_v = sim.voltage[k];
  out.truth.meta["truth_family"] = family_name(cfg.truth_model);
  out.soc = sim.soc;
  return out;
}

double SensorConfig::lsb() const { return adc_fullscale_v / std::ldexp(1.0, adc_bits); }

double SensorConfig::quantization_rms() const {
  return quantize ? lsb() / std::sqrt(12.0) : 0.0;
}

void SensorConfig::validate() const {
  if (adc_bits < 1 || adc_bits > 52) throw std::invalid_argument("SensorConfig: adc_bits must be in [1, 52]");
  if (!(v_noise_sigma >= 0.0) || !(i_noise_sigma >= 0.0))
    throw std::invalid_argument("SensorConfig: noise sigmas must be >= 0");
  if (!(adc_fullscale_v > 0.0)) throw std::invalid_argument("SensorConfig: adc_fullscale_v must be > 0");
  if (!std::isfinite(i_bias)) throw std::invalid_argument("SensorConfig: i_bias must be finite");
}

Trace apply_sensor(const Trace& truth, const SensorConfig& sensor, std::uint64_t seed) {
  sensor.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  const double lsb = sensor.lsb();
  const double max_code = std::ldexp(1.0, sensor.adc_bits) - 1.0;
  Trace out = truth;
  for (Sample& s : out.samples) {
    const double zi = unit(rng);
    const double zv = unit(rng);
    s.current_a += sensor.i_bias + sensor.i_noise_sigma * zi;
    double v = s.voltage_v + sensor.v_noise_sigma * zv;
    if (sensor.quantize && std::isfinite(v)) v = std::clamp(std::round(v / lsb), 0.0, max_code) * lsb;
    s.voltage_v = v;
  }
  out.meta["sensor_seed"] = std::to_string(seed);
  return out;
}

}  // namespace cellmodel
