// Synthetic reference cell: test-profile generators, a truth simulator and a
// sensor model with noise and ADC quantization.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cellmodel/core.hpp"
#include "cellmodel/models.hpp"

namespace cellmodel {

enum class ProfileKind { Pulse, DriveCycle, Constant, Rest };

std::string to_string(ProfileKind kind);
ProfileKind profile_kind_from_string(const std::string& name);

struct ProfileSpec {
  ProfileKind kind = ProfileKind::Pulse;
  /// C-rate multiple. Pulse and constant profiles discharge at +rate_c.
  double rate_c = 1.0;
  double pulse_s = 60.0;
  double rest_s = 300.0;
  /// SOC removed by the block discharge that opens every pulse cycle.
  double block_soc = 0.1;
  /// SOC window traversed by pulse and drive-cycle profiles.
  double soc_start = 1.0;
  double soc_end = 0.1;
  /// Length of constant and rest profiles.
  double duration_s = 3600.0;
  std::uint64_t seed = 1;

  // Drive-cycle shape: piecewise-constant segments with normally distributed
  // amplitude, lightly smoothed, repeated in fixed-length repetitions.
  double repetition_s = 600.0;
  double segment_min_s = 5.0;
  double segment_max_s = 40.0;
  double mean_c = 1.5;
  double std_c = 2.5;

  void validate() const;
};

/// Alternating block discharge / rest / discharge pulse / rest / charge pulse
/// / rest cycles that take SOC from soc_start down to soc_end.
/// Throws std::invalid_argument when the window cannot be traversed.
Trace gen_pulse_profile(const ProfileSpec& spec, const CellParams& cell);

/// Seeded dynamic profile with regen, capped at +-25C, net discharge in every
/// repetition, truncated once SOC reaches soc_end.
Trace gen_drive_cycle(const ProfileSpec& spec, const CellParams& cell);

/// Dispatches on spec.kind.
Trace gen_profile(const ProfileSpec& spec, const CellParams& cell);

/// Documented truth weights: OCV 3.0 V at SOC 0 rising to 4.2 V at SOC 1,
/// 5 mOhm series resistance, about 40 mV of 1C polarization relaxing over
/// roughly 100 s, and a slow hysteresis-like state that rests at zero when full.
FilterStateParams default_truth_params();

struct PlantConfig {
  CellModel truth_model = default_truth_params();
  CellParams cell{};
  std::uint64_t seed = 1;
  double soc0 = 1.0;

  void validate() const;
};

struct PlantOutput {
  Trace truth;               ///< profile currents with exact terminal voltage
  std::vector<double> soc;   ///< exact SOC per sample
};

PlantOutput plant_simulate(const Trace& profile, const PlantConfig& cfg);

struct SensorConfig {
  double v_noise_sigma = 1e-3;
  double i_noise_sigma = 0.1;
  double i_bias = 0.0;
  int adc_bits = 10;
  double adc_fullscale_v = 5.0;
  /// False models an ideal converter with unlimited resolution.
  bool quantize = true;

  double lsb() const;
  /// RMS of uniform quantization error, LSB/sqrt(12).
  double quantization_rms() const;
  void validate() const;
};

/// Adds bias and Gaussian noise to current and Gaussian noise to voltage,
/// then rounds voltage onto the ADC grid, saturating at the converter range.
Trace apply_sensor(const Trace& truth, const SensorConfig& sensor, std::uint64_t seed);

}  // namespace cellmodel
