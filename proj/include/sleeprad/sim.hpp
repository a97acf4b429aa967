#pragma once

// Synthetic subject-nights with known ground truth: hypnogram, planted
// respiratory events, and the radar IQ / PPG / SpO2 streams rendered from them.

#include <array>
#include <complex>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sleeprad/types.hpp"

namespace sleeprad::sim {

struct SubjectProfile {
  std::string subject_id;
  double age_years = 8.0;
  Severity severity_class = Severity::Healthy;
  double target_oahi = 0.0;
  std::uint64_t seed = 0;

  /// Throws ConfigError when the target falls outside the severity band or
  /// the age is outside 1-18 years.
  void validate() const;
};

/// OAHI band (lo, hi] of a severity grade; Healthy is [0, 1].
std::pair<double, double> severity_band(Severity s);

/// Profile with age and target OAHI drawn from `seed`. Targets stay clear of
/// the band edges so the planted grade is unambiguous.
SubjectProfile make_profile(std::string subject_id, Severity severity, std::uint64_t seed);

/// Stage-dependent vital-sign defaults.
struct StageVitals {
  double chest_amp_mm = 2.5;
  double resp_rate_bpm = 18.0;
  double resp_rate_variability = 0.05;  ///< relative sd of the slow rate wander
  double amp_variability = 0.08;        ///< relative sd of the breath-depth wander
  double pulse_rate_bpm = 85.0;
  double pulse_variability = 0.02;      ///< relative sd of the slow pulse wander
  double rsa_bpm = 3.0;                 ///< respiratory sinus arrhythmia amplitude
  double lf_bpm = 2.0;                  ///< 0.1 Hz pulse modulation amplitude
  double movement_rate_per_h = 2.0;
};

struct PhysioConfig {
  double radar_wavelength_m = 0.005;
  std::array<StageVitals, kNumStages> vitals = default_vitals();
  double cardiac_amp_mm = 0.08;
  double movement_amp_mm = 0.9;
  double posture_shift_mm = 3.0;
  double desat_lag_s = 15.0;
  double desat_recovery_tau_s = 20.0;
  double spo2_baseline_pct = 97.0;
  double spo2_wander_pct = 0.2;
  /// Residual paradoxical effort during obstructive apnea, fraction of depth.
  double paradox_effort = 0.7;
  double radar_fs_hz = 50.0;
  double ppg_fs_hz = 50.0;
  double spo2_fs_hz = 1.0;
  /// Additive complex noise; +infinity renders noiseless IQ.
  double radar_snr_db = std::numeric_limits<double>::infinity();

  static std::array<StageVitals, kNumStages> default_vitals();
  const StageVitals& at(Stage s) const { return vitals[static_cast<std::size_t>(s)]; }
  /// Mean breathing period over the sleep stages, seconds.
  double baseline_breath_period_s() const;
  /// Throws ConfigError for non-positive rates, amplitudes or wavelength.
  void validate() const;
};

/// Sleep-onset Wake run followed by a first-order Markov chain over the five
/// stages. Throws ConfigError unless 1 <= duration_h <= 12.
Hypnogram generate_hypnogram(const SubjectProfile& profile, double duration_h,
                             double epoch_len_s = 30.0);

/// Places obstructive-type events at target_oahi x TST plus sporadic central
/// apneas, inside sleep epochs only, sorted and non-overlapping. Throws
/// ConfigError when sleep time cannot host the requested density.
std::vector<RespiratoryEvent> plant_events(const Hypnogram& hyp, const SubjectProfile& profile,
                                           const PhysioConfig& cfg = {});

/// Chest displacement in mm at the radar sample rate (the quantity the radar
/// encodes into phase).
std::vector<double> chest_displacement(const Hypnogram& hyp,
                                       std::span<const RespiratoryEvent> events,
                                       const PhysioConfig& cfg, std::uint64_t seed);

/// exp(j(phi0 + 4 pi d / lambda)) plus complex noise at cfg.radar_snr_db.
std::vector<std::complex<float>> displacement_to_iq(std::span<const double> displacement_mm,
                                                    const PhysioConfig& cfg, std::uint64_t seed);

std::vector<std::complex<float>> synthesize_radar(const Hypnogram& hyp,
                                                  std::span<const RespiratoryEvent> events,
                                                  const PhysioConfig& cfg, std::uint64_t seed);

struct PpgSignals {
  std::vector<double> ppg;   ///< at cfg.ppg_fs_hz, arbitrary units
  std::vector<double> spo2;  ///< percent at cfg.spo2_fs_hz
};

PpgSignals synthesize_ppg(const Hypnogram& hyp, std::span<const RespiratoryEvent> events,
                          const PhysioConfig& cfg, std::uint64_t seed);

/// Renders a pulse waveform from an explicit instantaneous-rate function;
/// exposed for detector tests.
std::vector<double> render_pulse_wave(std::span<const double> rate_bpm, double fs);

struct RecordBundle {
  SubjectProfile profile;
  double radar_wavelength_m = 0.005;
  std::vector<std::complex<float>> radar_iq;
  double radar_fs_hz = 50.0;
  std::vector<double> ppg;
  double ppg_fs_hz = 50.0;
  std::vector<double> spo2;
  double spo2_fs_hz = 1.0;
  Hypnogram truth_hypnogram;
  std::vector<RespiratoryEvent> truth_events;

  double duration_s() const { return truth_hypnogram.duration_s(); }
  /// Throws DataError when channel durations disagree by more than 1 s, SpO2
  /// leaves [70, 100] or a sample rate is not positive.
  void validate() const;
};

RecordBundle simulate_record(const SubjectProfile& profile, double duration_h,
                             const PhysioConfig& cfg = {});

}  // namespace sleeprad::sim
