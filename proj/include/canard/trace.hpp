#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "canard/integrator.hpp"

namespace canard {

struct SpikeTrain {
  std::vector<double> times;
  std::vector<double> voltages;
  /// Apex V minus the lowest V since the previous apex (or the trace start).
  std::vector<double> amplitudes;

  std::size_t size() const noexcept { return times.size(); }
  bool empty() const noexcept { return times.empty(); }
  /// Spikes with apex time in [t0, t1).
  SpikeTrain slice(double t0, double t1) const;
};

/// Spikes from the apex events `apex_event` of a trajectory.
SpikeTrain extract_spikes(const Trajectory& traj, std::size_t apex_event = 0, std::size_t var = 0);

struct TraceOptions {
  /// Inter-spike interval above which the cell is considered quiescent (ms).
  double quiescence_gap = 10.0;
  std::size_t min_burst_spikes = 3;
  /// Envelope maxima must stand out by this fraction of the envelope range.
  double prominence = 0.2;
  /// AM depth separating am_spiking from uniform_spiking (mV).
  double depth_threshold = 1.0;
  /// Envelope range below which a train counts as unmodulated (mV).
  double degenerate_depth = 0.1;
  std::size_t min_am_spikes = 20;
  double transient = 1000.0;
  double min_duration = 2000.0;
  /// Fraction of the post-transient window, taken from its end, over which
  /// continuous spiking is measured.
  double settled_fraction = 0.5;
};

struct Burst {
  double start = 0.0;
  double end = 0.0;
  std::size_t first = 0;
  std::size_t count = 0;
};

/// Maximal runs with ISI below the gap; runs shorter than the minimum are
/// dropped.
std::vector<Burst> segment_bursts(const SpikeTrain& train, double quiescence_gap = 10.0,
                                  std::size_t min_spikes = 3);

/// Interval from the end of each burst to the start of the next.
std::vector<double> interburst_intervals(const std::vector<Burst>& bursts);

struct AmSummary {
  std::size_t cycles = 0;
  /// Mean spacing of envelope maxima (ms), 0 with fewer than two maxima.
  double period = 0.0;
  /// Envelope peak-to-peak (mV).
  double depth = 0.0;
  bool modulated = false;
  std::vector<double> peak_times;
};

/// Indices of interior maxima with topographic prominence >= min_prominence.
std::vector<std::size_t> prominent_peaks(const std::vector<double>& y, double min_prominence);

/// Amplitude-envelope analysis of the spikes with apex in [t0, t1).
AmSummary am_cycles(const SpikeTrain& train, double t0, double t1, const TraceOptions& options = {});
/// Whole-train variant.
AmSummary am_cycles(const SpikeTrain& train, const TraceOptions& options = {});

enum class Regime { quiescent, bursting, mixed_burst_am, am_spiking, uniform_spiking };

std::string to_string(Regime r);
Regime regime_from_string(const std::string& s);

struct RegimeReport {
  Regime label = Regime::quiescent;
  double t0 = 0.0;
  double t1 = 0.0;
  std::size_t spikes = 0;
  std::vector<Burst> bursts;
  std::vector<double> interburst;
  /// Burst onset to next onset (ms).
  std::vector<double> onset_intervals;
  /// AM cycles inside each burst bounded by quiescence on both sides.
  std::vector<std::size_t> interburst_am;
  /// All AM cycles seen (bursts or continuous spiking).
  std::size_t am_count = 0;
  double am_period = 0.0;
  double am_depth = 0.0;
  /// Median over complete bursts of the ISI and amplitude at the envelope
  /// minimum (past the onset spikes) and at the last spike.
  double isi_first = 0.0;
  double isi_last = 0.0;
  double amp_first = 0.0;
  double amp_last = 0.0;
  double max_isi = 0.0;
};

RegimeReport classify_regime(const Trajectory& traj, const TraceOptions& options = {}, std::size_t apex_event = 0);
/// Same on an extracted train; [t0, t1] is the full trace span.
RegimeReport classify_regime(const SpikeTrain& train, double t0, double t1, const TraceOptions& options = {});

struct Quantization {
  double base = 0.0;
  double period = 0.0;
  std::vector<int> multiples;
  std::vector<double> residuals;
  /// max - min residual (ms).
  double spread = 0.0;
};

/// Fits intervals to base + k * T with T searched within +-20% of t_am.
Quantization interburst_quantization(const std::vector<double>& intervals, double t_am,
                                     std::size_t min_intervals = 3);

}  // namespace canard
