#include "canard/trace.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "canard/errors.hpp"

namespace canard {

SpikeTrain SpikeTrain::slice(double t0, double t1) const {
  SpikeTrain out;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] < t0 || times[i] >= t1) continue;
    out.times.push_back(times[i]);
    out.voltages.push_back(voltages[i]);
    out.amplitudes.push_back(amplitudes[i]);
  }
  return out;
}

SpikeTrain extract_spikes(const Trajectory& traj, std::size_t apex_event, std::size_t var) {
  SpikeTrain train;
  if (traj.size() == 0) return train;
  const auto& ts = traj.times();
  const auto v = static_cast<Eigen::Index>(var);
  std::size_t k = 0;
  double low = traj.value(0, var);
  for (const Event& e : traj.events) {
    if (e.spec != apex_event) continue;
    // Lowest V over stored states and interior dense samples up to the apex.
    for (; k < ts.size() && ts[k] <= e.t; ++k) {
      low = std::min(low, traj.value(k, var));
      if (traj.has_dense() && k + 1 < ts.size()) {
        const double t1 = std::min(ts[k + 1], e.t);
        for (int s = 1; s < 8; ++s) {
          const double t = ts[k] + (t1 - ts[k]) * s / 8.0;
          if (t > ts[k]) low = std::min(low, traj.at(t)[v]);
        }
      }
    }
    const double apex = e.y[v];
    if (!train.empty() && e.t <= train.times.back()) continue;
    train.times.push_back(e.t);
    train.voltages.push_back(apex);
    train.amplitudes.push_back(std::max(0.0, apex - std::min(low, apex)));
    // The next trough search starts at the apex itself.
    low = apex;
    if (k > 0 && k < ts.size() && traj.has_dense()) {
      const double t1 = ts[k];
      for (int s = 1; s < 8; ++s) low = std::min(low, traj.at(e.t + (t1 - e.t) * s / 8.0)[v]);
    }
  }
  return train;
}

std::vector<Burst> segment_bursts(const SpikeTrain& train, double quiescence_gap, std::size_t min_spikes) {
  if (!(quiescence_gap > 0)) throw ConfigError("quiescence gap must be positive");
  std::vector<Burst> out;
  std::size_t first = 0;
  const std::size_t n = train.size();
  for (std::size_t i = 1; i <= n; ++i) {
    if (i < n && train.times[i] - train.times[i - 1] < quiescence_gap) continue;
    if (n > 0 && i - first >= min_spikes) out.push_back({train.times[first], train.times[i - 1], first, i - first});
    first = i;
  }
  return out;
}

std::vector<double> interburst_intervals(const std::vector<Burst>& bursts) {
  std::vector<double> out;
  for (std::size_t i = 1; i < bursts.size(); ++i) out.push_back(bursts[i].start - bursts[i - 1].end);
  return out;
}

std::vector<std::size_t> prominent_peaks(const std::vector<double>& y, double min_prominence) {
  std::vector<std::size_t> peaks;
  const std::size_t n = y.size();
  std::size_t i = 1;
  while (i + 1 < n) {
    if (!(y[i] > y[i - 1])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j + 1 < n && y[j + 1] == y[i]) ++j;
    if (j + 1 < n && y[j + 1] < y[i]) {
      const std::size_t p = (i + j) / 2;
      double left = y[p];
      for (std::size_t k = p; k-- > 0;) {
        if (y[k] > y[p]) break;
        left = std::min(left, y[k]);
      }
      double right = y[p];
      for (std::size_t k = p + 1; k < n; ++k) {
        if (y[k] > y[p]) break;
        right = std::min(right, y[k]);
      }
      if (y[p] - std::max(left, right) >= min_prominence) peaks.push_back(p);
    }
    i = j + 1;
  }
  return peaks;
}

namespace {

AmSummary envelope_summary(const std::vector<double>& t, const std::vector<double>& amp, const TraceOptions& o) {
  AmSummary s;
  if (amp.empty()) return s;
  const auto [lo, hi] = std::minmax_element(amp.begin(), amp.end());
  s.depth = *hi - *lo;
  if (s.depth < o.degenerate_depth) return s;
  s.modulated = true;
  for (std::size_t p : prominent_peaks(amp, o.prominence * s.depth)) s.peak_times.push_back(t[p]);
  s.cycles = s.peak_times.size();
  if (s.cycles >= 2) s.period = (s.peak_times.back() - s.peak_times.front()) / static_cast<double>(s.cycles - 1);
  return s;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::vector<double> take(const std::vector<double>& v, std::size_t first, std::size_t count) {
  return {v.begin() + static_cast<std::ptrdiff_t>(first), v.begin() + static_cast<std::ptrdiff_t>(first + count)};
}

}  // namespace

AmSummary am_cycles(const SpikeTrain& train, double t0, double t1, const TraceOptions& options) {
  return am_cycles(train.slice(t0, t1), options);
}

AmSummary am_cycles(const SpikeTrain& train, const TraceOptions& options) {
  if (train.size() < options.min_am_spikes)
    throw ConfigError(fmt::format("AM analysis needs at least {} spikes, got {}", options.min_am_spikes, train.size()));
  return envelope_summary(train.times, train.amplitudes, options);
}

std::string to_string(Regime r) {
  switch (r) {
    case Regime::quiescent: return "quiescent";
    case Regime::bursting: return "bursting";
    case Regime::mixed_burst_am: return "mixed_burst_am";
    case Regime::am_spiking: return "am_spiking";
    case Regime::uniform_spiking: return "uniform_spiking";
  }
  return "unknown";
}

Regime regime_from_string(const std::string& s) {
  for (Regime r : {Regime::quiescent, Regime::bursting, Regime::mixed_burst_am, Regime::am_spiking,
                   Regime::uniform_spiking})
    if (to_string(r) == s) return r;
  throw ConfigError(fmt::format("unknown regime label '{}'", s));
}

RegimeReport classify_regime(const Trajectory& traj, const TraceOptions& options, std::size_t apex_event) {
  if (traj.size() == 0) throw ConfigError("empty trajectory");
  return classify_regime(extract_spikes(traj, apex_event), traj.t0(), traj.t1(), options);
}

RegimeReport classify_regime(const SpikeTrain& full, double t0, double t1, const TraceOptions& o) {
  const double start = t0 + o.transient;
  if (t1 - start < o.min_duration)
    throw ConfigError(fmt::format("trace too short: {} ms after the transient, need {} ms", t1 - start,
                                  o.min_duration));
  RegimeReport r;
  r.t0 = start;
  r.t1 = t1;
  const SpikeTrain train = full.slice(start, t1 + 1e-12);
  r.spikes = train.size();
  if (train.empty()) {
    r.label = Regime::quiescent;
    return r;
  }

  // Runs of spikes separated by quiescence; every run, not only full bursts,
  // bounds the quiescent phases.
  const auto runs = segment_bursts(train, o.quiescence_gap, 1);
  const bool lead_quiet = train.times.front() - start >= o.quiescence_gap;
  const bool tail_quiet = t1 - train.times.back() >= o.quiescence_gap;

  if (runs.size() >= 2) {
    std::vector<double> first_isi, last_isi, first_amp, last_amp, spacings;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const Burst& b = runs[i];
      if (b.count < o.min_burst_spikes) continue;
      r.bursts.push_back(b);
      const bool complete = (i > 0 || lead_quiet) && (i + 1 < runs.size() || tail_quiet);
      const auto t = take(train.times, b.first, b.count);
      const auto amp = take(train.amplitudes, b.first, b.count);
      const AmSummary s = envelope_summary(t, amp, o);
      r.am_count += s.cycles;
      if (complete) r.interburst_am.push_back(s.cycles);
      if (s.cycles > 0) r.am_depth = std::max(r.am_depth, s.depth);
      for (std::size_t k = 1; k < s.peak_times.size(); ++k) spacings.push_back(s.peak_times[k] - s.peak_times[k - 1]);
      for (std::size_t k = 1; k < t.size(); ++k) r.max_isi = std::max(r.max_isi, t[k] - t[k - 1]);
      if (complete && b.count >= 2) {
        // Onset spikes rise from the quiescent trough; the in-burst ramp
        // starts at the envelope minimum.
        const auto lo = static_cast<std::size_t>(std::min_element(amp.begin(), amp.end()) - amp.begin());
        first_isi.push_back(lo > 0 ? t[lo] - t[lo - 1] : t[1] - t[0]);
        last_isi.push_back(t[t.size() - 1] - t[t.size() - 2]);
        first_amp.push_back(amp[lo]);
        last_amp.push_back(amp.back());
      }
    }
    r.interburst = interburst_intervals(r.bursts);
    for (std::size_t i = 1; i < r.bursts.size(); ++i) r.onset_intervals.push_back(r.bursts[i].start - r.bursts[i - 1].start);
    if (!spacings.empty()) r.am_period = std::accumulate(spacings.begin(), spacings.end(), 0.0) / static_cast<double>(spacings.size());
    r.isi_first = median(first_isi);
    r.isi_last = median(last_isi);
    r.amp_first = median(first_amp);
    r.amp_last = median(last_amp);
    if (r.bursts.size() >= 2) {
      r.label = r.am_count > 0 ? Regime::mixed_burst_am : Regime::bursting;
      return r;
    }
  }

  // Continuous spiking, judged on the settled end of the window.
  const double settled = t1 - o.settled_fraction * (t1 - start);
  const SpikeTrain tail = train.slice(settled, t1 + 1e-12);
  const AmSummary s = envelope_summary(tail.times, tail.amplitudes, o);
  r.am_count = s.cycles;
  r.am_period = s.period;
  r.am_depth = s.depth;
  for (std::size_t k = 1; k < train.size(); ++k) r.max_isi = std::max(r.max_isi, train.times[k] - train.times[k - 1]);
  r.label = s.depth >= o.depth_threshold ? Regime::am_spiking : Regime::uniform_spiking;
  return r;
}

Quantization interburst_quantization(const std::vector<double>& intervals, double t_am, std::size_t min_intervals) {
  if (intervals.size() < min_intervals)
    throw ConfigError(fmt::format("quantization needs at least {} intervals, got {}", min_intervals, intervals.size()));
  if (!(t_am > 0)) throw ConfigError("AM period must be positive");
  const double lowest = *std::min_element(intervals.begin(), intervals.end());
  const std::size_t n = intervals.size();

  auto fit = [&](double T) {
    Quantization q;
    q.period = T;
    for (double x : intervals) q.multiples.push_back(std::max(0, static_cast<int>(std::lround((x - lowest) / T))));
    // Least squares for base and T given the multiples.
    double sk = 0, sk2 = 0, sx = 0, skx = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double k = q.multiples[i];
      sk += k;
      sk2 += k * k;
      sx += intervals[i];
      skx += k * intervals[i];
    }
    const double det = static_cast<double>(n) * sk2 - sk * sk;
    if (std::abs(det) > 1e-12) {
      q.period = (static_cast<double>(n) * skx - sk * sx) / det;
      q.base = (sx - q.period * sk) / static_cast<double>(n);
    } else {
      q.base = (sx - T * sk) / static_cast<double>(n);
    }
    for (std::size_t i = 0; i < n; ++i) q.residuals.push_back(intervals[i] - q.base - q.multiples[i] * q.period);
    const auto [lo, hi] = std::minmax_element(q.residuals.begin(), q.residuals.end());
    q.spread = *hi - *lo;
    return q;
  };

  Quantization best;
  double best_cost = INFINITY;
  constexpr int kGrid = 4000;
  for (int i = 0; i <= kGrid; ++i) {
    const double T = t_am * (0.8 + 0.4 * i / kGrid);
    Quantization q = fit(T);
    if (!(q.period > 0)) continue;
    double cost = 0;
    for (double x : q.residuals) cost += x * x;
    if (cost < best_cost - 1e-12) {
      best_cost = cost;
      best = std::move(q);
    }
  }
  return best;
}

}  // namespace canard
