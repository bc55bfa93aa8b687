#include <cmath>
#include <numbers>
#include <random>

#include "canard/errors.hpp"
#include "canard/trace.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace canard;

namespace {

const double kPi = std::numbers::pi;

SpikeTrain train_from(const std::vector<double>& t, double amp = 60.0) {
  SpikeTrain s;
  for (double x : t) {
    s.times.push_back(x);
    s.voltages.push_back(20.0);
    s.amplitudes.push_back(amp);
  }
  return s;
}

std::vector<double> grid(double a, double b, double step) {
  std::vector<double> v;
  for (double t = a; t <= b + 1e-9; t += step) v.push_back(t);
  return v;
}

// Bursts of `n` spikes every 2 ms, onsets `period` apart; inside each burst the
// amplitude is 50 + depth * sin(2 pi t / t_am).
SpikeTrain burst_train(double t0, double t1, double period, std::size_t n, double depth, double t_am) {
  SpikeTrain s;
  for (double start = t0; start < t1; start += period)
    for (std::size_t k = 0; k < n; ++k) {
      const double t = start + 2.0 * static_cast<double>(k);
      if (t >= t1) break;
      s.times.push_back(t);
      s.voltages.push_back(20.0);
      s.amplitudes.push_back(50.0 + depth * std::sin(2 * kPi * (t - start) / t_am));
    }
  return s;
}

}  // namespace

TEST_CASE("sine trace apexes and amplitudes") {
  // V = 30 sin(t): apexes at pi/2 + 2 pi k, amplitude 60 once a trough precedes.
  FunctionSystem sys(1, [](double t, const Vec&, Vec& dy) {
    dy.resize(1);
    dy[0] = 30.0 * std::cos(t);
  });
  IntegratorOptions io;
  io.rel_tol = 1e-10;
  io.abs_tol = 1e-12;
  const Trajectory tr = integrate(sys, Vec::Zero(1), 0.0, 40.0, io, {EventSpec::apex(0, 0.0)});
  const SpikeTrain s = extract_spikes(tr);
  REQUIRE(s.size() == 7);
  CHECK(s.amplitudes[0] == doctest::Approx(30.0).epsilon(1e-6));
  for (std::size_t k = 0; k < s.size(); ++k) {
    CHECK(s.times[k] == doctest::Approx(kPi / 2 + 2 * kPi * static_cast<double>(k)).epsilon(1e-6));
    CHECK(s.voltages[k] == doctest::Approx(30.0).epsilon(1e-8));
    if (k > 0) CHECK(s.amplitudes[k] == doctest::Approx(60.0).epsilon(1e-4));
  }
}

TEST_CASE("empty event log gives an empty train") {
  FunctionSystem sys(1, [](double, const Vec&, Vec& dy) { dy = Vec::Zero(1); });
  const Trajectory tr = integrate(sys, Vec::Zero(1), 0.0, 10.0, {}, {EventSpec::apex()});
  CHECK(extract_spikes(tr).empty());
  CHECK(segment_bursts(SpikeTrain{}).empty());
}

TEST_CASE("burst segmentation") {
  auto t = grid(0, 50, 2);
  const auto t2 = grid(250, 300, 2);
  t.insert(t.end(), t2.begin(), t2.end());
  const auto b = segment_bursts(train_from(t), 50.0);
  REQUIRE(b.size() == 2);
  CHECK(b[0].count == 26);
  CHECK(b[1].first == 26);
  const auto ibi = interburst_intervals(b);
  REQUIRE(ibi.size() == 1);
  CHECK(ibi[0] == doctest::Approx(200.0));

  // A continuous train is one run.
  CHECK(segment_bursts(train_from(grid(0, 1000, 2)), 50.0).size() == 1);
  // Isolated pairs are dropped.
  CHECK(segment_bursts(train_from({0, 2, 100, 102, 104}), 50.0).size() == 1);
  CHECK_THROWS_AS(segment_bursts(train_from({0, 1}), 0.0), ConfigError);
}

TEST_CASE("AM envelope cycles") {
  SpikeTrain s;
  for (double t : grid(0, 598, 2)) {
    s.times.push_back(t);
    s.voltages.push_back(20.0);
    s.amplitudes.push_back(50.0 + 8.0 * std::sin(2 * kPi * t / 120.0));
  }
  const AmSummary a = am_cycles(s);
  CHECK(a.cycles == 5);
  CHECK(a.period == doctest::Approx(120.0).epsilon(1e-9));
  CHECK(a.depth == doctest::Approx(16.0).epsilon(1e-3));
  CHECK(a.modulated);

  const AmSummary w = am_cycles(s, 100.0, 450.0);
  CHECK(w.cycles == 3);

  const AmSummary flat = am_cycles(train_from(grid(0, 598, 2)));
  CHECK(flat.cycles == 0);
  CHECK_FALSE(flat.modulated);
  CHECK_THROWS_AS(am_cycles(train_from(grid(0, 20, 2))), ConfigError);
}

TEST_CASE("prominence rejects jitter") {
  std::vector<double> y;
  for (int i = 0; i < 300; ++i) y.push_back(10 * std::sin(2 * kPi * i / 100.0) + 0.1 * ((i % 2) ? 1 : -1));
  CHECK(prominent_peaks(y, 4.0).size() == 3);
  CHECK(prominent_peaks(y, 0.01).size() > 3);
  // Plateau maxima count once; edges never count.
  CHECK(prominent_peaks({0, 1, 1, 1, 0}, 0.5) == std::vector<std::size_t>{2});
  CHECK(prominent_peaks({5, 1, 0}, 0.5).empty());
}

TEST_CASE("regime labels on synthetic trains") {
  CHECK(classify_regime(SpikeTrain{}, 0.0, 4000.0).label == Regime::quiescent);

  const RegimeReport u = classify_regime(train_from(grid(0, 4000, 2)), 0.0, 4000.0);
  CHECK(u.label == Regime::uniform_spiking);
  CHECK(u.bursts.empty());

  SpikeTrain am;
  for (double t : grid(0, 4000, 2)) {
    am.times.push_back(t);
    am.voltages.push_back(20.0);
    am.amplitudes.push_back(50.0 + 4.0 * std::sin(2 * kPi * t / 120.0));
  }
  const RegimeReport a = classify_regime(am, 0.0, 4000.0);
  CHECK(a.label == Regime::am_spiking);
  CHECK(a.am_period == doctest::Approx(120.0).epsilon(0.02));
  CHECK(a.am_depth == doctest::Approx(8.0).epsilon(0.01));

  // Short bursts with a monotone ramp: no envelope maxima inside.
  SpikeTrain b = burst_train(0.0, 4000.0, 200.0, 25, 0.0, 1.0);
  for (std::size_t i = 0; i < b.size(); ++i) b.amplitudes[i] = 40.0 + static_cast<double>(i % 25);
  const RegimeReport br = classify_regime(b, 0.0, 4000.0);
  CHECK(br.label == Regime::bursting);
  CHECK(br.am_count == 0);
  REQUIRE_FALSE(br.interburst.empty());
  for (double x : br.interburst) CHECK(x == doctest::Approx(152.0));
  CHECK(br.amp_first == doctest::Approx(40.0));
  CHECK(br.amp_last == doctest::Approx(64.0));
  CHECK(br.isi_first == doctest::Approx(2.0));

  // Long bursts carrying AM cycles.
  const RegimeReport mx = classify_regime(burst_train(0.0, 4000.0, 600.0, 250, 6.0, 120.0), 0.0, 4000.0);
  CHECK(mx.label == Regime::mixed_burst_am);
  CHECK(mx.am_count > 0);
  for (std::size_t c : mx.interburst_am) CHECK(c == 4);

  CHECK_THROWS_AS(classify_regime(SpikeTrain{}, 0.0, 2500.0), ConfigError);
}

TEST_CASE("label partition and gap sanity on random trains") {
  std::mt19937_64 rng(20240611);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const TraceOptions o;
  for (int trial = 0; trial < 300; ++trial) {
    SpikeTrain s;
    double t = 0.0;
    const double isi = 1.5 + unit(rng);
    const double p_pause = unit(rng) < 0.5 ? 0.0 : 0.02 * unit(rng);
    const double depth = unit(rng) < 0.3 ? 0.0 : 20.0 * unit(rng);
    const double t_am = 80.0 + 80.0 * unit(rng);
    while (t < 4000.0) {
      s.times.push_back(t);
      s.voltages.push_back(20.0);
      s.amplitudes.push_back(std::max(0.0, 50.0 + depth * std::sin(2 * kPi * t / t_am) + 0.01 * unit(rng)));
      t += unit(rng) < p_pause ? 20.0 + 300.0 * unit(rng) : isi;
    }
    const RegimeReport r = classify_regime(s, 0.0, 4000.0, o);
    for (std::size_t i = 1; i < s.size(); ++i) REQUIRE(s.times[i] > s.times[i - 1]);
    for (double a : s.amplitudes) REQUIRE(a >= 0.0);
    CHECK_NOTHROW(regime_from_string(to_string(r.label)));
    switch (r.label) {
      case Regime::mixed_burst_am:
        CHECK(r.bursts.size() >= 2);
        CHECK(r.am_count >= 1);
        break;
      case Regime::bursting: {
        CHECK(r.bursts.size() >= 2);
        CHECK(r.am_count == 0);
        const double gap = *std::min_element(r.interburst.begin(), r.interburst.end());
        CHECK(gap > 3.0 * r.max_isi);
        break;
      }
      case Regime::am_spiking: CHECK(r.am_depth >= o.depth_threshold); break;
      case Regime::uniform_spiking: CHECK(r.am_depth < o.depth_threshold); break;
      case Regime::quiescent: CHECK(r.spikes == 0); break;
    }
    for (const Burst& b : r.bursts) CHECK(b.count >= o.min_burst_spikes);
  }
}

TEST_CASE("interburst quantization") {
  const Quantization q = interburst_quantization({200, 320, 440, 200, 560}, 120.0);
  CHECK(q.multiples == std::vector<int>{0, 1, 2, 0, 3});
  CHECK(q.period == doctest::Approx(120.0));
  CHECK(q.base == doctest::Approx(200.0));
  CHECK(q.spread < 1e-9);

  const Quantization z = interburst_quantization({150, 152, 151, 153}, 120.0);
  for (int k : z.multiples) CHECK(k == 0);
  CHECK_THROWS_AS(interburst_quantization({200, 320}, 120.0), ConfigError);
  CHECK_THROWS_AS(interburst_quantization({200, 320, 440}, 0.0), ConfigError);

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const double base = 100 + 100 * unit(rng), T = 90 + 60 * unit(rng);
    std::vector<double> iv;
    std::vector<int> ks;
    for (int i = 0; i < 12; ++i) {
      ks.push_back(static_cast<int>(6 * unit(rng)));
      iv.push_back(base + ks.back() * T + 0.02 * T * (unit(rng) - 0.5));
    }
    ks[0] = 0;
    iv[0] = base;
    const Quantization r = interburst_quantization(iv, T * (0.9 + 0.2 * unit(rng)));
    CHECK(r.multiples == ks);
    CHECK(r.period == doctest::Approx(T).epsilon(0.01));
    CHECK(r.spread <= 0.03 * T);
  }
}

TEST_CASE("bundled model bursts at J = -23") {
  const auto& spec = canard::testing::purkinje();
  const Trajectory tr =
      integrate(ModelSystem(spec, -23.0), spec.steady_state(-60.0), 0.0, 4000.0, {}, {EventSpec::apex()});
  const RegimeReport r = classify_regime(tr);
  CHECK(r.label == Regime::bursting);
  CHECK(r.bursts.size() >= 10);
  CHECK(r.isi_last > r.isi_first);
  CHECK(r.amp_last > r.amp_first);
  const Quantization q = interburst_quantization(r.interburst, 120.0);
  for (int k : q.multiples) CHECK(k == 0);
  const SpikeTrain s = extract_spikes(tr);
  for (std::size_t i = 1; i < s.size(); ++i) CHECK(s.times[i] > s.times[i - 1]);
}

TEST_CASE("bundled model is quiescent at J = -22") {
  const auto& spec = canard::testing::purkinje();
  const Trajectory tr =
      integrate(ModelSystem(spec, -22.0), spec.steady_state(-60.0), 0.0, 3200.0, {}, {EventSpec::apex()});
  CHECK(classify_regime(tr).label == Regime::quiescent);
}
