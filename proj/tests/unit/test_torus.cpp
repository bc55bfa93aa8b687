#include <cmath>
#include <map>
#include <numbers>
#include <random>

#include "canard/errors.hpp"
#include "canard/torus.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace canard;
using canard::testing::purkinje;

namespace {

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

// Fixed point of the normal-form map is the origin for every mu.
FixedPointFamily ns_family(double theta) {
  return [theta](double mu, const MapFixedPoint*) {
    MapFixedPoint fp = map_fixed_point(neimark_sacker_map(mu, theta), vec2(1e-3, -1e-3));
    fp.J = mu;
    return fp;
  };
}

double exact_ns_radius(double mu, double theta) {
  const double a = 1.0 + mu;
  return std::sqrt(a * std::cos(theta) - std::sqrt(1.0 - a * a * std::sin(theta) * std::sin(theta)));
}

double mean_radius(const std::vector<Vec>& pts) {
  double s = 0;
  for (const Vec& p : pts) s += p.norm();
  return s / static_cast<double>(pts.size());
}

const Vec& spiking_state(double J) {
  static std::map<double, Vec> cache;
  auto it = cache.find(J);
  if (it == cache.end()) {
    const auto& spec = purkinje();
    const ModelSystem sys(spec, J);
    const Trajectory warm = integrate(sys, spec.steady_state(-60.0), 0.0, 3000.0);
    const Trajectory probe = integrate_until(sys, warm.final_state(), 0.0, {EventSpec::apex()}, {0, 1, 200.0});
    it = cache.emplace(J, probe.events.back().y).first;
  }
  return it->second;
}

}  // namespace

TEST_CASE("map Newton on a linear contraction") {
  const MapFn half = [](const Vec& x) -> Vec { return 0.5 * x + vec2(1.0, -2.0); };
  const MapFixedPoint fp = map_fixed_point(half, vec2(10.0, 10.0));
  CHECK(fp.state[0] == doctest::Approx(2.0));
  CHECK(fp.state[1] == doctest::Approx(-4.0));
  REQUIRE(fp.multipliers.size() == 2);
  for (Complex m : fp.multipliers) CHECK(std::abs(m - 0.5) < 1e-6);
  CHECK(fp.stable);
  CHECK(fp.residual <= 1e-12);
  CHECK(complex_pair_modulus(fp.multipliers) < 0);

  const MapFn shift = [](const Vec& x) -> Vec { return x + vec2(1.0, 0.0); };
  CHECK_THROWS_AS(map_fixed_point(shift, vec2(0.0, 0.0)), NewtonFailure);
}

TEST_CASE("Neimark-Sacker crossing at mu = 0") {
  for (double theta : {0.3, 1.1, 2.0}) {
    const TorusLocation loc = locate_torus_bifurcation(ns_family(theta), -0.0937, 0.1113, {1e-8, 0.01});
    CHECK(std::abs(loc.J) <= 1e-6);
    CHECK(std::abs(loc.modulus - 1.0) <= 1e-6);
    CHECK(loc.angle == doctest::Approx(theta).epsilon(1e-6));
    CHECK(loc.modulus_increases);
    CHECK(loc.monotone);
    // Either scan direction finds the same crossing.
    const TorusLocation back = locate_torus_bifurcation(ns_family(theta), 0.1113, -0.0937, {1e-8, 0.01});
    CHECK(std::abs(back.J) <= 1e-6);
  }
  CHECK_THROWS_AS(locate_torus_bifurcation(ns_family(0.5), 0.01, 0.05), NumericalError);
  CHECK_THROWS_AS(locate_torus_bifurcation(ns_family(0.5), 0.01, 0.01), ConfigError);
}

TEST_CASE("real multipliers are rejected by the torus search") {
  FixedPointFamily real = [](double mu, const MapFixedPoint*) {
    const MapFn f = [mu](const Vec& x) -> Vec { return vec2((1 + mu) * x[0], 0.5 * x[1]); };
    return map_fixed_point(f, vec2(0.1, 0.1));
  };
  CHECK_THROWS_AS(locate_torus_bifurcation(real, -0.1, 0.1), NumericalError);
}

TEST_CASE("invariant circle of the normal-form map") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> mu_d(0.002, 0.05), th_d(0.2, 1.2);
  for (int trial = 0; trial < 20; ++trial) {
    const double mu = mu_d(rng), theta = th_d(rng);
    const auto orbit = map_orbit(neimark_sacker_map(mu, theta), vec2(0.05, 0.0), 600, 40000);
    const double exact = exact_ns_radius(mu, theta);
    for (const Vec& p : orbit) CHECK(p.norm() == doctest::Approx(exact).epsilon(1e-6));
    const AttractorReport a = classify_map_attractor(orbit);
    CHECK(a.kind == MapAttractor::invariant_circle);
    CHECK(a.rotation_consistency >= 0.95);

    const auto sink = map_orbit(neimark_sacker_map(-mu, theta), vec2(0.05, 0.0), 600, 40000);
    CHECK(classify_map_attractor(sink).kind == MapAttractor::fixed_point);
  }
}

TEST_CASE("sqrt amplitude scaling of the normal form") {
  const double theta = 0.4;
  std::vector<double> d, r;
  for (double mu : {0.002, 0.004, 0.006, 0.008, 0.010}) {
    d.push_back(mu);
    r.push_back(mean_radius(map_orbit(neimark_sacker_map(mu, theta), vec2(0.05, 0.0), 500, 60000)));
  }
  const CriticalityFit fit = fit_sqrt_scaling(d, r);
  CHECK(fit.supercritical);
  CHECK(fit.r_squared >= 0.95);
  CHECK(fit.coefficient == doctest::Approx(1.0).epsilon(0.05));

  // Linear growth does not pass as a square root.
  const CriticalityFit lin = fit_sqrt_scaling({0.002, 0.004, 0.006, 0.008, 0.01}, {0.002, 0.004, 0.006, 0.008, 0.01});
  CHECK(lin.r_squared < 0.95);
  CHECK_THROWS_AS(fit_sqrt_scaling({0.1, 0.2}, {1, 2}), ConfigError);
  CHECK_THROWS_AS(fit_sqrt_scaling({0.1, 0.0, 0.2}, {1, 2, 3}), ConfigError);
}

TEST_CASE("synthetic attractor classification") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> jitter(0.0, 1e-6);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Vec> circle, cloud, point;
  for (int k = 0; k < 800; ++k) {
    const double a = 0.37 * k;
    circle.push_back(vec2(0.2 + 0.01 * std::cos(a) + jitter(rng), 0.5 + 0.03 * std::sin(a) + jitter(rng)));
    cloud.push_back(vec2(unit(rng), unit(rng)));
    point.push_back(vec2(0.3 + jitter(rng), 0.3 + jitter(rng)));
  }
  CHECK(classify_map_attractor(circle).kind == MapAttractor::invariant_circle);
  CHECK(classify_map_attractor(cloud).kind == MapAttractor::irregular);
  CHECK(classify_map_attractor(point).kind == MapAttractor::fixed_point);
  CHECK_THROWS_AS(classify_map_attractor(std::vector<Vec>(circle.begin(), circle.begin() + 10)), ConfigError);
}

TEST_CASE("apex samples on the bundled model") {
  const auto& spec = purkinje();
  const PoincareSeries s = poincare_series(spec, -32.94, spiking_state(-32.94), 400, 100);
  REQUIRE(s.complete);
  REQUIRE(s.size() == 400);
  const PoincareOptions o;
  for (std::size_t k = 0; k < s.size(); ++k) {
    CHECK(satisfies_apex(s.samples[k], 1e-6));
    if (k > 0) CHECK(s.samples[k].t > s.samples[k - 1].t);
  }
  CHECK(s.v_index == 0);
  CHECK(s.m_index == 4);
  CHECK_THROWS_AS(poincare_series(spec, -32.94, Vec::Zero(3), 10), ConfigError);

  // A quiescent cell yields an incomplete series, not an exception.
  const PoincareSeries q = poincare_series(spec, -22.0, spec.steady_state(-60.0), 5, 0, [] {
    PoincareOptions p;
    p.cap_per_sample = 100.0;
    return p;
  }());
  CHECK_FALSE(q.complete);
  CHECK_FALSE(q.note.empty());
}

TEST_CASE("return-map fixed point against a finite-difference oracle") {
  const auto& spec = purkinje();
  const double J = -33.0;
  const MapFixedPoint fp = map_fixed_point(spec, J, spiking_state(J));
  CHECK(fp.residual <= 1e-8);
  REQUIRE(fp.multipliers.size() == 4);
  CHECK(fp.stable);
  CHECK(fp.period > 0);

  // Newton on the raw apex-to-apex map; its Jacobian carries the four
  // multipliers plus a zero for the direction across the section.
  PoincareOptions tight;
  tight.integrator.rel_tol = 1e-12;
  tight.integrator.abs_tol = 1e-13;
  tight.time_tol = 1e-12;
  const MapFn P = [&](const Vec& x) { return apex_return(spec, J, x, tight).state; };
  Vec scale = Vec::Ones(5);
  scale[0] = 100.0;
  const MapFixedPoint oracle = map_fixed_point(P, fp.state, scale, {1e-10, 20, 1e-5});
  CHECK(DriveSystem(spec).scaled_norm(oracle.state - fp.state) <= 1e-7);
  for (std::size_t i = 0; i < 2; ++i) CHECK(std::abs(std::abs(oracle.multipliers[i]) - std::abs(fp.multipliers[i])) <= 1e-3);
  CHECK(std::abs(oracle.multipliers.back()) <= 1e-3);
  CHECK(std::abs(complex_pair_modulus(oracle.multipliers) - complex_pair_modulus(fp.multipliers)) <= 1e-3);
}

TEST_CASE("pair modulus grows with J across the torus point") {
  const auto& spec = purkinje();
  const MapFixedPoint below = map_fixed_point(spec, -33.0, spiking_state(-33.0));
  const MapFixedPoint above = map_fixed_point(spec, -32.95, below.state);
  const double mb = complex_pair_modulus(below.multipliers), ma = complex_pair_modulus(above.multipliers);
  CHECK(mb < 1.0);
  CHECK(ma > 1.0);
  CHECK_FALSE(above.stable);
}

TEST_CASE("attractors either side of the torus point") {
  const auto& spec = purkinje();
  const PoincareSeries curve = poincare_series(spec, -32.94, spiking_state(-32.94), 800, 1500);
  const AttractorReport a = classify_map_attractor(curve);
  CHECK(a.kind == MapAttractor::invariant_circle);

  const PoincareSeries sink = poincare_series(spec, -33.0, spiking_state(-33.0), 600, 4000);
  CHECK(classify_map_attractor(sink).kind == MapAttractor::fixed_point);
}
