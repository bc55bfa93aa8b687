#include <cmath>
#include <numbers>

#include "canard/cycles.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace canard;
using canard::testing::purkinje;

namespace {

constexpr double kJStar = -32.93825;
const double kTwoPi = 2 * std::numbers::pi;

// r' = mu r + r^3 - r^5, theta' = 1 in Cartesian form.
FunctionParamSystem quintic() {
  return FunctionParamSystem(2, [](const Vec& v, double mu, Vec& f) {
    const double x = v[0], y = v[1], r2 = x * x + y * y, g = mu + r2 - r2 * r2;
    f.resize(2);
    f << x * g - y, y * g + x;
  });
}

FunctionParamSystem van_der_pol() {
  return FunctionParamSystem(2, [](const Vec& v, double mu, Vec& f) {
    f.resize(2);
    f << v[1], mu * (1 - v[0] * v[0]) * v[1] - v[0];
  });
}

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

double trivial_deviation(const Cycle& c) { return std::abs(c.multipliers[c.trivial] - 1.0); }

// State on the spiking attractor of the full model at J*.
const Vec& spiking_state() {
  static const Vec y = [] {
    const auto& spec = purkinje();
    return integrate(ModelSystem(spec, kJStar), spec.steady_state(-60.0), 0.0, 2000.0).final_state();
  }();
  return y;
}

Cycle fast_cycle(const FrozenSlowSystem& fast, double m) {
  const Trajectory tr =
      integrate(FixedParamOde(fast, m), fast.project(spiking_state()), 0.0, 300.0, {}, {EventSpec::apex()});
  return find_cycle(fast, m, seed_from_trajectory(tr));
}

}  // namespace

TEST_CASE("quintic normal form cycles and multipliers") {
  const auto sys = quintic();
  const double mu = -3.0 / 16;
  const Cycle outer = find_cycle(sys, mu, {vec2(0.9, 0.0), kTwoPi});
  const Cycle inner = find_cycle(sys, mu, {vec2(0.48, 0.0), kTwoPi});
  CHECK(outer.anchor[0] == doctest::Approx(std::sqrt(0.75)).epsilon(1e-8));
  CHECK(inner.anchor[0] == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(outer.period == doctest::Approx(kTwoPi).epsilon(1e-8));
  CHECK(inner.period == doctest::Approx(kTwoPi).epsilon(1e-8));
  CHECK(outer.stability == Stability::attracting);
  CHECK(inner.stability == Stability::repelling);
  REQUIRE(outer.nontrivial().size() == 1);
  CHECK(outer.nontrivial()[0].real() == doctest::Approx(std::exp(-0.75 * kTwoPi)).epsilon(1e-6));
  CHECK(inner.nontrivial()[0].real() == doctest::Approx(std::exp(0.25 * kTwoPi)).epsilon(1e-6));
  CHECK(trivial_deviation(outer) <= 1e-6);
  CHECK(trivial_deviation(inner) <= 1e-6);
  CHECK(outer.residual <= 1e-8);
  CHECK(outer.v_max == doctest::Approx(std::sqrt(0.75)).epsilon(1e-6));
  CHECK(outer.v_min == doctest::Approx(-std::sqrt(0.75)).epsilon(1e-6));
  CHECK(outer.segments.size() == 4);
}

TEST_CASE("van der Pol period against event-to-event integration") {
  const auto sys = van_der_pol();
  IntegratorOptions fine;
  fine.rel_tol = 1e-12;
  fine.abs_tol = 1e-13;
  const Trajectory tr = integrate(FixedParamOde(sys, 1.0), vec2(2.0, 0.0), 0.0, 200.0, fine,
                                  {EventSpec::apex(0, -INFINITY)});
  REQUIRE(tr.events.size() > 20);
  const std::size_t k = tr.events.size() - 1;
  const double oracle = (tr.events[k].t - tr.events[k - 10].t) / 10.0;
  const Cycle c = find_cycle(sys, 1.0, seed_from_trajectory(tr));
  MESSAGE("period " << c.period << " oracle " << oracle);
  CHECK(std::abs(c.period - 6.6633) <= 1e-3);
  CHECK(std::abs(c.period - oracle) <= 1e-6);
  CHECK(c.stability == Stability::attracting);
  CHECK(trivial_deviation(c) <= 1e-6);
}

TEST_CASE("fold of cycles and hopf terminus of the quintic family") {
  const auto sys = quintic();
  const Cycle start = find_cycle(sys, -3.0 / 16, {vec2(0.9, 0.0), kTwoPi});
  CycleContinuationOptions opt;
  opt.p_min = -0.5;
  opt.p_max = 0.5;
  const CycleBranch br = continue_cycles(sys, start, opt);
  REQUIRE(br.bifurcations.size() == 2);
  const auto& fold = br.bifurcations[0];
  CHECK(fold.kind == "fold_lc");
  CHECK_FALSE(fold.suspected);
  CHECK(std::abs(fold.param + 0.25) <= 1e-5);
  CHECK(std::abs(fold.crossing - 1.0) <= 1e-4);
  CHECK(fold.cycle.anchor[0] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-4));

  const auto& end = br.bifurcations[1];
  CHECK(end.kind == "hopf_terminus");
  CHECK(br.end_reason == "hopf_terminus");
  CHECK(std::abs(end.param) <= 1e-3);
  CHECK(end.cycle.amplitude() < 0.05);
  CHECK(std::abs(end.cycle.period - kTwoPi) <= 0.05 * kTwoPi);

  for (std::size_t k = 0; k < br.cycles.size(); ++k) {
    const Cycle& c = br.cycles[k];
    CHECK(trivial_deviation(c) <= 1e-4);
    CHECK(c.residual <= 1e-8);
    const ComplexVec nt = c.nontrivial();
    const bool attracting = std::all_of(nt.begin(), nt.end(),
                                        [](Complex m) { return std::abs(m) < 1 - 1e-8; });
    CHECK((c.stability == Stability::attracting) == attracting);
    if (k > 0 && c.stability != br.cycles[k - 1].stability)
      CHECK(std::any_of(br.bifurcations.begin(), br.bifurcations.end(),
                        [&](const auto& b) { return b.kind == "fold_lc" && b.segment + 1 >= k - 1 && b.segment <= k; }));
  }
}

TEST_CASE("no false positives along the van der Pol family") {
  const auto sys = van_der_pol();
  const Cycle start = find_cycle(sys, 1.0, {vec2(2.0, 0.0), 6.66});
  CycleContinuationOptions opt;
  opt.p_min = 0.5;
  opt.p_max = 1.5;
  opt.direction = +1;
  const CycleBranch br = continue_cycles(sys, start, opt);
  CHECK(br.end_reason == "range");
  CHECK(br.cycles.back().param == doctest::Approx(1.5));
  CHECK(br.bifurcations.empty());
  for (const auto& c : br.cycles) CHECK(c.stability == Stability::attracting);
}

TEST_CASE("fast subsystem cycles at J*") {
  const FrozenSlowSystem fast(purkinje(), "M", kJStar);
  const Cycle c = fast_cycle(fast, 0.52);
  MESSAGE("T = " << c.period << " ms, V in [" << c.v_min << ", " << c.v_max << "]");
  CHECK(c.stability == Stability::attracting);
  for (const auto& m : c.nontrivial()) CHECK(std::abs(m) < 1.0);
  CHECK(trivial_deviation(c) <= 1e-6);
  CHECK(c.residual <= 1e-8);
  CHECK(c.v_max == doctest::Approx(c.anchor[0]).epsilon(1e-9));

  SUBCASE("branch folds onto a repelling segment") {
    CycleContinuationOptions opt;
    opt.p_min = 0.48;
    opt.p_max = 0.6;
    opt.param_scale = 1.0;
    opt.direction = +1;
    const CycleBranch br = continue_cycles(fast, c, opt);
    REQUIRE(br.bifurcations.size() == 1);
    const auto& fold = br.bifurcations[0];
    MESSAGE("fold_lc at M = " << fold.param);
    CHECK(fold.kind == "fold_lc");
    CHECK_FALSE(fold.suspected);
    CHECK(std::abs(fold.crossing - 1.0) <= 1e-4);
    CHECK(br.end_reason == "range");
    CHECK(br.cycles.back().param == doctest::Approx(0.48));
    CHECK(br.cycles.back().stability != Stability::attracting);
    for (const auto& cyc : br.cycles) {
      CHECK(cyc.param <= fold.param + 1e-9);
      CHECK(trivial_deviation(cyc) <= 1e-4);
      // Larger cycles beyond the fold are the unstable ones.
      if (cyc.amplitude() > fold.cycle.amplitude() + 0.1) CHECK(cyc.stability != Stability::attracting);
      if (cyc.amplitude() < fold.cycle.amplitude() - 0.1) CHECK(cyc.stability == Stability::attracting);
    }
  }
  SUBCASE("direct simulation converges to the continued cycles") {
    for (double m : {0.45, 0.5, 0.53}) {
      const Cycle target = fast_cycle(fast, m);
      Vec y0 = target.anchor;
      y0[0] -= 5.0;
      const Trajectory tr = integrate(FixedParamOde(fast, m), y0, 0.0, 400.0, {}, {EventSpec::apex()});
      REQUIRE(tr.events.size() > 10);
      double worst = 0.0;
      for (std::size_t k = tr.events.size() - 5; k < tr.events.size(); ++k)
        worst = std::max(worst, std::abs(tr.events[k].y[0] - target.anchor[0]));
      CHECK(worst <= 1e-3 * target.amplitude());
    }
  }
}

TEST_CASE("fast subsystem branch ends at the equilibrium hopf point") {
  const FrozenSlowSystem fast(purkinje(), "M", kJStar);
  const Cycle c = fast_cycle(fast, 0.52);
  CycleContinuationOptions opt;
  opt.p_min = -3.0;
  opt.p_max = 0.6;
  opt.param_scale = 1.0;
  const CycleBranch br = continue_cycles(fast, c, opt);
  REQUIRE(br.end_reason == "hopf_terminus");
  const auto hopf_eq = find_equilibrium(fast, br.cycles.back().anchor, br.cycles.back().param);
  ContinuationOptions eopt;
  eopt.p_min = -3.0;
  eopt.p_max = 0.0;
  eopt.param_scale = 1.0;
  const auto eq_branch = continue_branch(fast, hopf_eq, eopt);
  const auto hopf = std::find_if(eq_branch.bifurcations.begin(), eq_branch.bifurcations.end(),
                                 [](const auto& b) { return b.kind == "hopf"; });
  REQUIRE(hopf != eq_branch.bifurcations.end());
  MESSAGE("equilibrium hopf at M = " << hopf->param);
  const double omega = hopf->eigenvalues[0].imag();
  CHECK(std::abs(br.cycles.back().param - hopf->param) <= 1e-3);
  CHECK(std::abs(br.cycles.back().period - kTwoPi / std::abs(omega)) <= 0.05 * kTwoPi / std::abs(omega));
}

TEST_CASE("multiplier pairing") {
  const ComplexVec prev{Complex(2, 0), Complex(0.5, 0.1), Complex(0.5, -0.1)};
  const ComplexVec next{Complex(0.52, -0.11), Complex(2.1, 0), Complex(0.52, 0.11)};
  bool tie = true;
  const auto perm = match_multipliers(prev, next, &tie);
  CHECK(perm == std::vector<std::size_t>{1, 2, 0});
  CHECK_FALSE(tie);
  const ComplexVec same{Complex(0.5, 0), Complex(0.5, 0)};
  match_multipliers(same, same, &tie);
  CHECK(tie);
}

TEST_CASE("cycle errors") {
  const auto sys = quintic();
  CHECK_THROWS_AS(find_cycle(sys, -0.1, {Vec::Zero(3), 6.0}), ConfigError);
  CHECK_THROWS_AS(find_cycle(sys, -0.1, {vec2(1, 0), 0.01}), NumericalError);
  // A stable focus has no periodic orbit to converge to.
  const FunctionParamSystem focus(2, [](const Vec& v, double, Vec& f) {
    f.resize(2);
    f << -v[0] - v[1], v[0] - v[1];
  });
  CHECK_THROWS_AS(find_cycle(focus, 0.0, {vec2(1, 0), 6.0}), NumericalError);
  Trajectory empty(2);
  CHECK_THROWS_AS(seed_from_trajectory(empty), ConfigError);
}
