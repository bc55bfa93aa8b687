#include <algorithm>
#include <cmath>

#include "canard/errors.hpp"
#include "canard/fastbif.hpp"
#include "canard/torus.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace canard;
using canard::testing::purkinje;

namespace {

constexpr double kJStar = -32.93825;

const FastDiagram& diagram() {
  static const FastDiagram d = fast_bifurcation(purkinje(), kJStar);
  return d;
}

std::vector<Vec> oracle_roots(const FrozenSlowSystem& fast, double m) {
  std::vector<Vec> seeds;
  for (int i = 0; i < 700; ++i) seeds.push_back(fast.steady_state(-100.0 + 140.0 * i / 699.0));
  return canard::testing::brute_force_roots([&](const Vec& x) { return fast.rhs(x, m); }, seeds, fast.scale());
}

const CycleBifurcation* find_kind(const CycleBranch& br, const std::string& kind) {
  for (const auto& b : br.bifurcations)
    if (b.kind == kind) return &b;
  return nullptr;
}

}  // namespace

TEST_CASE("fast equilibria scan matches multi-start Newton") {
  const FrozenSlowSystem fast(purkinje(), "M", kJStar);
  for (double m : {0.0, 0.2, 0.4, 0.55, 1.0}) {
    const auto found = fast_equilibria(fast, m);
    const auto roots = oracle_roots(fast, m);
    REQUIRE_MESSAGE(found.size() == roots.size(), "M = " << m);
    for (std::size_t i = 0; i < roots.size(); ++i) {
      CHECK(sup_norm(found[i].x - roots[i]) <= 1e-8);
      CHECK(found[i].residual <= 1e-9);
    }
  }
  CHECK_THROWS_AS(fast_equilibria(fast, 0.5, 0.0, -10.0), ConfigError);
}

TEST_CASE("fast subsystem diagram at J*") {
  const FastDiagram& d = diagram();
  const FrozenSlowSystem fast(purkinje(), "M", kJStar);
  REQUIRE_FALSE(d.equilibria.empty());
  CHECK(d.slow == "M");

  std::size_t folds = 0;
  for (const auto& br : d.equilibria) {
    for (const auto& p : br.points) CHECK(p.residual <= 1e-9);
    for (const auto& b : br.bifurcations) folds += b.kind == "fold";
  }
  CHECK(folds >= 1);

  // Every root at a sampled slow value lies on some continued branch.
  for (double m : {0.05, 0.3, 0.45, 0.6, 0.95}) {
    std::vector<EquilibriumPoint> pts;
    for (const auto& br : d.equilibria)
      for (auto& q : equilibria_at(fast, br, m))
        if (std::none_of(pts.begin(), pts.end(), [&](const auto& r) { return sup_norm(r.x - q.x) < 1e-7; }))
          pts.push_back(q);
    const auto roots = oracle_roots(fast, m);
    CHECK_MESSAGE(pts.size() == roots.size(), "M = " << m);
    for (const auto& r : roots)
      CHECK(std::any_of(pts.begin(), pts.end(), [&](const auto& p) { return sup_norm(p.x - r) <= 1e-8; }));
  }

  REQUIRE(d.cycles.has_value());
  const CycleBranch& cyc = *d.cycles;
  for (const Cycle& c : cyc.cycles) {
    CHECK(std::abs(c.multipliers[c.trivial] - 1.0) <= 1e-4);
    CHECK(c.period > 0);
    CHECK(c.residual <= 1e-8);
  }
  const CycleBifurcation* fold = find_kind(cyc, "fold_lc");
  REQUIRE(fold != nullptr);
  CHECK(std::abs(fold->crossing - 1.0) <= 1e-4);
  // The spiking branch folds above the knee of the critical manifold.
  double knee = INFINITY;
  for (const auto& br : d.equilibria)
    for (const auto& b : br.bifurcations)
      if (b.kind == "fold") knee = std::min(knee, b.param);
  CHECK(fold->param > knee);
}

TEST_CASE("no cycle branch without spiking") {
  const FastDiagram d = fast_bifurcation(purkinje(), -22.0);
  CHECK_FALSE(d.cycles.has_value());
  CHECK_FALSE(d.note.empty());
  CHECK_FALSE(d.equilibria.empty());
  FastDiagramOptions bad;
  bad.m_lo = 0.5;
  bad.m_hi = 0.5;
  CHECK_THROWS_AS(fast_bifurcation(purkinje(), -22.0, bad), ConfigError);
}

TEST_CASE("fast cycle needs a spiking state") {
  const FrozenSlowSystem fast(purkinje(), "M", kJStar);
  // The lower branch attracts at large M; a rest state never spikes there.
  CHECK_THROWS_AS(fast_cycle_from_state(fast, 0.95, purkinje().steady_state(-64.0)), NumericalError);
}

TEST_CASE("canard metrics invariants at J*") {
  const FastDiagram& d = diagram();
  REQUIRE(d.cycles.has_value());
  const auto& spec = purkinje();
  const Trajectory tr =
      integrate(ModelSystem(spec, kJStar), spec.steady_state(-60.0), 0.0, 4000.0, {}, {EventSpec::apex()});

  const auto cycles = spike_cycles(tr, 0, 4);
  REQUIRE(cycles.size() > 100);
  for (std::size_t i = 1; i < cycles.size(); ++i) {
    CHECK(cycles[i].t0 >= cycles[i - 1].t1 - 1e-12);
    CHECK(cycles[i].extent > 0);
  }

  const CanardMetrics cm = canard_metrics(tr, *d.cycles, d.equilibria.front(), 0, 4);
  CHECK(cm.fold_m == doctest::Approx(find_kind(*d.cycles, "fold_lc")->param));
  CHECK(cm.spike_period > 0);
  REQUIRE_FALSE(cm.passages.empty());
  for (const CanardPassage& p : cm.passages) {
    CHECK(p.dwell >= 0);
    if (p.dwell == 0) CHECK(p.exit == CanardExit::none);
  }
  CHECK(cm.dwell > cm.spike_period);
  CHECK(cm.max_flip_offset <= 2.0);
  CHECK(cm.exits_fp + cm.exits_lc <= cm.passages.size());

  // A branch without a fold of cycles is rejected.
  CycleBranch plain = *d.cycles;
  plain.bifurcations.clear();
  CHECK_THROWS_AS(canard_metrics(tr, plain, d.equilibria.front(), 0, 4), ConfigError);
}

TEST_CASE("joining branches") {
  const CycleBranch& cyc = *diagram().cycles;
  CycleBranch a, b;
  a.cycles = {cyc.cycles[2], cyc.cycles[1], cyc.cycles[0]};
  b.cycles = {cyc.cycles[2], cyc.cycles[3]};
  a.tracked = {cyc.cycles[2].multipliers, cyc.cycles[1].multipliers, cyc.cycles[0].multipliers};
  b.tracked = {cyc.cycles[2].multipliers, cyc.cycles[3].multipliers};
  a.ambiguous = {false, false, false};
  b.ambiguous = {false, false};
  const CycleBranch j = join_branches(a, b);
  REQUIRE(j.cycles.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(j.cycles[i].param == cyc.cycles[i].param);

  CycleBifurcation fa, fb;
  fa.segment = 0;
  fb.segment = 0;
  a.bifurcations = {fa};
  b.bifurcations = {fb};
  const CycleBranch k = join_branches(a, b);
  CHECK(k.bifurcations[0].segment == 1);
  CHECK(k.bifurcations[1].segment == 2);

  CycleBranch off = b;
  off.cycles.front() = cyc.cycles[3];
  CHECK_THROWS_AS(join_branches(a, off), ConfigError);
  CHECK_THROWS_AS(join_branches(a, CycleBranch{}), ConfigError);
}
