#include <cmath>
#include <random>

#include "canard/errors.hpp"
#include "canard/integrator.hpp"
#include "canard/model.hpp"
#include "canard/model_io.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace canard;
using canard::testing::purkinje;

namespace {

const char* kTwoGateModel = R"json({
  "name": "toy",
  "slow": ["s"],
  "currents": [{"name": "A", "g": 1.0, "reversal": -80, "gates": [{"var": "f", "exponent": 2}]},
               {"name": "B", "g": 0.5, "reversal": 20, "gates": [{"var": "s", "exponent": 1}]}],
  "gates": {"f": {"xinf": "1/(1+exp(-V/10))", "tau": "TAU_F"},
            "s": {"xinf": "1/(1+exp(-(V+20)/10))", "tau": "TAU_S"}}
})json";

std::string two_gate(const std::string& tau_f, const std::string& tau_s) {
  std::string text = kTwoGateModel;
  text.replace(text.find("TAU_F"), 5, tau_f);
  text.replace(text.find("TAU_S"), 5, tau_s);
  return text;
}

Vec gates_at_equilibrium(const ModelSpec& spec, double V) { return spec.steady_state(V); }

}  // namespace

TEST_CASE("bundled model loads with the expected structure") {
  const ModelSpec& spec = purkinje();
  CHECK(spec.dim() == 5);
  CHECK(spec.state_names() == std::vector<std::string>{"V", "n", "h", "c", "M"});
  CHECK(spec.slow() == std::vector<std::string>{"M"});
  CHECK(spec.capacitance() == 1.0);
  std::map<std::string, std::pair<double, double>> expected{
      {"K", {10.0, -95.0}}, {"Na", {125.0, 50.0}}, {"L", {2.0, -70.0}}, {"Ca", {1.0, 125.0}}, {"M", {0.75, -95.0}}};
  REQUIRE(spec.currents().size() == 5);
  for (const auto& c : spec.currents()) {
    CHECK(c.g == expected.at(c.name).first);
    CHECK(c.reversal == expected.at(c.name).second);
  }
  const auto m = std::find_if(spec.gates().begin(), spec.gates().end(), [](const auto& g) { return g.name == "m"; });
  REQUIRE(m != spec.gates().end());
  CHECK(m->instantaneous);
}

TEST_CASE("model validation errors") {
  SUBCASE("negative conductance") {
    std::string text = two_gate("1", "20");
    text.replace(text.find("\"g\": 1.0"), 8, "\"g\": -1");
    CHECK_THROWS_AS(parse_model(text), ConfigError);
  }
  SUBCASE("missing tau for a dynamic gate") {
    std::string text = two_gate("1", "20");
    const auto pos = text.find(", \"tau\": \"1\"");
    text.erase(pos, std::string(", \"tau\": \"1\"").size());
    try {
      parse_model(text);
      FAIL("expected schema error");
    } catch (const ConfigError& e) {
      CHECK(e.kind() == "schema");
    }
  }
  SUBCASE("bad expression reports offset") {
    try {
      parse_model(two_gate("1 +* 2", "20"));
      FAIL("expected parse error");
    } catch (const ParseError& e) {
      CHECK(e.offset() == 3);
      CHECK(std::string(e.what()).find("gate 'f' tau") != std::string::npos);
    }
  }
  SUBCASE("steady state outside [0, 1]") {
    std::string text = two_gate("1", "20");
    text.replace(text.find("1/(1+exp(-V/10))"), 16, "2/(1+exp(-V/10))");
    CHECK_THROWS_AS(parse_model(text), ConfigError);
  }
  SUBCASE("non-positive tau") { CHECK_THROWS_AS(parse_model(two_gate("V/10", "20")), ConfigError); }
  SUBCASE("undefined gate reference") {
    std::string text = two_gate("1", "20");
    text.replace(text.find("\"var\": \"f\""), 10, "\"var\": \"q\"");
    CHECK_THROWS_AS(parse_model(text), ConfigError);
  }
  SUBCASE("slow variable must be a gate") {
    std::string text = two_gate("1", "20");
    text.replace(text.find("[\"s\"]"), 5, "[\"z\"]");
    CHECK_THROWS_AS(parse_model(text), ConfigError);
  }
  SUBCASE("not JSON") { CHECK_THROWS_AS(parse_model("{"), ConfigError); }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_model("/nonexistent/x.model"), ConfigError); }
}

TEST_CASE("eval_rhs examples") {
  const ModelSpec& spec = purkinje();
  SUBCASE("leak reversal with all gated currents off") {
    Vec y(5);
    y << -70.0, 0.0, 0.0, 0.0, 0.0;
    CHECK(spec.eval_rhs(y, 0.0)[0] == 0.0);
  }
  SUBCASE("gates at steady state do not move") {
    for (double V : {-90.0, -54.0, -20.0, 10.0}) {
      const Vec dy = spec.eval_rhs(gates_at_equilibrium(spec, V), -23.0);
      for (Eigen::Index i = 1; i < 5; ++i) CHECK(dy[i] == doctest::Approx(0.0).scale(1e-12));
    }
  }
  SUBCASE("drive enters as -J") {
    const Vec y = spec.steady_state(-60.0);
    const double a = spec.eval_rhs(y, 0.0)[0];
    const double b = spec.eval_rhs(y, -10.0)[0];
    CHECK(b - a == doctest::Approx(10.0));
  }
  SUBCASE("evaluation is bitwise deterministic") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 20; ++i) {
      const Vec y = canard::testing::random_state(spec, rng);
      const Vec a = spec.eval_rhs(y, -30.0);
      const Vec b = spec.eval_rhs(y, -30.0);
      CHECK((a.array() == b.array()).all());
    }
  }
}

TEST_CASE("gate range handling") {
  const ModelSpec& spec = purkinje();
  Vec y = spec.steady_state(-60.0);
  const std::size_t before = spec.clamp_count();
  y[1] = 1.0 + 5e-10;
  CHECK_NOTHROW(spec.eval_rhs(y, -23.0));
  CHECK(spec.clamp_count() == before + 1);
  y[1] = -1e-6;
  CHECK_THROWS_AS(spec.eval_rhs(y, -23.0), PoisonError);
  CHECK_NOTHROW(spec.eval_rhs(y, -23.0, GateCheck::relaxed));
  Vec bad = spec.steady_state(-60.0);
  bad[0] = std::nan("");
  CHECK_THROWS_AS(spec.eval_rhs(bad, -23.0), PoisonError);
}

TEST_CASE("analytic Jacobian") {
  const ModelSpec& spec = purkinje();
  std::mt19937_64 rng(11);
  SUBCASE("gate rows are linear in the gate") {
    for (int i = 0; i < 10; ++i) {
      const Vec y = canard::testing::random_state(spec, rng);
      const Mat jac = spec.jacobian(y, -30.0);
      const auto& gates = spec.gates();
      const auto n = std::find_if(gates.begin(), gates.end(), [](const auto& g) { return g.name == "n"; });
      CHECK(jac(1, 1) == doctest::Approx(-1.0 / n->tau->eval(y[0])));
      CHECK(jac(0, 4) == doctest::Approx(-0.75 * (y[0] + 95.0)));
    }
  }
  SUBCASE("matches central finite differences") {
    for (int i = 0; i < 200; ++i) {
      const Vec y = canard::testing::random_state(spec, rng);
      const Mat jac = spec.jacobian(y, -30.0, GateCheck::relaxed);
      const Mat fd = canard::testing::fd_jacobian(
          [&](const Vec& x) { return spec.eval_rhs(x, -30.0, GateCheck::relaxed); }, y);
      const double scale = std::max(1.0, jac.cwiseAbs().maxCoeff());
      CHECK((jac - fd).cwiseAbs().maxCoeff() <= 1e-5 * scale);
    }
  }
}

TEST_CASE("freezing the slow variable") {
  const ModelSpec& spec = purkinje();
  std::mt19937_64 rng(5);
  SUBCASE("fast right-hand side equals the first four full components") {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < 100; ++i) {
      const Vec y = canard::testing::random_state(spec, rng);
      const ModelSpec fast = spec.freeze_slow({{"M", y[4]}});
      CHECK(fast.dim() == 4);
      const Vec full = spec.eval_rhs(y, -32.0);
      const Vec part = fast.eval_rhs(y.head(4), -32.0);
      CHECK((full.head(4) - part).cwiseAbs().maxCoeff() == 0.0);
    }
  }
  SUBCASE("frozen M = 0 removes the M-current") {
    const ModelSpec fast = spec.freeze_slow({{"M", 0.0}});
    const ModelSpec no_m = spec.with_conductance("M", 0.0).freeze_slow({{"M", 0.7}});
    const Vec y = spec.steady_state(-40.0).head(4);
    CHECK(fast.eval_rhs(y, -30.0)[0] == no_m.eval_rhs(y, -30.0)[0]);
  }
  SUBCASE("parameter derivative and layout") {
    const ModelSpec fast = spec.freeze_slow({{"M", 0.3}});
    CHECK(fast.state_names() == std::vector<std::string>{"V", "n", "h", "c"});
    const Vec y = spec.steady_state(-40.0).head(4);
    const Vec d = fast.frozen_derivative(y, -30.0, "M");
    CHECK(d[0] == doctest::Approx(-0.75 * (-40.0 + 95.0)));
    const ModelSpec moved = fast.with_frozen({{"M", 0.4}});
    CHECK(moved.eval_rhs(y, -30.0)[0] - fast.eval_rhs(y, -30.0)[0] == doctest::Approx(0.1 * d[0]));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(spec.freeze_slow({{"n", 0.1}}), ConfigError);
    CHECK_THROWS_AS(spec.freeze_slow({}), ConfigError);
    CHECK_THROWS_AS(spec.freeze_slow({{"M", 0.1}}).freeze_slow({{"M", 0.1}}), ConfigError);
  }
}

TEST_CASE("timescale audit") {
  SUBCASE("bundled model separates M from the fast gates") {
    const TimescaleAudit audit = purkinje().timescale_audit();
    CHECK(audit.separated);
    CHECK(audit.pointwise_ratio >= 10.0);
    CHECK(audit.rows.size() == 4);
  }
  SUBCASE("identical time constants are not separated") {
    const ModelSpec spec = parse_model(two_gate("0.25 + 4.35*exp(-abs(V + 10)/10)", "0.25 + 4.35*exp(-abs(V + 10)/10)"));
    CHECK_FALSE(spec.timescale_audit().separated);
  }
  SUBCASE("constant time constants have min = max") {
    const ModelSpec spec = parse_model(two_gate("2", "100"));
    const TimescaleAudit audit = spec.timescale_audit();
    for (const auto& row : audit.rows) CHECK(row.tau_min == row.tau_max);
    CHECK(audit.separated);
    CHECK(audit.global_ratio == doctest::Approx(50.0));
  }
}

TEST_CASE("model round-trips through its JSON form") {
  const ModelSpec& spec = purkinje();
  const ModelSpec again = parse_model(model_to_json(spec));
  std::mt19937_64 rng(9);
  for (int i = 0; i < 20; ++i) {
    const Vec y = canard::testing::random_state(spec, rng);
    CHECK((spec.eval_rhs(y, -25.0) - again.eval_rhs(y, -25.0)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("gates stay in [0, 1] along integrated trajectories") {
  const ModelSpec& spec = purkinje();
  std::mt19937_64 rng(21);
  for (double J : {-23.0, -32.94}) {
    Vec y0 = canard::testing::random_state(spec, rng);
    y0[0] = -60.0;
    const Trajectory traj = integrate(ModelSystem(spec, J), y0, 0.0, 300.0);
    for (std::size_t i = 0; i < traj.size(); ++i)
      for (std::size_t k = 1; k < 5; ++k) {
        const double x = traj.value(i, k);
        CHECK((x >= -1e-9 && x <= 1.0 + 1e-9));
      }
  }
}
