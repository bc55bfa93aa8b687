#include <cmath>
#include <random>
#include <string>

#include "canard/errors.hpp"
#include "canard/expr.hpp"
#include "doctest.h"

using canard::DomainError;
using canard::Expr;
using canard::ParseError;
using canard::parse;

namespace {

double at(const std::string& text, double v) { return parse(text).eval(v); }
double slope(const std::string& text, double v) { return parse(text).derivative().eval(v); }

// Random expression source over the full grammar.
class ExprGen {
 public:
  explicit ExprGen(std::uint64_t seed) : rng_(seed) {}

  std::string expr(int depth) {
    if (depth <= 0) return leaf();
    switch (pick(10)) {
      case 0: return expr(depth - 1) + " + " + expr(depth - 1);
      case 1: return expr(depth - 1) + " - " + expr(depth - 1);
      case 2: return "(" + expr(depth - 1) + ")*(" + expr(depth - 1) + ")";
      case 3: return "(" + expr(depth - 1) + ")/(2 + tanh(" + expr(depth - 1) + "))";
      case 4: return "(" + expr(depth - 1) + ")^" + std::to_string(1 + pick(3));
      case 5: return "-" + atom(depth - 1);
      case 6: {
        static const char* fns[] = {"exp", "tanh", "abs", "efun"};
        const char* fn = fns[pick(4)];
        const std::string scale = std::string(fn) == "exp" || std::string(fn) == "efun" ? "/40" : "";
        return std::string(fn) + "((" + expr(depth - 1) + ")" + scale + ")";
      }
      case 7: return "log(1 + (" + expr(depth - 1) + ")^2)";
      case 8: return "sqrt(2 + abs(" + expr(depth - 1) + "))";
      default: return atom(depth - 1);
    }
  }

 private:
  std::string atom(int depth) { return depth <= 0 ? leaf() : "(" + expr(depth) + ")"; }
  std::string leaf() {
    if (pick(2) == 0) return "V";
    std::uniform_real_distribution<double> u(0.1, 10.0);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", u(rng_));
    return buf;
  }
  int pick(int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng_); }

  std::mt19937_64 rng_;
};

}  // namespace

TEST_CASE("parse and evaluate basic expressions") {
  CHECK(at("1/(1+exp(-(V+30)/5))", -30.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(at("V^2 - 4", 3.0) == 5.0);
  CHECK(at("efun(0.0)", 0.0) == 1.0);
  CHECK(at("exp(0)", 7.0) == 1.0);
  CHECK(at("  2 *  V ", 4.0) == 8.0);
  CHECK(at("1.5e2 + .5", 0.0) == 150.5);
  CHECK(at("2^3^2", 0.0) == 512.0);
  CHECK(at("2^-1", 0.0) == 0.5);
  CHECK(at("8/4/2", 0.0) == 1.0);
  CHECK(at("V - -3", 1.0) == 4.0);
}

TEST_CASE("unary minus binds looser than power") {
  CHECK(at("-2^2", 0.0) == -4.0);
  CHECK(at("-V^2", 3.0) == -9.0);
  CHECK(at("(-2)^2", 0.0) == 4.0);
}

TEST_CASE("efun near its removable singularity") {
  // 50-digit reference: 1e-9 / expm1(1e-9) = 0.99999999950000000008333...
  CHECK(std::abs(canard::efun(1e-9) - 0.99999999950000000008333333) <= 1e-15);
  CHECK(std::abs(at("efun(1e-9)", 0.0) - (1.0 - 5e-10)) <= 1e-15);
  // Both sides of the series switch, against the same reference.
  CHECK(std::abs(canard::efun(1e-4) - 0.999950000833333333194) <= 1e-14);
  CHECK(std::abs(canard::efun(-1e-4) - 1.00005000083333333319) <= 1e-14);
  CHECK(std::abs(canard::efun(1e-4) - 1.0) <= 1e-4);
  CHECK(std::abs(canard::efun(-1e-4) - 1.0) <= 1e-4);
  CHECK(std::isfinite(canard::efun(800.0)));
  CHECK(canard::efun(-50.0) == doctest::Approx(50.0));
}

TEST_CASE("efun derivative matches finite differences on both branches") {
  for (double x : {-30.0, -2.0, -1e-3, -5e-5, 0.0, 5e-5, 1e-3, 2.0, 30.0, 700.0}) {
    const double h = 1e-6 * std::max(1.0, std::abs(x));
    const double fd = (canard::efun(x + h) - canard::efun(x - h)) / (2 * h);
    CHECK(canard::efun_prime(x) == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
  }
  // Second derivative through differentiating twice.
  const Expr e = parse("efun(V)").derivative();
  const Expr e2 = e.derivative();
  for (double x : {-3.0, -1e-5, 0.0, 1e-5, 0.7, 4.0}) {
    const double h = 1e-5;
    const double fd = (e.eval(x + h) - e.eval(x - h)) / (2 * h);
    CHECK(e2.eval(x) == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
  }
}

TEST_CASE("symbolic derivative examples") {
  CHECK(slope("V^2", 3.0) == 6.0);
  CHECK(slope("exp(2*V)", 0.0) == 2.0);
  CHECK(slope("1/(1+exp(-(V+30)/5))", -30.0) == doctest::Approx(0.05).epsilon(1e-14));
  CHECK(slope("abs(V)", -2.0) == -1.0);
  CHECK(slope("V^V", 2.0) == doctest::Approx(4.0 * (std::log(2.0) + 1.0)));
  CHECK(slope("sqrt(V)", 4.0) == doctest::Approx(0.25));
  CHECK(slope("log(V)", 4.0) == doctest::Approx(0.25));
  CHECK(slope("tanh(V)", 0.0) == doctest::Approx(1.0));
  CHECK(parse("3 + 4*2").derivative().str() == "0");
}

TEST_CASE("parse errors carry offset and context") {
  SUBCASE("unknown identifier") {
    try {
      parse("1 + foo(V)");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.offset() == 4);
      CHECK(e.found() == "identifier 'foo'");
    }
  }
  SUBCASE("unbalanced parens") {
    CHECK_THROWS_AS(parse("(V + 1"), ParseError);
    CHECK_THROWS_AS(parse("V + 1)"), ParseError);
  }
  SUBCASE("trailing input") {
    try {
      parse("V V");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.offset() == 2);
      CHECK(e.offset() <= 3);
    }
  }
  SUBCASE("only V is a variable") { CHECK_THROWS_AS(parse("x + 1"), ParseError); }
  SUBCASE("empty input reports end of input") {
    try {
      parse("   ");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.found() == "end of input");
      CHECK(e.offset() == 3);
    }
  }
  SUBCASE("derivative-only functions are not source syntax") {
    CHECK_THROWS_AS(parse("efun_prime(V)"), ParseError);
    CHECK_THROWS_AS(parse("sign(V)"), ParseError);
  }
  SUBCASE("double unary minus") { CHECK_THROWS_AS(parse("--V"), ParseError); }
}

TEST_CASE("domain errors are reported, never NaN") {
  CHECK_THROWS_AS(at("log(V)", -1.0), DomainError);
  CHECK_THROWS_AS(at("log(V)", 0.0), DomainError);
  CHECK_THROWS_AS(at("sqrt(V)", -1.0), DomainError);
  CHECK_THROWS_AS(at("1/V", 0.0), DomainError);
  CHECK_THROWS_AS(at("V^0.5", -4.0), DomainError);
  CHECK_THROWS_AS(at("exp(V)*exp(V)", 400.0), DomainError);
  // Overflow inside a saturating sigmoid is a legitimate limit.
  CHECK(at("1/(1+exp(-V))", -800.0) == 0.0);
  try {
    at("2 + log(V - 3)", 1.0);
    FAIL("expected DomainError");
  } catch (const DomainError& e) {
    CHECK(std::string(e.what()).find("log") != std::string::npos);
  }
}

TEST_CASE("printing is a fixed point of parse") {
  ExprGen gen(0x5eed);
  for (int i = 0; i < 1000; ++i) {
    const std::string src = gen.expr(4);
    const Expr e = parse(src);
    const std::string p1 = e.str();
    const Expr e1 = parse(p1);
    const std::string p2 = e1.str();
    REQUIRE_MESSAGE(p1 == p2, src);
    for (double v : {-61.0, 0.5, 17.0}) {
      double a = 0.0, b = 0.0;
      bool ok = true;
      try {
        a = e.eval(v);
        b = e1.eval(v);
      } catch (const DomainError&) {
        ok = false;
      }
      if (ok) CHECK(a == b);
    }
  }
  CHECK(parse("-V^2").str() == "-V^2");
  CHECK(parse("(-V)^2").str() == "(-V)^2");
}

TEST_CASE("symbolic derivative agrees with central differences") {
  ExprGen gen(42);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> volt(-120.0, 60.0);
  int checked = 0;
  for (int i = 0; i < 1000; ++i) {
    const Expr e = parse(gen.expr(3));
    const Expr de = e.derivative();
    const double v = volt(rng);
    const double h = 1e-6 * std::max(1.0, std::abs(v));
    double analytic = 0.0, fd = 0.0;
    try {
      analytic = de.eval(v);
      fd = (e.eval(v + h) - e.eval(v - h)) / (2 * h);
    } catch (const DomainError&) {
      continue;
    }
    ++checked;
    CHECK_MESSAGE(std::abs(analytic - fd) <= 1e-5 * std::max(1.0, std::abs(analytic)), e.str());
  }
  CHECK(checked >= 900);
}

TEST_CASE("expressions are immutable values safe to copy") {
  const Expr e = parse("V*V + 1");
  Expr copy = e;
  copy = parse("V");
  CHECK(e.eval(2.0) == 5.0);
  CHECK(copy.eval(2.0) == 2.0);
  CHECK(Expr().eval(3.0) == 0.0);
  CHECK(Expr::constant(2.5).is_constant());
  CHECK_FALSE(Expr::variable().is_constant());
}
