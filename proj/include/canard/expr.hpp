#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace canard {

/// Node kinds of the kinetics expression language. `efun_prime` and `sign`
/// only arise from differentiation and cannot be written in source text.
enum class Op : std::uint8_t {
  constant,
  var,
  add,
  sub,
  mul,
  div,
  pow,
  neg,
  exp,
  log,
  tanh,
  sqrt,
  abs,
  efun,
  efun_prime,
  sign,
};

/// x / (exp(x) - 1), continuous through x = 0.
double efun(double x) noexcept;
/// Derivative of efun.
double efun_prime(double x) noexcept;

/// Immutable expression in the single variable V.
///
/// Nodes live in a flat arena in topological order (operands precede the
/// node that uses them), so evaluation is a single forward sweep and
/// sub-expressions can be shared between an expression and its derivative.
class Expr {
 public:
  struct Node {
    Op op = Op::constant;
    double value = 0.0;
    std::int32_t lhs = -1;
    std::int32_t rhs = -1;
  };

  /// The constant 0.
  Expr();

  static Expr constant(double value);
  static Expr variable();

  double eval(double v) const;
  /// d/dV, simplified.
  Expr derivative() const;
  std::string str() const;

  bool is_constant() const noexcept;
  std::size_t size() const noexcept { return nodes_.size(); }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }

 private:
  friend class ExprBuilder;
  explicit Expr(std::vector<Node> nodes) : nodes_(std::move(nodes)) {}

  [[noreturn]] void report_domain_error(double v) const;

  std::vector<Node> nodes_;
};

Expr parse(std::string_view text);
inline double eval(const Expr& e, double v) { return e.eval(v); }
inline Expr differentiate(const Expr& e) { return e.derivative(); }

}  // namespace canard
