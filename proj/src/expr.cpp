#include "canard/expr.hpp"

#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fmt/format.h>

#include "canard/errors.hpp"

namespace canard {

namespace {

std::string describe_parse_error(std::size_t offset, const std::string& expected,
                                 const std::string& found, const std::string& context) {
  return fmt::format("{}{}parse error at offset {}: expected {}, found {}", context,
                     context.empty() ? "" : ": ", offset, expected, found);
}

}  // namespace

ParseError::ParseError(std::size_t offset, std::string expected, std::string found,
                       const std::string& context)
    : ConfigError("parse", describe_parse_error(offset, expected, found, context)),
      offset_(offset),
      expected_(std::move(expected)),
      found_(std::move(found)) {}

// efun(x) = x / (e^x - 1). Near zero the quotient is replaced by its Taylor
// series; for positive x the e^-x forms avoid overflow.
double efun(double x) noexcept {
  if (std::abs(x) < 1e-4) return 1.0 - x / 2.0 + x * x / 12.0;
  return x / std::expm1(x);
}

double efun_prime(double x) noexcept {
  if (std::abs(x) < 1e-4) return -0.5 + x / 6.0 - x * x * x / 180.0;
  if (x > 0.0) {
    const double u = std::exp(-x);
    const double q = 1.0 - u;
    return u / q - x * u / (q * q);
  }
  const double em1 = std::expm1(x);
  return (em1 - x * std::exp(x)) / (em1 * em1);
}

namespace {

double efun_second(double x) noexcept {
  if (std::abs(x) < 1e-4) return 1.0 / 6.0 - x * x / 60.0;
  // efun = x g with g = 1/(e^x - 1): efun'' = 2 g' + x g''.
  double g1 = 0.0;
  double g2 = 0.0;
  if (x > 0.0) {
    const double u = std::exp(-x);
    const double q = 1.0 - u;
    g1 = -u / (q * q);
    g2 = u * (1.0 + u) / (q * q * q);
  } else {
    const double ex = std::exp(x);
    const double em1 = std::expm1(x);
    g1 = -ex / (em1 * em1);
    g2 = ex * (ex + 1.0) / (em1 * em1 * em1);
  }
  return 2.0 * g1 + x * g2;
}

const char* function_name(Op op) {
  switch (op) {
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::tanh: return "tanh";
    case Op::sqrt: return "sqrt";
    case Op::abs: return "abs";
    case Op::efun: return "efun";
    case Op::efun_prime: return "efun_prime";
    case Op::sign: return "sign";
    default: return nullptr;
  }
}

// efun_prime nodes carrying this tag evaluate the second derivative of efun.
constexpr double kSecondDerivativeTag = 2.0;

double apply_unary(Op op, double x, double tag) {
  switch (op) {
    case Op::neg: return -x;
    case Op::exp: return std::exp(x);
    case Op::log: return std::log(x);
    case Op::tanh: return std::tanh(x);
    case Op::sqrt: return std::sqrt(x);
    case Op::abs: return std::abs(x);
    case Op::efun: return efun(x);
    case Op::efun_prime: return tag == kSecondDerivativeTag ? efun_second(x) : efun_prime(x);
    case Op::sign: return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
    default: return 0.0;
  }
}

double apply_binary(Op op, double a, double b) {
  switch (op) {
    case Op::add: return a + b;
    case Op::sub: return a - b;
    case Op::mul: return a * b;
    case Op::div: return a / b;
    case Op::pow: return std::pow(a, b);
    default: return 0.0;
  }
}

}  // namespace

/// Appends nodes to an arena with local algebraic simplification.
class ExprBuilder {
 public:
  using Node = Expr::Node;

  int raw(Node n) {
    nodes_.push_back(n);
    return static_cast<int>(nodes_.size()) - 1;
  }

  int constant(double v) { return raw({Op::constant, v, -1, -1}); }
  int var() { return raw({Op::var, 0.0, -1, -1}); }
  int raw_binary(Op op, int a, int b) { return raw({op, 0.0, a, b}); }
  int raw_unary(Op op, int a, double tag = 0.0) { return raw({op, tag, a, -1}); }

  bool is_const(int i, double v) const {
    return nodes_[i].op == Op::constant && nodes_[i].value == v;
  }
  bool is_const(int i) const { return nodes_[i].op == Op::constant; }
  double value(int i) const { return nodes_[i].value; }

  int binary(Op op, int a, int b) {
    if (is_const(a) && is_const(b)) {
      const double folded = apply_binary(op, value(a), value(b));
      if (std::isfinite(folded) && !(op == Op::div && value(b) == 0.0)) return constant(folded);
    }
    switch (op) {
      case Op::add:
        if (is_const(a, 0.0)) return b;
        if (is_const(b, 0.0)) return a;
        break;
      case Op::sub:
        if (is_const(b, 0.0)) return a;
        if (is_const(a, 0.0)) return unary(Op::neg, b);
        break;
      case Op::mul:
        if (is_const(a, 0.0) || is_const(b, 0.0)) return constant(0.0);
        if (is_const(a, 1.0)) return b;
        if (is_const(b, 1.0)) return a;
        if (is_const(a, -1.0)) return unary(Op::neg, b);
        if (is_const(b, -1.0)) return unary(Op::neg, a);
        break;
      case Op::div:
        if (is_const(a, 0.0)) return constant(0.0);
        if (is_const(b, 1.0)) return a;
        break;
      case Op::pow:
        if (is_const(b, 1.0)) return a;
        if (is_const(b, 0.0)) return constant(1.0);
        break;
      default:
        break;
    }
    return raw_binary(op, a, b);
  }

  int unary(Op op, int a, double tag = 0.0) {
    if (op == Op::neg) {
      if (is_const(a)) return constant(-value(a));
      if (nodes_[a].op == Op::neg) return nodes_[a].lhs;
    }
    if (op == Op::sign && is_const(a)) return constant(apply_unary(op, value(a), 0.0));
    return raw_unary(op, a, tag);
  }

  /// Copies `e` into this arena; returns the index of its root.
  int import(const Expr& e) {
    const int offset = static_cast<int>(nodes_.size());
    for (Node n : e.nodes()) {
      if (n.lhs >= 0) n.lhs += offset;
      if (n.rhs >= 0) n.rhs += offset;
      nodes_.push_back(n);
    }
    return static_cast<int>(nodes_.size()) - 1;
  }

  /// Keeps only nodes reachable from `root`, preserving topological order.
  Expr finish(int root) const {
    std::vector<char> live(nodes_.size(), 0);
    live[root] = 1;
    for (int i = root; i >= 0; --i) {
      if (!live[i]) continue;
      if (nodes_[i].lhs >= 0) live[nodes_[i].lhs] = 1;
      if (nodes_[i].rhs >= 0) live[nodes_[i].rhs] = 1;
    }
    std::vector<int> remap(nodes_.size(), -1);
    std::vector<Node> out;
    for (int i = 0; i <= root; ++i) {
      if (!live[i]) continue;
      Node n = nodes_[i];
      if (n.lhs >= 0) n.lhs = remap[n.lhs];
      if (n.rhs >= 0) n.rhs = remap[n.rhs];
      remap[i] = static_cast<int>(out.size());
      out.push_back(n);
    }
    return Expr(std::move(out));
  }

  const std::vector<Node>& nodes() const { return nodes_; }

 private:
  std::vector<Node> nodes_;
};

Expr::Expr() : nodes_{Node{Op::constant, 0.0, -1, -1}} {}

Expr Expr::constant(double value) { return Expr({Node{Op::constant, value, -1, -1}}); }

Expr Expr::variable() { return Expr({Node{Op::var, 0.0, -1, -1}}); }

bool Expr::is_constant() const noexcept {
  for (const auto& n : nodes_)
    if (n.op == Op::var) return false;
  return true;
}

namespace {

template <typename Buffer>
double sweep(const std::vector<Expr::Node>& nodes, double v, Buffer& val, bool& domain_ok) {
  const std::size_t n = nodes.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& nd = nodes[i];
    switch (nd.op) {
      case Op::constant: val[i] = nd.value; break;
      case Op::var: val[i] = v; break;
      case Op::add: val[i] = val[nd.lhs] + val[nd.rhs]; break;
      case Op::sub: val[i] = val[nd.lhs] - val[nd.rhs]; break;
      case Op::mul: val[i] = val[nd.lhs] * val[nd.rhs]; break;
      case Op::div:
        if (val[nd.rhs] == 0.0) domain_ok = false;
        val[i] = val[nd.lhs] / val[nd.rhs];
        break;
      case Op::pow: val[i] = std::pow(val[nd.lhs], val[nd.rhs]); break;
      case Op::log:
        if (!(val[nd.lhs] > 0.0)) domain_ok = false;
        val[i] = std::log(val[nd.lhs]);
        break;
      case Op::sqrt:
        if (val[nd.lhs] < 0.0) domain_ok = false;
        val[i] = std::sqrt(val[nd.lhs]);
        break;
      default: val[i] = apply_unary(nd.op, val[nd.lhs], nd.value); break;
    }
  }
  return val[n - 1];
}

}  // namespace

double Expr::eval(double v) const {
  bool domain_ok = true;
  double result = 0.0;
  if (nodes_.size() <= 256) {
    std::array<double, 256> buf;
    result = sweep(nodes_, v, buf, domain_ok);
  } else {
    std::vector<double> buf(nodes_.size());
    result = sweep(nodes_, v, buf, domain_ok);
  }
  if (!domain_ok || !std::isfinite(result)) report_domain_error(v);
  return result;
}

void Expr::report_domain_error(double v) const {
  std::vector<double> val(nodes_.size());
  bool ignored = true;
  sweep(nodes_, v, val, ignored);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& nd = nodes_[i];
    const bool bad_div = nd.op == Op::div && val[nd.rhs] == 0.0;
    const bool bad_log = nd.op == Op::log && !(val[nd.lhs] > 0.0);
    const bool bad_sqrt = nd.op == Op::sqrt && val[nd.lhs] < 0.0;
    if (bad_div || bad_log || bad_sqrt || std::isnan(val[i])) {
      ExprBuilder b;
      b.import(*this);
      const std::string sub = b.finish(static_cast<int>(i)).str();
      const char* what = bad_div ? "division by zero" : bad_log ? "log of non-positive value"
                         : bad_sqrt ? "sqrt of negative value" : "undefined value";
      throw DomainError(fmt::format("{} in '{}' at V = {}", what, sub, v));
    }
  }
  throw DomainError(fmt::format("non-finite value of '{}' at V = {}", str(), v));
}

Expr Expr::derivative() const {
  ExprBuilder b;
  const int root = b.import(*this);
  const int n = root + 1;
  std::vector<int> d(n, -1);
  for (int i = 0; i < n; ++i) {
    const Node nd = b.nodes()[i];
    const int a = nd.lhs;
    const int c = nd.rhs;
    switch (nd.op) {
      case Op::constant: d[i] = b.constant(0.0); break;
      case Op::var: d[i] = b.constant(1.0); break;
      case Op::add: d[i] = b.binary(Op::add, d[a], d[c]); break;
      case Op::sub: d[i] = b.binary(Op::sub, d[a], d[c]); break;
      case Op::mul:
        d[i] = b.binary(Op::add, b.binary(Op::mul, d[a], c), b.binary(Op::mul, a, d[c]));
        break;
      case Op::div: {
        // (a'c - a c') / c^2
        const int num = b.binary(Op::sub, b.binary(Op::mul, d[a], c), b.binary(Op::mul, a, d[c]));
        d[i] = b.binary(Op::div, num, b.binary(Op::mul, c, c));
        break;
      }
      case Op::pow:
        if (b.is_const(c)) {
          const double k = b.value(c);
          const int pw = b.binary(Op::pow, a, b.constant(k - 1.0));
          d[i] = b.binary(Op::mul, b.binary(Op::mul, b.constant(k), pw), d[a]);
        } else {
          // a^c (c' log a + c a' / a)
          const int t1 = b.binary(Op::mul, d[c], b.unary(Op::log, a));
          const int t2 = b.binary(Op::div, b.binary(Op::mul, c, d[a]), a);
          d[i] = b.binary(Op::mul, i, b.binary(Op::add, t1, t2));
        }
        break;
      case Op::neg: d[i] = b.unary(Op::neg, d[a]); break;
      case Op::exp: d[i] = b.binary(Op::mul, i, d[a]); break;
      case Op::log: d[i] = b.binary(Op::div, d[a], a); break;
      case Op::tanh: {
        const int sq = b.binary(Op::mul, i, i);
        d[i] = b.binary(Op::mul, b.binary(Op::sub, b.constant(1.0), sq), d[a]);
        break;
      }
      case Op::sqrt:
        d[i] = b.binary(Op::div, d[a], b.binary(Op::mul, b.constant(2.0), i));
        break;
      case Op::abs: d[i] = b.binary(Op::mul, b.unary(Op::sign, a), d[a]); break;
      case Op::efun: d[i] = b.binary(Op::mul, b.unary(Op::efun_prime, a), d[a]); break;
      case Op::efun_prime:
        if (nd.value == kSecondDerivativeTag)
          throw DomainError("third derivative of efun is not supported");
        d[i] = b.binary(Op::mul, b.unary(Op::efun_prime, a, kSecondDerivativeTag), d[a]);
        break;
      case Op::sign: d[i] = b.constant(0.0); break;
    }
  }
  return b.finish(d[root]);
}

// ---------------------------------------------------------------------------
// Printing

namespace {

int precedence(const Expr::Node& n) {
  switch (n.op) {
    case Op::add:
    case Op::sub: return 1;
    case Op::mul:
    case Op::div: return 2;
    case Op::neg: return 3;
    case Op::pow: return 4;
    case Op::constant: return n.value < 0.0 || std::signbit(n.value) ? 3 : 5;
    default: return 5;
  }
}

std::string format_number(double v) { return fmt::format("{}", v); }

void print_node(const std::vector<Expr::Node>& nodes, int i, int min_prec, std::string& out) {
  const auto& n = nodes[i];
  const bool paren = precedence(n) < min_prec;
  if (paren) out += '(';
  switch (n.op) {
    case Op::constant:
      out += format_number(n.value);
      break;
    case Op::var: out += 'V'; break;
    case Op::add:
    case Op::sub:
      print_node(nodes, n.lhs, 1, out);
      out += n.op == Op::add ? " + " : " - ";
      print_node(nodes, n.rhs, 2, out);
      break;
    case Op::mul:
    case Op::div:
      print_node(nodes, n.lhs, 2, out);
      out += n.op == Op::mul ? '*' : '/';
      print_node(nodes, n.rhs, 3, out);
      break;
    case Op::neg:
      out += '-';
      print_node(nodes, n.lhs, 4, out);
      break;
    case Op::pow:
      print_node(nodes, n.lhs, 5, out);
      out += '^';
      print_node(nodes, n.rhs, 3, out);
      break;
    default:
      out += n.op == Op::efun_prime && n.value == kSecondDerivativeTag ? "efun_second"
                                                                      : function_name(n.op);
      out += '(';
      print_node(nodes, n.lhs, 0, out);
      out += ')';
      break;
  }
  if (paren) out += ')';
}

}  // namespace

std::string Expr::str() const {
  std::string out;
  print_node(nodes_, static_cast<int>(nodes_.size()) - 1, 0, out);
  return out;
}

// ---------------------------------------------------------------------------
// Parsing
//
//   expr   := term (('+'|'-') term)*
//   term   := factor (('*'|'/') factor)*
//   factor := '-'? atom ('^' factor)?
//   atom   := NUMBER | 'V' | IDENT '(' expr ')' | '(' expr ')'

namespace {

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  Expr run() {
    const int root = expr();
    skip_ws();
    if (pos_ < text_.size()) fail("operator or end of input");
    return b_.finish(root);
  }

 private:
  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  char peek() {
    skip_ws();
    return pos_ < text_.size() ? text_[pos_] : '\0';
  }

  std::string found() {
    skip_ws();
    if (pos_ >= text_.size()) return "end of input";
    const char c = text_[pos_];
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t end = pos_;
      while (end < text_.size() &&
             (std::isalnum(static_cast<unsigned char>(text_[end])) || text_[end] == '_'))
        ++end;
      return fmt::format("identifier '{}'", text_.substr(pos_, end - pos_));
    }
    return fmt::format("'{}'", c);
  }

  [[noreturn]] void fail(const std::string& expected) {
    const std::string what = found();
    throw ParseError(pos_, expected, what);
  }

  void expect(char c) {
    if (peek() != c) fail(fmt::format("'{}'", c));
    ++pos_;
  }

  int expr() {
    int lhs = term();
    for (char c = peek(); c == '+' || c == '-'; c = peek()) {
      ++pos_;
      const int rhs = term();
      lhs = b_.raw_binary(c == '+' ? Op::add : Op::sub, lhs, rhs);
    }
    return lhs;
  }

  int term() {
    int lhs = factor();
    for (char c = peek(); c == '*' || c == '/'; c = peek()) {
      ++pos_;
      const int rhs = factor();
      lhs = b_.raw_binary(c == '*' ? Op::mul : Op::div, lhs, rhs);
    }
    return lhs;
  }

  int factor() {
    bool negate = false;
    if (peek() == '-') {
      ++pos_;
      negate = true;
    }
    int base = atom();
    if (peek() == '^') {
      ++pos_;
      const int exponent = factor();
      base = b_.raw_binary(Op::pow, base, exponent);
    }
    return negate ? b_.raw_unary(Op::neg, base) : base;
  }

  int atom() {
    const char c = peek();
    if (c == '(') {
      ++pos_;
      const int inner = expr();
      expect(')');
      return inner;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      const std::size_t start = pos_;
      std::size_t end = pos_;
      while (end < text_.size() &&
             (std::isalnum(static_cast<unsigned char>(text_[end])) || text_[end] == '_'))
        ++end;
      const std::string_view name = text_.substr(start, end - start);
      if (name == "V") {
        pos_ = end;
        return b_.var();
      }
      static constexpr std::array<std::pair<std::string_view, Op>, 6> kFunctions{{
          {"exp", Op::exp},
          {"log", Op::log},
          {"tanh", Op::tanh},
          {"sqrt", Op::sqrt},
          {"abs", Op::abs},
          {"efun", Op::efun},
      }};
      for (const auto& [fname, op] : kFunctions) {
        if (name == fname) {
          pos_ = end;
          expect('(');
          const int arg = expr();
          expect(')');
          return b_.raw_unary(op, arg);
        }
      }
      fail("'V' or one of exp, log, tanh, sqrt, abs, efun");
    }
    fail("number, 'V', function call or '('");
  }

  int number() {
    const std::size_t start = pos_;
    std::size_t end = pos_;
    auto digits = [&] {
      const std::size_t from = end;
      while (end < text_.size() && std::isdigit(static_cast<unsigned char>(text_[end]))) ++end;
      return end - from;
    };
    std::size_t count = digits();
    if (end < text_.size() && text_[end] == '.') {
      ++end;
      count += digits();
    }
    if (count == 0) fail("number");
    if (end < text_.size() && (text_[end] == 'e' || text_[end] == 'E')) {
      std::size_t save = end;
      ++end;
      if (end < text_.size() && (text_[end] == '+' || text_[end] == '-')) ++end;
      if (digits() == 0) {
        pos_ = save + 1;
        fail("exponent digits");
      }
    }
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(text_.data() + start, text_.data() + end, value);
    if (ec != std::errc() || ptr != text_.data() + end) fail("representable number");
    pos_ = end;
    return b_.constant(value);
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  ExprBuilder b_;
};

}  // namespace

Expr parse(std::string_view text) { return Parser(text).run(); }

}  // namespace canard
