#include "canard/param_system.hpp"

#include <fmt/format.h>

#include "canard/errors.hpp"

namespace canard {

namespace {

// The continuation layer works on Newton iterates, which may step outside
// the gate box; range checks belong to the trajectory code.
constexpr GateCheck kCheck = GateCheck::relaxed;

Vec model_scale(const ModelSpec& spec, Eigen::Index skip = -1) {
  Vec s = Vec::Ones(static_cast<Eigen::Index>(spec.dim()));
  s[0] = 100.0;
  if (skip < 0) return s;
  Vec out(s.size() - 1);
  for (Eigen::Index i = 0, k = 0; i < s.size(); ++i)
    if (i != skip) out[k++] = s[i];
  return out;
}

}  // namespace

void ParamSystem::jacobian(const Vec& x, double p, Mat& jac) const {
  const Eigen::Index n = static_cast<Eigen::Index>(dim());
  jac.resize(n, n);
  Vec fp, fm;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double h = 1e-7 * std::max(1.0, std::abs(x[j]));
    Vec xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    rhs(xp, p, fp);
    rhs(xm, p, fm);
    jac.col(j) = (fp - fm) / (2.0 * h);
  }
}

void ParamSystem::dparam(const Vec& x, double p, Vec& out) const {
  const double h = 1e-7 * std::max(1.0, std::abs(p));
  Vec fp, fm;
  rhs(x, p + h, fp);
  rhs(x, p - h, fm);
  out = (fp - fm) / (2.0 * h);
}

std::vector<std::string> ParamSystem::state_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < dim(); ++i) names.push_back(fmt::format("x{}", i + 1));
  return names;
}

double ParamSystem::scaled_norm(const Vec& v) const { return sup_norm(v.cwiseQuotient(scale())); }

void FunctionParamSystem::jacobian(const Vec& x, double p, Mat& jac) const {
  if (jac_)
    jac_(x, p, jac);
  else
    ParamSystem::jacobian(x, p, jac);
}

void FunctionParamSystem::dparam(const Vec& x, double p, Vec& fp) const {
  if (dp_)
    dp_(x, p, fp);
  else
    ParamSystem::dparam(x, p, fp);
}

void DriveSystem::rhs(const Vec& x, double J, Vec& f) const { spec_.eval_rhs(x, J, f, kCheck); }
void DriveSystem::jacobian(const Vec& x, double J, Mat& jac) const { spec_.jacobian(x, J, jac, kCheck); }
void DriveSystem::dparam(const Vec&, double, Vec& fp) const { fp = spec_.drive_derivative(); }
Vec DriveSystem::scale() const { return model_scale(spec_); }
double DriveSystem::max_step(const Vec& x, double) const { return 0.25 * spec_.min_fast_tau(x); }

FrozenSlowSystem::FrozenSlowSystem(ModelSpec spec, const std::string& slow_var, double J)
    : spec_(std::move(spec)), slow_var_(slow_var), J_(J) {
  const auto idx = spec_.index_of(slow_var);
  if (!idx || *idx == 0)
    throw ConfigError(fmt::format("'{}' is not a gate state of model '{}'", slow_var, spec_.name()));
  slow_index_ = static_cast<Eigen::Index>(*idx);
}

Vec FrozenSlowSystem::embed(const Vec& x, double m) const {
  const Eigen::Index n = x.size() + 1;
  Vec y(n);
  y.head(slow_index_) = x.head(slow_index_);
  y[slow_index_] = m;
  y.tail(n - slow_index_ - 1) = x.tail(n - slow_index_ - 1);
  return y;
}

Vec FrozenSlowSystem::project(const Vec& y) const {
  const Eigen::Index n = y.size();
  Vec x(n - 1);
  x.head(slow_index_) = y.head(slow_index_);
  x.tail(n - slow_index_ - 1) = y.tail(n - slow_index_ - 1);
  return x;
}

void FrozenSlowSystem::rhs(const Vec& x, double m, Vec& f) const {
  Vec full;
  spec_.eval_rhs(embed(x, m), J_, full, kCheck);
  f = project(full);
}

void FrozenSlowSystem::jacobian(const Vec& x, double m, Mat& jac) const {
  const Mat full = spec_.jacobian(embed(x, m), J_, kCheck);
  const Eigen::Index n = full.rows() - 1, s = slow_index_;
  jac.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) jac(i, j) = full(i < s ? i : i + 1, j < s ? j : j + 1);
}

void FrozenSlowSystem::dparam(const Vec& x, double m, Vec& fp) const {
  const Mat full = spec_.jacobian(embed(x, m), J_, kCheck);
  fp = project(full.col(slow_index_));
}

Vec FrozenSlowSystem::scale() const { return model_scale(spec_, slow_index_); }

double FrozenSlowSystem::max_step(const Vec& x, double m) const { return 0.25 * spec_.min_fast_tau(embed(x, m)); }

std::vector<std::string> FrozenSlowSystem::state_names() const {
  std::vector<std::string> names = spec_.state_names();
  names.erase(names.begin() + slow_index_);
  return names;
}

Vec FrozenSlowSystem::steady_state(double V) const { return project(spec_.steady_state(V)); }

}  // namespace canard
