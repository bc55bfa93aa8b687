#include "canard/model.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <set>

#include "canard/errors.hpp"

namespace canard {

ModelSpec::ModelSpec(std::string name, double capacitance, std::vector<CurrentSpec> currents,
                     std::vector<GateSpec> gates, std::vector<std::string> slow, std::string drive)
    : name_(std::move(name)),
      capacitance_(capacitance),
      drive_(std::move(drive)),
      currents_(std::move(currents)),
      gates_(std::move(gates)),
      slow_(std::move(slow)),
      clamp_counter_(std::make_shared<std::atomic<std::size_t>>(0)) {
  if (!(capacitance_ > 0.0) || !std::isfinite(capacitance_))
    throw ConfigError(fmt::format("capacitance must be positive, got {}", capacitance_));
  if (drive_.empty()) throw ConfigError("drive parameter name must not be empty");

  std::set<std::string> names;
  for (const auto& g : gates_) {
    if (g.name.empty() || g.name == "V") throw ConfigError("gate names must be non-empty and not 'V'");
    if (!names.insert(g.name).second) throw ConfigError(fmt::format("gate '{}' defined twice", g.name));
    if (g.instantaneous && g.tau)
      throw ConfigError(fmt::format("instantaneous gate '{}' must not define tau", g.name));
    if (!g.instantaneous && !g.tau)
      throw ConfigError(fmt::format("gate '{}' is missing its tau expression", g.name));
  }
  for (const auto& c : currents_) {
    if (!(c.g >= 0.0) || !std::isfinite(c.g))
      throw ConfigError(fmt::format("current '{}' has invalid conductance {}", c.name, c.g));
    if (!std::isfinite(c.reversal))
      throw ConfigError(fmt::format("current '{}' has non-finite reversal potential", c.name));
    for (const auto& f : c.gates) {
      if (!names.contains(f.var))
        throw ConfigError(fmt::format("current '{}' references undefined gate '{}'", c.name, f.var));
      if (f.exponent < 1)
        throw ConfigError(fmt::format("current '{}': exponent of '{}' must be >= 1", c.name, f.var));
    }
  }
  for (const auto& s : slow_) {
    auto it = std::find_if(gates_.begin(), gates_.end(), [&](const GateSpec& g) { return g.name == s; });
    if (it == gates_.end()) throw ConfigError(fmt::format("slow variable '{}' is not a gate", s));
    if (it->instantaneous)
      throw ConfigError(fmt::format("slow variable '{}' cannot be instantaneous", s));
  }
  compile();
  validate_gate_ranges();
}

void ModelSpec::compile() {
  compiled_gates_.clear();
  int full = 1;
  for (const auto& g : gates_) {
    CompiledGate cg;
    cg.xinf = g.xinf;
    cg.dxinf = g.xinf.derivative();
    cg.instantaneous = g.instantaneous;
    cg.slow = std::find(slow_.begin(), slow_.end(), g.name) != slow_.end();
    if (!g.instantaneous) {
      cg.tau = *g.tau;
      cg.dtau = g.tau->derivative();
      cg.full_index = full++;
    }
    compiled_gates_.push_back(std::move(cg));
  }
  compiled_currents_.clear();
  for (const auto& c : currents_) {
    CompiledCurrent cc{c.g, c.reversal, {}};
    for (const auto& f : c.gates) {
      const auto it = std::find_if(gates_.begin(), gates_.end(),
                                   [&](const GateSpec& g) { return g.name == f.var; });
      cc.factors.push_back({static_cast<int>(it - gates_.begin()), f.exponent});
    }
    compiled_currents_.push_back(std::move(cc));
  }
  rebuild_layout();
}

void ModelSpec::rebuild_layout() {
  state_names_ = {"V"};
  for (std::size_t i = 0; i < gates_.size(); ++i) {
    auto& cg = compiled_gates_[i];
    cg.frozen.reset();
    cg.state_index = -1;
    if (cg.instantaneous) continue;
    if (auto it = frozen_.find(gates_[i].name); it != frozen_.end()) {
      cg.frozen = it->second;
      continue;
    }
    cg.state_index = static_cast<int>(state_names_.size());
    state_names_.push_back(gates_[i].name);
  }
}

void ModelSpec::validate_gate_ranges() const {
  for (std::size_t i = 0; i < gates_.size(); ++i) {
    const auto& g = gates_[i];
    for (int k = 0; k <= static_cast<int>(kGridHi - kGridLo); ++k) {
      const double v = kGridLo + k;
      double x = 0.0;
      try {
        x = g.xinf.eval(v);
      } catch (const DomainError& e) {
        throw ConfigError(fmt::format("gate '{}': steady state undefined at V = {}: {}", g.name, v, e.what()));
      }
      if (x < 0.0 || x > 1.0)
        throw ConfigError(fmt::format("gate '{}': steady state {} outside [0, 1] at V = {}", g.name, x, v));
      if (g.tau) {
        double t = 0.0;
        try {
          t = g.tau->eval(v);
        } catch (const DomainError& e) {
          throw ConfigError(fmt::format("gate '{}': tau undefined at V = {}: {}", g.name, v, e.what()));
        }
        if (!(t > 0.0))
          throw ConfigError(fmt::format("gate '{}': tau {} not positive at V = {}", g.name, t, v));
      }
    }
  }
}

std::optional<std::size_t> ModelSpec::index_of(const std::string& var) const {
  const auto it = std::find(state_names_.begin(), state_names_.end(), var);
  if (it == state_names_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - state_names_.begin());
}

double ModelSpec::gate_value(int gate, const Vec& y, double /*V*/, const double* xinf,
                             GateCheck check) const {
  const auto& cg = compiled_gates_[gate];
  if (cg.instantaneous) return xinf[gate];
  if (cg.frozen) return *cg.frozen;
  double x = y[cg.state_index];
  if (check == GateCheck::strict && !(x >= 0.0 && x <= 1.0)) {
    if (!(x >= -kGateTolerance && x <= 1.0 + kGateTolerance))
      throw PoisonError(gates_[gate].name,
                        fmt::format("gate '{}' = {} outside [0, 1]", gates_[gate].name, x));
    clamp_counter_->fetch_add(1, std::memory_order_relaxed);
    x = std::clamp(x, 0.0, 1.0);
  }
  return x;
}

template <bool WithJacobian>
void ModelSpec::evaluate(const Vec& y, double J, Vec& dy, Mat* jac, GateCheck check) const {
  const std::size_t n = dim();
  if (static_cast<std::size_t>(y.size()) != n)
    throw ConfigError(fmt::format("state has length {}, model '{}' expects {}", y.size(), name_, n));
  const double V = y[0];
  if (!std::isfinite(V)) throw PoisonError("V", fmt::format("non-finite membrane potential {}", V));

  const std::size_t ng = compiled_gates_.size();
  constexpr std::size_t kMaxGates = 32;
  if (ng > kMaxGates) throw ConfigError("too many gates");
  double xinf[kMaxGates], dxinf[kMaxGates], x[kMaxGates];
  for (std::size_t i = 0; i < ng; ++i) {
    xinf[i] = compiled_gates_[i].xinf.eval(V);
    if constexpr (WithJacobian) dxinf[i] = compiled_gates_[i].dxinf.eval(V);
  }
  for (std::size_t i = 0; i < ng; ++i) x[i] = gate_value(static_cast<int>(i), y, V, xinf, check);

  dy.resize(static_cast<Eigen::Index>(n));
  if constexpr (WithJacobian) jac->setZero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));

  const double inv_c = 1.0 / capacitance_;
  double total = 0.0;
  for (std::size_t k = 0; k < compiled_currents_.size(); ++k) {
    const auto& cc = compiled_currents_[k];
    double prod = 1.0;
    for (const auto& f : cc.factors) prod *= std::pow(x[f.gate], f.exponent);
    const double drive = V - cc.reversal;
    const double current = cc.g * prod * drive;
    if (!std::isfinite(current))
      throw PoisonError(currents_[k].name, fmt::format("current '{}' is not finite", currents_[k].name));
    total += current;
    if constexpr (WithJacobian) {
      double dprod_dv = 0.0;
      for (std::size_t a = 0; a < cc.factors.size(); ++a) {
        const auto& fa = cc.factors[a];
        double partial = fa.exponent * std::pow(x[fa.gate], fa.exponent - 1);
        for (std::size_t b = 0; b < cc.factors.size(); ++b)
          if (b != a) partial *= std::pow(x[cc.factors[b].gate], cc.factors[b].exponent);
        const auto& cg = compiled_gates_[fa.gate];
        if (cg.instantaneous) {
          dprod_dv += partial * dxinf[fa.gate];
        } else if (cg.state_index >= 0) {
          (*jac)(0, cg.state_index) -= inv_c * cc.g * drive * partial;
        }
      }
      (*jac)(0, 0) -= inv_c * cc.g * (prod + drive * dprod_dv);
    }
  }
  dy[0] = (-J - total) * inv_c;
  if (!std::isfinite(dy[0])) throw PoisonError("V", "dV/dt is not finite");

  for (std::size_t i = 0; i < ng; ++i) {
    const auto& cg = compiled_gates_[i];
    if (cg.state_index < 0) continue;
    const double tau = cg.tau.eval(V);
    const double gap = xinf[i] - x[i];
    const double rate = gap / tau;
    if (!std::isfinite(rate))
      throw PoisonError(gates_[i].name, fmt::format("d{}/dt is not finite", gates_[i].name));
    dy[cg.state_index] = rate;
    if constexpr (WithJacobian) {
      const double dtau = cg.dtau.eval(V);
      (*jac)(cg.state_index, 0) = dxinf[i] / tau - gap * dtau / (tau * tau);
      (*jac)(cg.state_index, cg.state_index) = -1.0 / tau;
    }
  }
}

Vec ModelSpec::eval_rhs(const Vec& y, double J, GateCheck check) const {
  Vec dy;
  evaluate<false>(y, J, dy, nullptr, check);
  return dy;
}

void ModelSpec::eval_rhs(const Vec& y, double J, Vec& dy, GateCheck check) const {
  evaluate<false>(y, J, dy, nullptr, check);
}

Mat ModelSpec::jacobian(const Vec& y, double J, GateCheck check) const {
  Mat jac;
  jacobian(y, J, jac, check);
  return jac;
}

void ModelSpec::jacobian(const Vec& y, double J, Mat& jac, GateCheck check) const {
  Vec dy;
  evaluate<true>(y, J, dy, &jac, check);
}

Vec ModelSpec::drive_derivative() const {
  Vec d = Vec::Zero(static_cast<Eigen::Index>(dim()));
  d[0] = -1.0 / capacitance_;
  return d;
}

Vec ModelSpec::frozen_derivative(const Vec& y, double /*J*/, const std::string& var) const {
  const auto git = std::find_if(gates_.begin(), gates_.end(), [&](const GateSpec& g) { return g.name == var; });
  if (git == gates_.end() || !frozen_.contains(var))
    throw ConfigError(fmt::format("'{}' is not a frozen variable of model '{}'", var, name_));
  const int target = static_cast<int>(git - gates_.begin());
  const double V = y[0];
  const std::size_t ng = compiled_gates_.size();
  std::vector<double> xinf(ng), x(ng);
  for (std::size_t i = 0; i < ng; ++i) xinf[i] = compiled_gates_[i].xinf.eval(V);
  for (std::size_t i = 0; i < ng; ++i) x[i] = gate_value(static_cast<int>(i), y, V, xinf.data(), GateCheck::relaxed);

  Vec d = Vec::Zero(static_cast<Eigen::Index>(dim()));
  for (const auto& cc : compiled_currents_) {
    for (std::size_t a = 0; a < cc.factors.size(); ++a) {
      if (cc.factors[a].gate != target) continue;
      double partial = cc.factors[a].exponent * std::pow(x[target], cc.factors[a].exponent - 1);
      for (std::size_t b = 0; b < cc.factors.size(); ++b)
        if (b != a) partial *= std::pow(x[cc.factors[b].gate], cc.factors[b].exponent);
      d[0] -= cc.g * (V - cc.reversal) * partial / capacitance_;
    }
  }
  return d;
}

ModelSpec ModelSpec::freeze_slow(const std::map<std::string, double>& values) const {
  if (!frozen_.empty()) throw ConfigError(fmt::format("model '{}' is already frozen", name_));
  for (const auto& [k, v] : values) {
    if (std::find(slow_.begin(), slow_.end(), k) == slow_.end())
      throw ConfigError(fmt::format("'{}' is not a slow variable of model '{}'", k, name_));
    if (!std::isfinite(v)) throw ConfigError(fmt::format("frozen value of '{}' is not finite", k));
  }
  for (const auto& s : slow_)
    if (!values.contains(s)) throw ConfigError(fmt::format("no frozen value given for slow variable '{}'", s));
  ModelSpec out = *this;
  out.frozen_ = values;
  out.clamp_counter_ = std::make_shared<std::atomic<std::size_t>>(0);
  out.rebuild_layout();
  return out;
}

ModelSpec ModelSpec::with_frozen(const std::map<std::string, double>& values) const {
  ModelSpec out = *this;
  for (const auto& [k, v] : values) {
    if (!frozen_.contains(k)) throw ConfigError(fmt::format("'{}' is not frozen in model '{}'", k, name_));
    out.frozen_[k] = v;
  }
  out.rebuild_layout();
  return out;
}

ModelSpec ModelSpec::with_conductance(const std::string& current, double g) const {
  ModelSpec out = *this;
  bool found = false;
  for (std::size_t k = 0; k < out.currents_.size(); ++k) {
    if (out.currents_[k].name != current) continue;
    if (!(g >= 0.0) || !std::isfinite(g))
      throw ConfigError(fmt::format("conductance of '{}' must be >= 0, got {}", current, g));
    out.currents_[k].g = g;
    out.compiled_currents_[k].g = g;
    found = true;
  }
  if (!found) throw ConfigError(fmt::format("model '{}' has no current named '{}'", name_, current));
  return out;
}

Vec ModelSpec::steady_state(double V) const {
  Vec y(static_cast<Eigen::Index>(dim()));
  y[0] = V;
  for (const auto& cg : compiled_gates_)
    if (cg.state_index >= 0) y[cg.state_index] = cg.xinf.eval(V);
  return y;
}

double ModelSpec::min_fast_tau(const Vec& y) const {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& cg : compiled_gates_) {
    if (cg.state_index < 0 || cg.slow) continue;
    best = std::min(best, cg.tau.eval(y[0]));
  }
  return best;
}

TimescaleAudit ModelSpec::timescale_audit(double required_ratio, double window_lo,
                                          double window_hi) const {
  TimescaleAudit audit;
  audit.window_lo = window_lo;
  audit.window_hi = window_hi;
  const int steps = static_cast<int>(kGridHi - kGridLo);
  double slow_min = std::numeric_limits<double>::infinity();
  double fast_max = 0.0;
  for (std::size_t i = 0; i < gates_.size(); ++i) {
    const auto& cg = compiled_gates_[i];
    if (cg.instantaneous) continue;
    TimescaleRow row{gates_[i].name, cg.slow, std::numeric_limits<double>::infinity(), 0.0};
    for (int k = 0; k <= steps; ++k) {
      const double t = cg.tau.eval(kGridLo + k);
      row.tau_min = std::min(row.tau_min, t);
      row.tau_max = std::max(row.tau_max, t);
    }
    if (cg.slow) slow_min = std::min(slow_min, row.tau_min);
    else fast_max = std::max(fast_max, row.tau_max);
    audit.rows.push_back(row);
  }
  const bool has_slow = std::any_of(audit.rows.begin(), audit.rows.end(), [](const auto& r) { return r.slow; });
  const bool has_fast = std::any_of(audit.rows.begin(), audit.rows.end(), [](const auto& r) { return !r.slow; });
  if (!has_slow || !has_fast) {
    audit.global_ratio = audit.pointwise_ratio = std::numeric_limits<double>::infinity();
    audit.separated = has_slow || has_fast;
    return audit;
  }
  audit.global_ratio = slow_min / fast_max;

  double pointwise = std::numeric_limits<double>::infinity();
  const int wsteps = static_cast<int>(std::floor(window_hi - window_lo));
  for (int k = 0; k <= wsteps; ++k) {
    const double v = window_lo + k;
    double slow_tau = std::numeric_limits<double>::infinity();
    double fast_tau = 0.0;
    for (const auto& cg : compiled_gates_) {
      if (cg.instantaneous) continue;
      const double t = cg.tau.eval(v);
      if (cg.slow) slow_tau = std::min(slow_tau, t);
      else fast_tau = std::max(fast_tau, t);
    }
    pointwise = std::min(pointwise, slow_tau / fast_tau);
  }
  audit.pointwise_ratio = pointwise;
  audit.separated = pointwise >= required_ratio;
  return audit;
}

std::size_t ModelSpec::clamp_count() const noexcept { return clamp_counter_->load(); }

}  // namespace canard
