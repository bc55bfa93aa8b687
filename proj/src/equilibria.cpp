#include "canard/equilibria.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <optional>

namespace canard {

std::string to_string(Stability s) {
  switch (s) {
    case Stability::attracting: return "attracting";
    case Stability::repelling: return "repelling";
    case Stability::saddle: return "saddle";
  }
  return "saddle";
}

ComplexVec sorted_eigenvalues(const Mat& a) {
  Eigen::EigenSolver<Mat> solver(a, false);
  if (solver.info() != Eigen::Success) throw NumericalError("eigen", "eigenvalue solver did not converge");
  ComplexVec ev(solver.eigenvalues().begin(), solver.eigenvalues().end());
  std::sort(ev.begin(), ev.end(), [](Complex l, Complex r) {
    if (l.real() != r.real()) return l.real() > r.real();
    return l.imag() > r.imag();
  });
  return ev;
}

Stability classify(const ComplexVec& eigenvalues, double margin) {
  bool all_neg = true, all_pos = true;
  for (const auto& l : eigenvalues) {
    all_neg = all_neg && l.real() < -margin;
    all_pos = all_pos && l.real() > margin;
  }
  if (all_neg) return Stability::attracting;
  if (all_pos) return Stability::repelling;
  return Stability::saddle;
}

namespace {

std::optional<Vec> try_rhs(const ParamSystem& sys, const Vec& x, double p) {
  try {
    Vec f;
    sys.rhs(x, p, f);
    if (!f.allFinite()) return std::nullopt;
    return f;
  } catch (const NumericalError&) {
    return std::nullopt;
  }
}

EquilibriumPoint make_point(const ParamSystem& sys, const Vec& x, double p) {
  EquilibriumPoint pt;
  pt.param = p;
  pt.x = x;
  pt.eigenvalues = sorted_eigenvalues(sys.jacobian(x, p));
  pt.stability = classify(pt.eigenvalues);
  pt.residual = sys.scaled_norm(sys.rhs(x, p));
  return pt;
}

// Continuation works in normalized coordinates z = (x / scale, p / param_scale).
class Normalized {
 public:
  Normalized(const ParamSystem& sys, double param_scale)
      : sys_(sys), scale_(sys.scale()), ps_(param_scale), n_(static_cast<Eigen::Index>(sys.dim())) {}

  Eigen::Index n() const { return n_; }
  Vec z_of(const Vec& x, double p) const {
    Vec z(n_ + 1);
    z.head(n_) = x.cwiseQuotient(scale_);
    z[n_] = p / ps_;
    return z;
  }
  Vec x_of(const Vec& z) const { return z.head(n_).cwiseProduct(scale_); }
  double p_of(const Vec& z) const { return z[n_] * ps_; }

  // n x (n+1) Jacobian of f with respect to z.
  Mat jac(const Vec& z) const {
    const Vec x = x_of(z);
    const double p = p_of(z);
    Mat a(n_, n_ + 1);
    Mat jx;
    Vec fp;
    sys_.jacobian(x, p, jx);
    sys_.dparam(x, p, fp);
    a.leftCols(n_) = jx * scale_.asDiagonal();
    a.col(n_) = fp * ps_;
    return a;
  }

  // Unit tangent oriented along `ref`; nullopt if the bordered matrix is singular.
  std::optional<Vec> tangent(const Vec& z, const Vec& ref) const {
    Mat b(n_ + 1, n_ + 1);
    b.topRows(n_) = jac(z);
    b.row(n_) = ref.transpose();
    Eigen::PartialPivLU<Mat> lu(b);
    if (!(lu.rcond() > 1e-14)) return std::nullopt;
    Vec rhs = Vec::Zero(n_ + 1);
    rhs[n_] = 1.0;
    Vec t = lu.solve(rhs);
    if (!t.allFinite()) return std::nullopt;
    t.normalize();
    if (t.dot(ref) < 0) t = -t;
    return t;
  }

  // Null vector of the n x (n+1) Jacobian by SVD (valid at folds too).
  Vec null_tangent(const Vec& z) const {
    Eigen::JacobiSVD<Mat> svd(jac(z), Eigen::ComputeFullV);
    Vec t = svd.matrixV().col(n_);
    return t.normalized();
  }

  struct Corrected {
    Vec z;
    int iterations = 0;
  };

  // Newton on [f(z); dir . (z - anchor)] = 0 starting from `start`.
  std::optional<Corrected> correct(const Vec& start, const Vec& anchor, const Vec& dir, int max_iter,
                                   double tol = 1e-10) const {
    Vec z = start;
    double first = -1.0;
    for (int it = 0; it <= max_iter; ++it) {
      const auto f = try_rhs(sys_, x_of(z), p_of(z));
      if (!f) return std::nullopt;
      const double r = sys_.scaled_norm(*f);
      if (first < 0) first = std::max(r, 1e-12);
      if (r > 1e3 * first + 1.0) return std::nullopt;
      Mat b(n_ + 1, n_ + 1);
      try {
        b.topRows(n_) = jac(z);
      } catch (const NumericalError&) {
        return std::nullopt;
      }
      b.row(n_) = dir.transpose();
      Vec g(n_ + 1);
      g.head(n_) = *f;
      g[n_] = dir.dot(z - anchor);
      Eigen::PartialPivLU<Mat> lu(b);
      if (!(lu.rcond() > 1e-15)) return std::nullopt;
      const Vec dz = lu.solve(-g);
      if (!dz.allFinite()) return std::nullopt;
      z += dz;
      if (sup_norm(dz) <= 1e-11 || (r <= tol && sup_norm(dz) <= 1e-8)) {
        const auto f2 = try_rhs(sys_, x_of(z), p_of(z));
        if (f2 && sys_.scaled_norm(*f2) <= tol) return Corrected{z, it + 1};
      }
    }
    return std::nullopt;
  }

  const ParamSystem& sys() const { return sys_; }

 private:
  const ParamSystem& sys_;
  Vec scale_;
  double ps_;
  Eigen::Index n_;
};

int sign_of(double v) { return (v > 0) - (v < 0); }

// Sign of prod_{i<j} (l_i + l_j); changes sign at Hopf points and neutral saddles.
int hopf_sign(const ComplexVec& ev) {
  Complex prod = 1.0;
  for (std::size_t i = 0; i < ev.size(); ++i)
    for (std::size_t j = i + 1; j < ev.size(); ++j) {
      const Complex s = ev[i] + ev[j];
      const double m = std::abs(s);
      if (m == 0.0) return 0;
      prod *= s / m;
    }
  return sign_of(prod.real());
}

// Complex pair nearest the imaginary axis, if any.
std::optional<Complex> hopf_pair(const ComplexVec& ev) {
  std::optional<Complex> best;
  for (const auto& l : ev)
    if (l.imag() > 1e-6 && (!best || std::abs(l.real()) < std::abs(best->real()))) best = l;
  return best;
}

double min_abs_real_eigenvalue(const ComplexVec& ev) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& l : ev)
    if (std::abs(l.imag()) <= 1e-6) best = std::min(best, std::abs(l.real()));
  return best;
}

}  // namespace

EquilibriumPoint find_equilibrium(const ParamSystem& sys, const Vec& guess, double p, const NewtonOptions& options) {
  if (static_cast<std::size_t>(guess.size()) != sys.dim())
    throw ConfigError(fmt::format("guess has length {}, system expects {}", guess.size(), sys.dim()));
  if (!guess.allFinite() || !std::isfinite(p)) throw ConfigError("non-finite equilibrium guess");
  Vec x = guess;
  auto f = try_rhs(sys, x, p);
  if (!f) throw NewtonFailure("no_convergence", "right-hand side not finite at the guess", x, INFINITY);
  double r = sys.scaled_norm(*f);
  for (int it = 0; it < options.max_iter; ++it) {
    if (r <= options.tol) return make_point(sys, x, p);
    Mat jac;
    sys.jacobian(x, p, jac);
    Eigen::PartialPivLU<Mat> lu(jac);
    if (!(lu.rcond() > 1e-14))
      throw NewtonFailure("near_fold", fmt::format("singular Jacobian at {} = {}", sys.param_name(), p), x, r);
    const Vec dx = lu.solve(-*f);
    bool accepted = false;
    for (double lambda = 1.0; lambda >= 1.0 / 1024; lambda *= 0.5) {
      const Vec trial = x + lambda * dx;
      const auto ft = try_rhs(sys, trial, p);
      if (!ft) continue;
      const double rt = sys.scaled_norm(*ft);
      if (rt < (1.0 - 1e-4 * lambda) * r || (lambda == 1.0 && sys.scaled_norm(dx) < 1e-9)) {
        x = trial;
        f = ft;
        r = rt;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  if (r <= options.tol) return make_point(sys, x, p);
  throw NewtonFailure("no_convergence",
                      fmt::format("Newton did not converge at {} = {} (residual {:.3g})", sys.param_name(), p, r), x, r);
}

EquilibriumBranch continue_branch(const ParamSystem& sys, const EquilibriumPoint& start,
                                  const ContinuationOptions& opt) {
  if (!(opt.p_max > opt.p_min)) throw ConfigError("continuation range is empty");
  if (!(opt.ds_min > 0 && opt.ds_min <= opt.ds && opt.ds <= opt.ds_max))
    throw ConfigError("continuation steps must satisfy 0 < ds_min <= ds <= ds_max");
  if (start.residual > 1e-9) throw ConfigError("continuation start is not a converged equilibrium");

  EquilibriumBranch branch;
  branch.param_name = sys.param_name();
  branch.param_scale = opt.param_scale > 0 ? opt.param_scale : opt.p_max - opt.p_min;
  const Normalized nz(sys, branch.param_scale);
  const Eigen::Index n = nz.n();

  Vec z = nz.z_of(start.x, start.param);
  Vec t = nz.null_tangent(z);
  if (t[n] * opt.direction < 0) t = -t;
  branch.points.push_back(start);
  branch.tangents.push_back(t);

  const Vec z_start = z;
  double ds = opt.ds;
  const double ds_cap = 0.9 * opt.ds_max;
  double travelled = 0.0;
  int halvings = 0;
  Vec dir = t;

  auto finish_at_boundary = [&](const Vec& za, const Vec& zb) {
    const double pa = nz.p_of(za), pb = nz.p_of(zb);
    const double edge = pb > opt.p_max ? opt.p_max : opt.p_min;
    const double w = (edge - pa) / (pb - pa);
    const Vec guess = nz.x_of(za + w * (zb - za));
    try {
      EquilibriumPoint pt = find_equilibrium(sys, guess, edge);
      const Vec ze = nz.z_of(pt.x, pt.param);
      branch.points.push_back(std::move(pt));
      branch.tangents.push_back(nz.tangent(ze, dir).value_or(dir));
    } catch (const NumericalError&) {
    }
    branch.end_reason = "range";
  };

  while (branch.points.size() < opt.max_points) {
    const Vec pred = z + ds * dir;
    const auto corrected = nz.correct(pred, pred, dir, opt.corrector_iter);
    std::optional<Vec> t_new;
    double dist = 0.0;
    if (corrected) {
      dist = (corrected->z - z).norm();
      t_new = nz.tangent(corrected->z, dir);
    }
    const bool geometric_ok = corrected && t_new && dist <= opt.ds_max && dist <= 2.0 * ds && t_new->dot(t) > 0.5;
    if (!geometric_ok) {
      if (!corrected) ++halvings;
      ds *= 0.5;
      if (halvings > opt.max_halvings || ds < opt.ds_min) {
        branch.end_reason = "truncated";
        branch.diagnostic = fmt::format("corrector failed near {} = {} (ds = {:.3g})", branch.param_name,
                                        nz.p_of(z), ds);
        break;
      }
      continue;
    }
    halvings = 0;
    const Vec z_new = corrected->z;
    const double p_new = nz.p_of(z_new);
    if (p_new > opt.p_max || p_new < opt.p_min) {
      finish_at_boundary(z, z_new);
      break;
    }
    branch.points.push_back(make_point(sys, nz.x_of(z_new), p_new));
    branch.tangents.push_back(*t_new);
    travelled += dist;
    dir = (z_new - z).normalized();
    z = z_new;
    t = *t_new;
    if (travelled > 4 * opt.ds_max && (z - z_start).norm() < ds) {
      branch.end_reason = "loop";
      break;
    }
    if (corrected->iterations <= 3)
      ds = std::min(ds * 1.3, ds_cap);
    else if (corrected->iterations >= 6)
      ds = std::max(ds * 0.7, opt.ds_min);
  }
  if (branch.end_reason.empty()) branch.end_reason = "max_points";
  if (opt.detect && branch.points.size() >= 2) branch.bifurcations = detect_bifurcations(sys, branch);
  return branch;
}

std::vector<BranchBifurcation> detect_bifurcations(const ParamSystem& sys, const EquilibriumBranch& branch) {
  std::vector<BranchBifurcation> out;
  if (branch.points.size() < 2) return out;
  const Normalized nz(sys, branch.param_scale);
  const Eigen::Index n = nz.n();

  for (std::size_t k = 0; k + 1 < branch.points.size(); ++k) {
    const auto& a = branch.points[k];
    const auto& b = branch.points[k + 1];
    const Vec za = nz.z_of(a.x, a.param), zb = nz.z_of(b.x, b.param);
    const Vec d = (zb - za).normalized();
    const double len = (zb - za).norm();

    // Corrected point at arclength s along the chord.
    auto point_at = [&](double s) -> std::optional<Vec> {
      const Vec anchor = za + s * d;
      const auto c = nz.correct(anchor, anchor, d, 20);
      if (!c) return std::nullopt;
      return c->z;
    };
    auto bisect = [&](auto&& test, int sa) -> std::optional<Vec> {
      double lo = 0.0, hi = len;
      std::optional<Vec> best;
      for (int it = 0; it < 60 && hi - lo > 1e-12; ++it) {
        const double mid = 0.5 * (lo + hi);
        const auto zm = point_at(mid);
        if (!zm) return std::nullopt;
        const auto s = test(*zm);
        if (!s) return std::nullopt;
        best = zm;
        if (*s == sa)
          lo = mid;
        else
          hi = mid;
      }
      return best;
    };

    const int fa = sign_of(branch.tangents[k][n]), fb = sign_of(branch.tangents[k + 1][n]);
    if (fa != 0 && fb != 0 && fa != fb) {
      BranchBifurcation bif{"fold", 0.0, {}, {}, k, false};
      const auto z = bisect(
          [&](const Vec& zm) -> std::optional<int> {
            const auto tm = nz.tangent(zm, d);
            if (!tm) return std::nullopt;
            return sign_of((*tm)[n]);
          },
          fa);
      if (z) {
        bif.param = nz.p_of(*z);
        bif.x = nz.x_of(*z);
        bif.eigenvalues = sorted_eigenvalues(sys.jacobian(bif.x, bif.param));
        bif.suspected = !(min_abs_real_eigenvalue(bif.eigenvalues) <= 1e-5);
      } else {
        bif.param = 0.5 * (a.param + b.param);
        bif.x = 0.5 * (a.x + b.x);
        bif.suspected = true;
      }
      out.push_back(std::move(bif));
    }

    const int ha = hopf_sign(a.eigenvalues), hb = hopf_sign(b.eigenvalues);
    if (ha != 0 && hb != 0 && ha != hb) {
      BranchBifurcation bif{"hopf", 0.0, {}, {}, k, false};
      const auto z = bisect(
          [&](const Vec& zm) -> std::optional<int> {
            const int s = hopf_sign(sorted_eigenvalues(sys.jacobian(nz.x_of(zm), nz.p_of(zm))));
            if (s == 0) return std::nullopt;
            return s;
          },
          ha);
      if (z) {
        bif.param = nz.p_of(*z);
        bif.x = nz.x_of(*z);
        bif.eigenvalues = sorted_eigenvalues(sys.jacobian(bif.x, bif.param));
        const auto pair = hopf_pair(bif.eigenvalues);
        // A real pair l, -l (neutral saddle) also flips the test; not a bifurcation.
        if (!pair) continue;
        bif.suspected = !(std::abs(pair->real()) <= 1e-6 * std::max(1.0, pair->imag()));
      } else {
        bif.param = 0.5 * (a.param + b.param);
        bif.x = 0.5 * (a.x + b.x);
        bif.suspected = true;
      }
      out.push_back(std::move(bif));
    }
  }
  return out;
}

std::vector<EquilibriumPoint> equilibria_at(const ParamSystem& sys, const EquilibriumBranch& branch, double p) {
  // Sub-segments split at detected folds so a turn inside one segment is not missed.
  struct Node {
    double param;
    Vec x;
  };
  std::vector<Node> nodes;
  for (std::size_t k = 0; k < branch.points.size(); ++k) {
    nodes.push_back({branch.points[k].param, branch.points[k].x});
    for (const auto& bif : branch.bifurcations)
      if (bif.kind == "fold" && bif.segment == k && !bif.suspected) nodes.push_back({bif.param, bif.x});
  }
  std::vector<EquilibriumPoint> found;
  for (std::size_t k = 0; k + 1 < nodes.size(); ++k) {
    const double pa = nodes[k].param, pb = nodes[k + 1].param;
    const bool hit = (pa <= p && p < pb) || (pb < p && p <= pa) || (k + 2 == nodes.size() && pb == p);
    if (!hit || pa == pb) continue;
    const double w = (p - pa) / (pb - pa);
    const Vec guess = nodes[k].x + w * (nodes[k + 1].x - nodes[k].x);
    try {
      EquilibriumPoint pt = find_equilibrium(sys, guess, p);
      const bool dup = std::any_of(found.begin(), found.end(), [&](const EquilibriumPoint& q) {
        return sys.scaled_norm(q.x - pt.x) < 1e-7;
      });
      if (!dup) found.push_back(std::move(pt));
    } catch (const NumericalError&) {
    }
  }
  std::sort(found.begin(), found.end(), [](const auto& l, const auto& r) { return l.x[0] < r.x[0]; });
  return found;
}

}  // namespace canard
