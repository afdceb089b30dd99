#include "davil/qp_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace davil {

void QPProblem::validate() const {
  const int n = dim();
  if (n == 0) throw std::invalid_argument("empty QP");
  if (H.rows() != n || H.cols() != n) throw std::invalid_argument("H has the wrong shape");
  if (G.cols() != n && G.rows() > 0) throw std::invalid_argument("G has the wrong number of columns");
  if (lo.size() != G.rows() || hi.size() != G.rows()) throw std::invalid_argument("bound sizes do not match G");
  if (!H.allFinite() || !g.allFinite() || !G.allFinite()) throw std::invalid_argument("non-finite QP data");
  for (int i = 0; i < G.rows(); ++i)
    if (std::isnan(lo(i)) || std::isnan(hi(i))) throw std::invalid_argument("NaN bound");
  if (has_ball) {
    if (C.cols() != n) throw std::invalid_argument("ball map has the wrong number of columns");
    if (!C.allFinite() || !c.allFinite() || !(radius > 0.0)) throw std::invalid_argument("bad ball constraint");
  }
}

const char* status_name(QPStatus s) {
  switch (s) {
    case QPStatus::optimal: return "optimal";
    case QPStatus::infeasible: return "infeasible";
    case QPStatus::max_iterations: return "max_iterations";
  }
  return "?";
}

namespace {

// Conic form: G x + s = h, s in (nonnegative orthant)^nl x (second-order cone of dim 4).
// Linear rows are scaled to unit norm; the cone block is [r; C x + c] / r.
struct Conic {
  MatX G;
  VecX h;
  int nl = 0;
  bool cone = false;
  std::vector<int> source;  // caller row for each orthant entry
  std::vector<bool> upper;
  VecX scale;
  double kappa = 1.0;

  int rows() const { return static_cast<int>(h.size()); }
  double degree() const { return nl + (cone ? 1 : 0); }
};

Conic to_conic(const QPProblem& p) {
  Conic k;
  const int n = p.dim();
  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> rhs, scl;
  auto add = [&](const Eigen::RowVectorXd& a, double bnd, int src, bool up) {
    const double nrm = a.norm();
    if (nrm == 0.0 && bnd >= 0.0) return;  // always satisfied
    // A zero row with a negative bound is kept: it makes the problem infeasible.
    const double d = nrm == 0.0 ? 1.0 : nrm;
    rows.push_back(a / d);
    rhs.push_back(bnd / d);
    scl.push_back(d);
    k.source.push_back(src);
    k.upper.push_back(up);
  };
  for (int i = 0; i < p.G.rows(); ++i) {
    if (std::isfinite(p.hi(i))) add(p.G.row(i), p.hi(i), i, true);
    if (std::isfinite(p.lo(i))) add(-p.G.row(i), -p.lo(i), i, false);
  }
  k.nl = static_cast<int>(rows.size());
  k.cone = p.has_ball;
  const int m = k.nl + (k.cone ? 4 : 0);
  k.G = MatX::Zero(m, n);
  k.h = VecX::Zero(m);
  k.scale = Eigen::Map<VecX>(scl.data(), static_cast<int>(scl.size()));
  for (int i = 0; i < k.nl; ++i) {
    k.G.row(i) = rows[static_cast<size_t>(i)];
    k.h(i) = rhs[static_cast<size_t>(i)];
  }
  if (k.cone) {
    k.kappa = p.radius;
    k.h(k.nl) = 1.0;
    k.G.bottomRows(3) = -p.C / k.kappa;
    k.h.tail(3) = p.c / k.kappa;
  }
  return k;
}

// Jordan-algebra helpers over the product cone.
struct Cone {
  int nl;
  bool soc;

  VecX identity(int m) const {
    VecX e = VecX::Zero(m);
    e.head(nl).setOnes();
    if (soc) e(nl) = 1.0;
    return e;
  }
  VecX product(const VecX& u, const VecX& v) const {
    VecX w(u.size());
    w.head(nl) = u.head(nl).cwiseProduct(v.head(nl));
    if (soc) {
      w(nl) = u.tail(4).dot(v.tail(4));
      w.tail(3) = u(nl) * v.tail(3) + v(nl) * u.tail(3);
    }
    return w;
  }
  // x with u o x = r
  VecX divide(const VecX& u, const VecX& r) const {
    VecX x(u.size());
    x.head(nl) = r.head(nl).cwiseQuotient(u.head(nl));
    if (soc) {
      const double u0 = u(nl), r0 = r(nl);
      const Vec3 u1 = u.tail(3), r1 = r.tail(3);
      const double det = u0 * u0 - u1.squaredNorm();
      const double x0 = (u0 * r0 - u1.dot(r1)) / det;
      x(nl) = x0;
      x.tail(3) = (r1 - x0 * u1) / u0;
    }
    return x;
  }
  // Smallest "eigenvalue": distance-like measure of interiority.
  double min_eig(const VecX& u) const {
    double v = nl > 0 ? u.head(nl).minCoeff() : std::numeric_limits<double>::infinity();
    if (soc) v = std::min(v, u(nl) - u.tail(3).norm());
    return v;
  }
  // Largest a in [0, 1] keeping u + a du in the cone.
  double max_step(const VecX& u, const VecX& du) const {
    double a = 1.0;
    for (int i = 0; i < nl; ++i)
      if (du(i) < 0.0) a = std::min(a, -u(i) / du(i));
    if (soc) {
      const double u0 = u(nl), d0 = du(nl);
      const Vec3 u1 = u.tail(3), d1 = du.tail(3);
      const double qa = d0 * d0 - d1.squaredNorm(), qb = u0 * d0 - u1.dot(d1), qc = u0 * u0 - u1.squaredNorm();
      // q(a) = qa a^2 + 2 qb a + qc must stay >= 0 with u0 + a d0 >= 0.
      double root = std::numeric_limits<double>::infinity();
      if (std::abs(qa) < 1e-300) {
        if (qb < 0.0) root = -qc / (2.0 * qb);
      } else {
        const double disc = qb * qb - qa * qc;
        if (disc >= 0.0) {
          const double sq = std::sqrt(disc);
          for (double r : {(-qb - sq) / qa, (-qb + sq) / qa})
            if (r > 0.0) root = std::min(root, r);
        }
      }
      if (d0 < 0.0) root = std::min(root, -u0 / d0);
      a = std::min(a, root);
    }
    return std::max(a, 0.0);
  }
};

// sqrt(u0^2 - |u1|^2) without the cancellation of the naive form.
double soc_norm(const Eigen::Vector4d& u) {
  const double n1 = u.tail<3>().norm();
  return std::sqrt((u(0) - n1) * (u(0) + n1));
}

// Nesterov-Todd scaling: W z = W^-1 s = lambda, W symmetric.
struct Scaling {
  VecX d;          // orthant: sqrt(s / z)
  Eigen::Matrix4d W = Eigen::Matrix4d::Identity(), Winv = Eigen::Matrix4d::Identity();
  VecX lambda;
};

Scaling nt_scaling(const Cone& k, const VecX& s, const VecX& z) {
  Scaling sc;
  const int nl = k.nl;
  sc.d = (s.head(nl).cwiseQuotient(z.head(nl))).cwiseSqrt();
  sc.lambda.resize(s.size());
  sc.lambda.head(nl) = (s.head(nl).cwiseProduct(z.head(nl))).cwiseSqrt();
  if (k.soc) {
    const Eigen::Vector4d ss = s.tail(4), zz = z.tail(4);
    const Eigen::Matrix4d J = Eigen::Vector4d(1, -1, -1, -1).asDiagonal();
    const double a = soc_norm(ss), b = soc_norm(zz);
    const Eigen::Vector4d sb = ss / a, zb = zz / b;
    const double gamma = std::sqrt(0.5 * (1.0 + sb.dot(zb)));
    const Eigen::Vector4d w = (sb + J * zb) / (2.0 * gamma);
    const Eigen::Vector4d v = (w + Eigen::Vector4d::UnitX()) / std::sqrt(2.0 * (w(0) + 1.0));
    const double beta = std::sqrt(a / b);
    sc.W = beta * (2.0 * v * v.transpose() - J);
    sc.Winv = (2.0 * J * v * v.transpose() * J - J) / beta;
    sc.lambda.tail(4) = sc.W * zz;
  }
  return sc;
}

VecX apply_W(const Cone& k, const Scaling& sc, const VecX& v) {
  VecX out(v.size());
  out.head(k.nl) = sc.d.cwiseProduct(v.head(k.nl));
  if (k.soc) out.tail(4) = sc.W * Eigen::Vector4d(v.tail(4));
  return out;
}

VecX apply_Winv(const Cone& k, const Scaling& sc, const VecX& v) {
  VecX out(v.size());
  out.head(k.nl) = v.head(k.nl).cwiseQuotient(sc.d);
  if (k.soc) out.tail(4) = sc.Winv * Eigen::Vector4d(v.tail(4));
  return out;
}

}  // namespace

QPSolution solve_qp(const QPProblem& p, const QPSettings& st, const VecX* warm) {
  p.validate();
  const int n = p.dim();
  const Conic cp = to_conic(p);
  const Cone k{cp.nl, cp.cone};
  const int m = cp.rows();
  const double deg = cp.degree();

  QPSolution sol;
  VecX x = (warm && warm->size() == n && warm->allFinite()) ? *warm : VecX::Zero(n);
  VecX s = cp.h - cp.G * x;
  const VecX e = k.identity(m);
  if (m > 0) {
    const double me = k.min_eig(s);
    if (me < 1.0) s += (1.0 - me) * e;
  }
  VecX z = e;
  const double gscale = std::max(1.0, p.g.cwiseAbs().maxCoeff());

  bool done = false, infeasible = false;
  // Near the optimum the scaling gets ill-conditioned and residuals can creep back up;
  // remember the best iterate seen.
  struct Best {
    VecX x, z;
    double merit = std::numeric_limits<double>::infinity(), rp = 0, rd = 0, mu = 0;
  } best;
  int stall = 0;
  auto converged = [&](double tol) {
    return sol.primal_residual <= tol && sol.dual_residual <= tol && sol.mu <= tol;
  };
  for (int it = 0; it < st.max_iterations; ++it) {
    sol.iterations = it + 1;
    const VecX rx = p.H * x + p.g + cp.G.transpose() * z;
    const VecX rz = cp.G * x + s - cp.h;
    const double mu = m > 0 ? s.dot(z) / deg : 0.0;
    sol.primal_residual = m > 0 ? rz.cwiseAbs().maxCoeff() : 0.0;
    sol.dual_residual = rx.cwiseAbs().maxCoeff() / gscale;
    sol.mu = mu;
    if (converged(st.tolerance)) {
      done = true;
      break;
    }
    const double merit = std::max({sol.primal_residual, sol.dual_residual, mu});
    if (merit < best.merit) {
      if (merit < 0.5 * best.merit) stall = 0;
      best = {x, z, merit, sol.primal_residual, sol.dual_residual, mu};
    } else if (++stall >= 5 && best.merit <= st.acceptable) {
      break;
    }
    if (m > 0) {
      // Farkas direction: G'z ~ 0 with h'z < 0 certifies an empty feasible set.
      const double hz = cp.h.dot(z);
      if (hz < 0.0 && (cp.G.transpose() * z).norm() <= 1e-8 * -hz) {
        infeasible = true;
        break;
      }
      if (z.cwiseAbs().maxCoeff() > st.divergence) {
        infeasible = true;
        break;
      }
    }

    if (m == 0) {
      x = p.H.ldlt().solve(-p.g);
      continue;
    }
    const Scaling sc = nt_scaling(k, s, z);
    if (!sc.lambda.allFinite()) break;
    // G' W^-2 G
    MatX WiG(m, n);
    for (int j = 0; j < n; ++j) WiG.col(j) = apply_Winv(k, sc, cp.G.col(j));
    MatX KKT = p.H + WiG.transpose() * WiG;
    Eigen::LLT<MatX> llt(KKT);
    if (llt.info() != Eigen::Success) {
      KKT.diagonal().array() += 1e-12 * (1.0 + KKT.diagonal().cwiseAbs().maxCoeff());
      llt.compute(KKT);
      if (llt.info() != Eigen::Success) break;
    }
    // Solve with lambda o (W^-1 ds + W dz) = rs.
    auto direction = [&](const VecX& rs, VecX& dx, VecX& ds, VecX& dz) {
      const VecX t = k.divide(sc.lambda, rs);  // scaled ds + scaled dz
      // G dx + ds = -rz with ds = W (t - W dz) gives W dz = W^-1 (G dx + rz) + t.
      const VecX u = apply_Winv(k, sc, rz) + t;
      dx = llt.solve(-rx - WiG.transpose() * u);
      const VecX dzt = WiG * dx + u;  // W dz
      dz = apply_Winv(k, sc, dzt);
      ds = apply_W(k, sc, t - dzt);
    };

    VecX dx, ds, dz;
    const VecX ll = k.product(sc.lambda, sc.lambda);
    direction(-ll, dx, ds, dz);
    double a = std::min(k.max_step(s, ds), k.max_step(z, dz));
    const double mu_aff = (s + a * ds).dot(z + a * dz) / deg;
    const double sigma = std::pow(std::clamp(mu_aff / std::max(mu, 1e-300), 0.0, 1.0), 3);

    const VecX dsa = apply_Winv(k, sc, ds), dza = apply_W(k, sc, dz);
    direction(-ll - k.product(dsa, dza) + sigma * mu * e, dx, ds, dz);
    a = std::min(1.0, 0.99 * std::min(k.max_step(s, ds), k.max_step(z, dz)));
    x += a * dx;
    s += a * ds;
    z += a * dz;
  }

  if (!done && !infeasible && best.merit < std::numeric_limits<double>::infinity()) {
    x = best.x;
    z = best.z;
    sol.primal_residual = best.rp;
    sol.dual_residual = best.rd;
    sol.mu = best.mu;
    // Iterates that stalled in the last digits still count when they meet the looser bar.
    if (converged(st.acceptable)) done = true;
  }
  sol.x = x;
  double violation = 0.0;
  if (cp.nl > 0) violation = (cp.G.topRows(cp.nl) * x - cp.h.head(cp.nl)).maxCoeff();
  if (k.soc) violation = std::max(violation, (p.C * x + p.c).norm() / cp.kappa - 1.0);
  if (done)
    sol.status = QPStatus::optimal;
  else if (infeasible || violation > 1e-6)
    sol.status = QPStatus::infeasible;
  else
    sol.status = QPStatus::max_iterations;

  sol.lambda_lo = VecX::Zero(p.G.rows());
  sol.lambda_hi = VecX::Zero(p.G.rows());
  for (int i = 0; i < cp.nl; ++i) {
    const double v = z(i) / cp.scale(i);
    (cp.upper[static_cast<size_t>(i)] ? sol.lambda_hi : sol.lambda_lo)(cp.source[static_cast<size_t>(i)]) += v;
  }
  if (k.soc) {
    sol.lambda_ball = z(cp.nl) / cp.kappa;
    sol.ball_multiplier = -z.tail<3>() / cp.kappa;
  }
  return sol;
}

KKTReport kkt_certificate(const QPProblem& p, const QPSolution& sol) {
  KKTReport r;
  const VecX& x = sol.x;
  VecX grad = p.H * x + p.g;
  if (p.G.rows() > 0) {
    const VecX Gx = p.G * x;
    grad += p.G.transpose() * (sol.lambda_hi - sol.lambda_lo);
    for (int i = 0; i < p.G.rows(); ++i) {
      if (std::isfinite(p.hi(i))) {
        r.primal = std::max(r.primal, Gx(i) - p.hi(i));
        r.complementarity = std::max(r.complementarity, std::abs(sol.lambda_hi(i) * (p.hi(i) - Gx(i))));
      }
      if (std::isfinite(p.lo(i))) {
        r.primal = std::max(r.primal, p.lo(i) - Gx(i));
        r.complementarity = std::max(r.complementarity, std::abs(sol.lambda_lo(i) * (Gx(i) - p.lo(i))));
      }
      r.dual_sign = std::max({r.dual_sign, -sol.lambda_hi(i), -sol.lambda_lo(i)});
    }
  }
  if (p.has_ball) {
    const Vec3 y = p.C * x + p.c;
    const double ny = y.norm();
    r.primal = std::max(r.primal, ny - p.radius);
    const Vec3& u = sol.ball_multiplier;
    grad += p.C.transpose() * u;
    r.complementarity = std::max(r.complementarity, std::abs(sol.lambda_ball * p.radius - u.dot(y)));
    r.dual_sign = std::max(r.dual_sign, u.norm() - sol.lambda_ball);
  }
  r.stationarity = grad.cwiseAbs().maxCoeff();
  return r;
}

std::string KKTReport::str() const {
  std::ostringstream o;
  o << "primal " << primal << " stationarity " << stationarity << " complementarity " << complementarity;
  return o.str();
}

}  // namespace davil
